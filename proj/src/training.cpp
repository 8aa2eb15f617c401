#include "deeptransport/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "deeptransport/checkpoint.hpp"
#include "deeptransport/errors.hpp"

namespace deeptransport {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (workers == 0) throw ConfigError("workers must be positive");
  if (shard_size == 0) throw ConfigError("shard_size must be positive");
  if (patience == 0) throw ConfigError("patience must be >= 1");
  if (eval_every == 0) throw ConfigError("eval_every must be positive");
  if (max_epochs == 0 && max_steps == 0) throw ConfigError("one of max_epochs, max_steps must be positive");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.epsilon > 0.0))
    throw ConfigError("invalid Adam hyperparameters");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"workers", c.workers},
                     {"shard_size", c.shard_size},
                     {"lr", c.adam.lr},
                     {"beta1", c.adam.beta1},
                     {"beta2", c.adam.beta2},
                     {"epsilon", c.adam.epsilon},
                     {"max_epochs", c.max_epochs},
                     {"max_steps", c.max_steps},
                     {"patience", c.patience},
                     {"eval_every", c.eval_every},
                     {"validation_fraction", c.validation_fraction},
                     {"val_max_samples", c.val_max_samples},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.workers = j.value("workers", d.workers);
  c.shard_size = j.value("shard_size", d.shard_size);
  c.adam.lr = j.value("lr", d.adam.lr);
  c.adam.beta1 = j.value("beta1", d.adam.beta1);
  c.adam.beta2 = j.value("beta2", d.adam.beta2);
  c.adam.epsilon = j.value("epsilon", d.adam.epsilon);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.patience = j.value("patience", d.patience);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.val_max_samples = j.value("val_max_samples", d.val_max_samples);
  c.seed = j.value("seed", d.seed);
}

nlohmann::json to_json(const TrainLogRecord& r, bool with_wall_time) {
  nlohmann::json j{{"step", r.step}, {"train_loss", r.train_loss}};
  j["val_loss"] = r.val_loss ? nlohmann::json(*r.val_loss) : nlohmann::json(nullptr);
  if (with_wall_time) j["wall_time"] = r.wall_time;
  return j;
}

// --------------------------------------------------------------- parallel

void parallel_shards(std::size_t n, std::size_t shard_size, std::size_t workers,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t shards = (n + shard_size - 1) / shard_size;
  const std::size_t threads = std::min(workers, shards);
  auto run = [&](std::size_t s) { fn(s, s * shard_size, std::min(n, (s + 1) * shard_size)); };
  if (threads <= 1) {
    for (std::size_t s = 0; s < shards; ++s) run(s);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t s = w; s < shards; s += threads) run(s);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double batch_gradient(const ParamSet& params, std::span<const std::size_t> indices, const SampleLossFn& loss_fn,
                      std::size_t shard_size, std::size_t workers, Gradients& out) {
  const std::size_t shards = (indices.size() + shard_size - 1) / shard_size;
  std::vector<Gradients> grads(shards);
  std::vector<double> losses(shards, 0.0);
  parallel_shards(indices.size(), shard_size, workers, [&](std::size_t s, std::size_t begin, std::size_t end) {
    Gradients g(params);
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      Tape tape;
      const Var l = loss_fn(tape, indices[i]);
      total += tape.value(l)[0];
      tape.backward(l);
      tape.accumulate_param_grads(g);
    }
    grads[s] = std::move(g);
    losses[s] = total;
  });
  out = Gradients(params);
  double loss = 0.0;
  for (std::size_t s = 0; s < shards; ++s) {
    out.add(grads[s]);
    loss += losses[s];
  }
  return loss;
}

namespace {

double mean_loss(std::size_t n, const SampleLossFn& loss_fn, std::size_t shard_size, std::size_t workers) {
  const std::size_t shards = (n + shard_size - 1) / shard_size;
  std::vector<double> losses(shards, 0.0);
  parallel_shards(n, shard_size, workers, [&](std::size_t s, std::size_t begin, std::size_t end) {
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      Tape tape;
      total += tape.value(loss_fn(tape, i))[0];
    }
    losses[s] = total;
  });
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(n);
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng() % i]);
  return perm;
}

}  // namespace

TrainResult train_generic(ParamSet& params, AdamState& adam, TrainProgress progress, std::size_t n_train,
                          const SampleLossFn& train_loss, std::size_t n_val, const SampleLossFn& val_loss,
                          const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (n_train == 0) throw DataError("training set is empty");
  const auto started = std::chrono::steady_clock::now();
  const std::size_t batch = std::min(config.batch_size, n_train);
  const std::size_t steps_per_epoch = (n_train + batch - 1) / batch;
  std::size_t last_step = config.max_steps ? config.max_steps : config.max_epochs * steps_per_epoch;
  if (config.max_steps && config.max_epochs) last_step = std::min(last_step, config.max_epochs * steps_per_epoch);
  const std::uint64_t batch_seed = derive_seed(config.seed, 0xba7c4);

  TrainResult result;
  std::optional<ParamSet> best;
  if (n_val > 0 && std::isfinite(progress.best_val) && progress.best_step == progress.step) best = params;

  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm;
  Gradients grads;
  while (progress.step < last_step) {
    const std::size_t epoch = progress.step / steps_per_epoch;
    const std::size_t pos = progress.step % steps_per_epoch;
    if (epoch != perm_epoch) {
      perm = epoch_permutation(n_train, batch_seed, epoch);
      perm_epoch = epoch;
    }
    const std::size_t begin = pos * batch;
    const std::size_t end = std::min(n_train, begin + batch);
    const std::span<const std::size_t> indices(perm.data() + begin, end - begin);

    const double loss_sum = batch_gradient(params, indices, train_loss, config.shard_size, config.workers, grads);
    const double scale = 1.0 / static_cast<double>(indices.size());
    grads.scale(scale);
    adam.step(params, grads);
    ++progress.step;

    TrainLogRecord rec;
    rec.step = progress.step;
    rec.train_loss = loss_sum * scale;
    if (!std::isfinite(rec.train_loss)) throw NumericalError("non-finite training loss at step " + std::to_string(rec.step));

    bool stop = false;
    if (n_val > 0 && (progress.step % config.eval_every == 0 || progress.step == last_step)) {
      rec.val_loss = mean_loss(n_val, val_loss, config.shard_size, config.workers);
      if (*rec.val_loss < progress.best_val) {
        progress.best_val = *rec.val_loss;
        progress.best_step = progress.step;
        progress.bad_evals = 0;
        best = params;
        if (hooks.on_improve) hooks.on_improve(params, adam, progress);
      } else if (++progress.bad_evals >= config.patience) {
        stop = true;
      }
    }
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (hooks.on_log) hooks.on_log(rec);
    result.log.push_back(rec);
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  if (best) params = std::move(*best);
  result.progress = progress;
  return result;
}

// ------------------------------------------------------------- projection

void to_json(nlohmann::json& j, const ProjectionThresholds& t) { j = nlohmann::json::array({t.q1, t.q2, t.q3}); }

void from_json(const nlohmann::json& j, ProjectionThresholds& t) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("projection thresholds must be a 3-element array");
  t.q1 = j[0];
  t.q2 = j[1];
  t.q3 = j[2];
  if (!(0.0 <= t.q1 && t.q1 <= t.q2 && t.q2 <= t.q3 && t.q3 <= 1.0))
    throw ConfigError("projection thresholds must satisfy 0 <= q1 <= q2 <= q3 <= 1");
}

ProjectionThresholds fit_projection(std::span<const int> labels) {
  const auto q = class_distribution(labels);
  return {q[0], q[1], q[2]};
}

std::vector<int> project_labels(std::span<const double> predictions, const ProjectionThresholds& t) {
  const std::size_t n = predictions.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return predictions[a] < predictions[b]; });
  const double dn = static_cast<double>(n);
  const std::size_t c1 = static_cast<std::size_t>(std::floor(t.q1 * dn));
  const std::size_t c2 = std::max(c1, static_cast<std::size_t>(std::floor(t.q2 * dn)));
  const std::size_t c3 = std::max(c2, static_cast<std::size_t>(std::floor(t.q3 * dn)));
  std::vector<int> out(n);
  for (std::size_t rank = 0; rank < n; ++rank) out[order[rank]] = rank < c1 ? 1 : rank < c2 ? 2 : rank < c3 ? 3 : 4;
  return out;
}

// ----------------------------------------------------------------- splits

std::pair<SampleSet, SampleSet> holdout_split(const SampleSet& samples, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("holdout fraction must lie in [0, 1)");
  if (fraction == 0.0 || samples.size() == 0) return {samples, samples.subset({})};
  std::size_t lo = samples.ref(0).time, hi = lo;
  for (const auto& r : samples.refs()) {
    lo = std::min(lo, r.time);
    hi = std::max(hi, r.time);
  }
  const std::size_t span = hi - lo + 1;
  const std::size_t cut = lo + static_cast<std::size_t>(std::floor((1.0 - fraction) * static_cast<double>(span)));
  const std::size_t hmax = samples.config().max_horizon();
  std::vector<SampleRef> train, val;
  for (const auto& r : samples.refs()) {
    if (r.time >= cut) val.push_back(r);
    else if (r.time + hmax < cut) train.push_back(r);
  }
  return {samples.subset(std::move(train)), samples.subset(std::move(val))};
}

SampleSet stride_subset(const SampleSet& samples, std::size_t max_samples) {
  if (max_samples == 0 || samples.size() <= max_samples) return samples;
  std::vector<SampleRef> refs;
  refs.reserve(max_samples);
  for (std::size_t k = 0; k < max_samples; ++k) refs.push_back(samples.ref(k * samples.size() / max_samples));
  return samples.subset(std::move(refs));
}

// --------------------------------------------------------------- training

namespace {

nlohmann::json progress_json(const TrainProgress& p) {
  return {{"step", p.step},
          {"best_val", std::isfinite(p.best_val) ? nlohmann::json(p.best_val) : nlohmann::json(nullptr)},
          {"best_step", p.best_step},
          {"bad_evals", p.bad_evals}};
}

TrainProgress progress_from_json(const nlohmann::json& j) {
  TrainProgress p;
  if (j.is_null()) return p;
  p.step = j.value("step", std::size_t{0});
  if (j.contains("best_val") && !j["best_val"].is_null()) p.best_val = j["best_val"];
  p.best_step = j.value("best_step", std::size_t{0});
  p.bad_evals = j.value("bad_evals", std::size_t{0});
  return p;
}

TrainOutcome run_training(const SampleSet& samples, ModelParams model, ProjectionThresholds thresholds,
                          AdamState adam, TrainProgress progress, const TrainConfig& config,
                          const TrainRunOptions& options) {
  auto [train_set, val_full] = holdout_split(samples, config.validation_fraction);
  const SampleSet val_set = stride_subset(val_full, config.val_max_samples);
  if (train_set.size() == 0) throw DataError("no training samples before the validation cut");

  auto make_loss = [&model](const SampleSet& set) -> SampleLossFn {
    return [&model, &set](Tape& tape, std::size_t i) {
      const Sample s = set.build(i);
      const ForwardTrace tr = forward(tape, model, s);
      return loss(tape, tr.predictions, s.labels, s.label_mask);
    };
  };

  nlohmann::json extra = options.extra_manifest;
  extra["train_config"] = config;
  TrainHooks hooks;
  if (options.log) {
    hooks.on_log = [&](const TrainLogRecord& r) { *options.log << to_json(r, options.log_wall_time).dump() << '\n'; };
  }
  if (options.checkpoint) {
    hooks.on_improve = [&](const ParamSet& params, const AdamState& state, const TrainProgress& p) {
      save_model(*options.checkpoint, ModelParams::from_params(model.config, params), thresholds, state, p, extra);
    };
  }

  TrainOutcome out;
  out.result = train_generic(model.params, adam, progress, train_set.size(), make_loss(train_set), val_set.size(),
                             make_loss(val_set), config, hooks);
  if (options.log) options.log->flush();
  if (options.checkpoint && val_set.size() == 0)
    save_model(*options.checkpoint, model, thresholds, adam, out.result.progress, extra);
  out.model = std::move(model);
  out.thresholds = thresholds;
  return out;
}

}  // namespace

TrainOutcome train(const SampleSet& samples, const ModelConfig& model_config, const TrainConfig& config,
                   const TrainRunOptions& options) {
  config.validate();
  model_config.validate();
  if (samples.size() == 0) throw DataError("training set is empty");
  const std::vector<int> labels = samples.all_labels();
  const ProjectionThresholds thresholds = fit_projection(labels);

  ModelParams model = ModelParams::initialize(model_config, derive_seed(config.seed, 0x1417));
  double label_sum = 0.0;
  std::size_t released = 0;
  for (int c : labels)
    if (c != 0) {
      label_sum += c;
      ++released;
    }
  for (std::size_t k : model.layout.head_b) model.params.value(k).fill(label_sum / static_cast<double>(released));

  AdamState adam(model.params, config.adam);
  return run_training(samples, std::move(model), thresholds, std::move(adam), {}, config, options);
}

TrainOutcome resume(const SampleSet& samples, const std::filesystem::path& checkpoint, const TrainConfig& config,
                    const TrainRunOptions& options) {
  LoadedModel loaded = load_model(checkpoint);
  if (!loaded.adam) throw DataError("checkpoint carries no optimizer state; cannot resume");
  return run_training(samples, std::move(loaded.model), loaded.thresholds, std::move(*loaded.adam), loaded.progress,
                      config, options);
}

std::vector<double> predict_all(const ModelParams& model, const SampleSet& samples, std::size_t workers) {
  const std::size_t h = model.config.horizons.size();
  std::vector<double> out(samples.size() * h);
  parallel_shards(samples.size(), 64, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ForwardOutput f = forward(model, samples.build(i));
      std::copy(f.predictions.begin(), f.predictions.end(), out.begin() + static_cast<std::ptrdiff_t>(i * h));
    }
  });
  return out;
}

void save_model(const std::filesystem::path& path, const ModelParams& model, const ProjectionThresholds& thresholds,
                const std::optional<AdamState>& adam, const TrainProgress& progress, const nlohmann::json& extra) {
  Checkpoint ckpt;
  ckpt.manifest = extra.is_object() ? extra : nlohmann::json::object();
  ckpt.manifest["kind"] = "deeptransport";
  ckpt.manifest["model_config"] = model.config;
  ckpt.manifest["config_hash"] = config_hash(ckpt.manifest["model_config"]);
  ckpt.manifest["thresholds"] = thresholds;
  ckpt.manifest["progress"] = progress_json(progress);
  ckpt.params = model.params;
  ckpt.adam = adam;
  save_checkpoint(path, ckpt);
}

LoadedModel load_model(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("kind", std::string()) != "deeptransport")
    throw DataError(path.string() + ": not a DeepTransport checkpoint");
  LoadedModel out;
  const ModelConfig config = ckpt.manifest.at("model_config").get<ModelConfig>();
  if (ckpt.manifest.value("config_hash", std::uint64_t{0}) != config_hash(ckpt.manifest.at("model_config")))
    throw DataError(path.string() + ": model config hash mismatch");
  out.model = ModelParams::from_params(config, std::move(ckpt.params));
  out.thresholds = ckpt.manifest.at("thresholds").get<ProjectionThresholds>();
  out.adam = std::move(ckpt.adam);
  out.progress = progress_from_json(ckpt.manifest.value("progress", nlohmann::json()));
  out.manifest = std::move(ckpt.manifest);
  return out;
}

}  // namespace deeptransport
