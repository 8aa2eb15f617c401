#include "deeptransport/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "deeptransport/checkpoint.hpp"
#include "deeptransport/csv.hpp"
#include "deeptransport/errors.hpp"
#include "deeptransport/evaluation.hpp"

namespace deeptransport::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string time_format_name(TimeFormat f) { return f == TimeFormat::iso8601 ? "iso8601" : "step_index"; }

TimeFormat parse_time_format(const std::string& s) {
  if (s == "iso8601") return TimeFormat::iso8601;
  if (s == "step_index") return TimeFormat::step_index;
  throw ConfigError("data.time_format must be 'iso8601' or 'step_index', got '" + s + "'");
}

std::string time_label(const ConditionStore& store, std::size_t t, TimeFormat format) {
  return format == TimeFormat::iso8601 ? format_iso8601(store.timestamp(t)) : std::to_string(t);
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

fs::path prepare_output(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.output_dir, ec);
  if (ec) throw DataError("cannot create output directory " + c.output_dir.string() + ": " + ec.message());
  return c.output_dir;
}

TrainConfig seeded_train(const RunConfig& c) {
  TrainConfig t = c.train;
  t.seed = c.require_seed();
  return t;
}

std::vector<int> released_labels(const SampleSet& samples) {
  std::vector<int> out;
  for (int c : samples.all_labels())
    if (c != 0) out.push_back(c);
  return out;
}

/// Predictions of a stored model over the test split of `config`'s data.
struct CheckpointPredictions {
  std::string name;
  std::vector<double> predictions;
  ProjectionThresholds thresholds;
};

/// Adjusts the sample layout to what the checkpoint was trained on.
RunConfig align_with_checkpoint(RunConfig config, const nlohmann::json& manifest) {
  const std::string kind = manifest.value("kind", std::string());
  if (kind == "deeptransport") {
    config.model = manifest.at("model_config").get<ModelConfig>();
  } else if (kind == "fnn" || kind == "saes") {
    const auto& c = manifest.at("config");
    config.model.history = c.at("history").get<std::size_t>();
    config.model.horizons = c.at("horizons").get<std::vector<std::size_t>>();
  } else {
    throw DataError(config.checkpoint.string() + ": unknown checkpoint kind '" + kind + "'");
  }
  return config;
}

CheckpointPredictions predict_checkpoint(const fs::path& path, const SampleSet& test, std::size_t workers) {
  const std::string kind = load_checkpoint(path).manifest.value("kind", std::string());
  CheckpointPredictions out;
  out.name = kind;
  if (kind == "deeptransport") {
    const LoadedModel m = load_model(path);
    out.name = "deeptransport-r" + std::to_string(m.model.config.radius) + "p" + std::to_string(m.model.config.history);
    out.predictions = predict_all(m.model, test, workers);
    out.thresholds = m.thresholds;
  } else if (kind == "fnn") {
    auto [m, th] = load_fnn(path);
    out.name = "fnn-p" + std::to_string(m.config.history);
    out.predictions = fnn_predict_all(m, test, workers);
    out.thresholds = th;
  } else if (kind == "saes") {
    auto [m, th] = load_saes(path);
    out.name = "saes";
    out.predictions = saes_predict_all(m, test, workers);
    out.thresholds = th;
  } else {
    throw DataError(path.string() + ": unknown checkpoint kind '" + kind + "'");
  }
  return out;
}

std::string rmse_csv(const std::vector<std::pair<std::string, std::vector<std::vector<RmseBin>>>>& tables,
                     const std::vector<std::size_t>& horizons) {
  std::ostringstream out;
  out << "model,horizon,bin_start_seconds,count,rmse\n";
  for (const auto& [name, table] : tables)
    for (std::size_t k = 0; k < table.size(); ++k)
      for (const auto& b : table[k])
        out << name << ',' << horizons[k] << ',' << b.start_seconds << ',' << b.count << ',' << fmt(b.rmse) << '\n';
  return out.str();
}

void set_path(nlohmann::json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &root;
  std::size_t begin = 0;
  while (true) {
    const auto dot = key.find('.', begin);
    const std::string part = key.substr(begin, dot == std::string::npos ? std::string::npos : dot - begin);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    begin = dot + 1;
  }
}

}  // namespace

// ---------------------------------------------------------------- config

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("a seed is required (config key 'seed' or --seed)");
  return *seed;
}

void RunConfig::validate() const {
  if (!(split > 0.0 && split < 1.0)) throw ConfigError("split must lie in (0, 1)");
  static const std::vector<std::string> kinds{"deeptransport", "rw", "arima", "fnn", "saes"};
  if (std::find(kinds.begin(), kinds.end(), model_kind) == kinds.end())
    throw ConfigError("model_kind must be one of deeptransport, rw, arima, fnn, saes");
  if (nmi_max_radius == 0) throw ConfigError("nmi.max_radius must be positive");
  if (rmse_bin_seconds <= 0) throw ConfigError("eval.rmse_bin_seconds must be positive");
  model.validate();
  train.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"seed", c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr)},
       {"data",
        {{"edges", c.data.edges.string()},
         {"attributes", c.data.attributes.string()},
         {"conditions", c.data.conditions.string()},
         {"time_format", time_format_name(c.data.time_format)},
         {"strict", c.data.strict}}},
       {"output_dir", c.output_dir.string()},
       {"checkpoint", c.checkpoint.string()},
       {"resume", c.resume},
       {"split", c.split},
       {"model_kind", c.model_kind},
       {"model", c.model},
       {"train", c.train},
       {"fnn", c.fnn},
       {"saes", c.saes},
       {"arima",
        {{"max_p", c.arima.grid.max_p},
         {"max_d", c.arima.grid.max_d},
         {"max_q", c.arima.grid.max_q},
         {"fit_length", c.arima.fit_length},
         {"filter_length", c.arima.filter_length}}},
       {"synth", c.synth},
       {"nmi", {{"max_radius", c.nmi_max_radius}, {"upstream", c.nmi.upstream}, {"downstream", c.nmi.downstream}}},
       {"attention", {{"max_samples", c.attention_max_samples}}},
       {"eval", {{"rmse_bin_seconds", c.rmse_bin_seconds}, {"predictions", nlohmann::json::array()}}},
       {"log_wall_time", c.log_wall_time}};
  for (const auto& p : c.eval_predictions) j["eval"]["predictions"].push_back(p.string());
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::vector<std::string> known{"seed",  "data", "output_dir", "checkpoint", "resume", "split",
                                              "model_kind", "model", "train", "fnn", "saes", "arima",
                                              "synth", "nmi", "attention", "eval", "log_wall_time"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");

  RunConfig d;
  c = d;
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("data")) {
    const auto& s = j["data"];
    c.data.edges = s.value("edges", std::string());
    c.data.attributes = s.value("attributes", std::string());
    c.data.conditions = s.value("conditions", std::string());
    c.data.time_format = parse_time_format(s.value("time_format", std::string("step_index")));
    c.data.strict = s.value("strict", true);
  }
  c.output_dir = j.value("output_dir", d.output_dir.string());
  c.checkpoint = j.value("checkpoint", std::string());
  c.resume = j.value("resume", false);
  c.split = j.value("split", d.split);
  c.model_kind = j.value("model_kind", d.model_kind);
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("fnn")) c.fnn = j["fnn"].get<FnnConfig>();
  if (j.contains("saes")) c.saes = j["saes"].get<SaesConfig>();
  if (j.contains("arima")) {
    const auto& s = j["arima"];
    c.arima.grid.max_p = s.value("max_p", d.arima.grid.max_p);
    c.arima.grid.max_d = s.value("max_d", d.arima.grid.max_d);
    c.arima.grid.max_q = s.value("max_q", d.arima.grid.max_q);
    c.arima.fit_length = s.value("fit_length", d.arima.fit_length);
    c.arima.filter_length = s.value("filter_length", d.arima.filter_length);
  }
  if (j.contains("synth")) c.synth = j["synth"].get<SynthConfig>();
  if (j.contains("nmi")) {
    const auto& s = j["nmi"];
    c.nmi_max_radius = s.value("max_radius", d.nmi_max_radius);
    c.nmi.upstream = s.value("upstream", true);
    c.nmi.downstream = s.value("downstream", true);
  }
  if (j.contains("attention")) c.attention_max_samples = j["attention"].value("max_samples", d.attention_max_samples);
  if (j.contains("eval")) {
    const auto& s = j["eval"];
    c.rmse_bin_seconds = s.value("rmse_bin_seconds", d.rmse_bin_seconds);
    for (const auto& p : s.value("predictions", std::vector<std::string>{})) c.eval_predictions.emplace_back(p);
  }
  c.log_wall_time = j.value("log_wall_time", true);
}

RunConfig load_run_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  nlohmann::json root = nlohmann::json::object();
  if (file) {
    std::ifstream in(*file);
    if (!in) throw ConfigError("cannot open config file " + file->string());
    root = nlohmann::json::parse(in, nullptr, false, true);
    if (root.is_discarded()) throw ConfigError(file->string() + ": invalid JSON");
  }
  for (const auto& o : overrides) set_path(root, o);
  try {
    RunConfig c = root.get<RunConfig>();
    c.arima.workers = c.train.workers;
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// ------------------------------------------------------------------ data

LoadedData load_data(const DataPaths& paths) {
  if (paths.edges.empty() || paths.conditions.empty())
    throw ConfigError("data.edges and data.conditions are required");
  for (const auto& p : {paths.edges, paths.conditions, paths.attributes})
    if (!p.empty() && !fs::exists(p)) throw DataError("input file not found: " + p.string());
  LoadedData d;
  d.graph = read_graph_csv(paths.edges, paths.attributes);
  d.store = load_conditions(paths.conditions, d.graph, paths.time_format, paths.strict);
  return d;
}

Split split_samples(const LoadedData& data, const RunConfig& config) {
  const SampleSet all = make_samples(data.store, data.graph, config.model.sample_config());
  auto [train, test] = chrono_split(all, config.split);
  if (train.size() == 0 || test.size() == 0) throw DataError("chronological split leaves an empty side");
  return {std::move(train), std::move(test)};
}

void write_predictions_csv(const fs::path& path, const std::string& model, std::span<const double> predictions,
                           const SampleSet& samples, TimeFormat format) {
  const auto& horizons = samples.config().horizons;
  const std::size_t hc = horizons.size();
  if (predictions.size() != samples.size() * hc) throw ShapeError("prediction count does not match samples");
  std::ostringstream out;
  out << "model,vertex,time,horizon,prediction,label\n";
  const auto& store = samples.store();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRef r = samples.ref(i);
    const std::string head = model + ',' + store.vertex_ids()[r.vertex] + ',' + time_label(store, r.time, format) + ',';
    for (std::size_t k = 0; k < hc; ++k)
      out << head << horizons[k] << ',' << fmt(predictions[i * hc + k]) << ','
          << int(store.at(r.vertex, r.time + horizons[k])) << '\n';
  }
  write_file(path, out.str());
}

std::pair<std::string, std::vector<double>> read_predictions_csv(const fs::path& path, const SampleSet& samples,
                                                                 TimeFormat format) {
  const csv::Table table = csv::read(path);
  const std::size_t c_model = table.column("model"), c_vertex = table.column("vertex"), c_time = table.column("time"),
                    c_h = table.column("horizon"), c_pred = table.column("prediction");
  const auto& horizons = samples.config().horizons;
  const std::size_t hc = horizons.size();
  const auto& store = samples.store();
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < samples.size(); ++i)
    index[{store.vertex_ids()[samples.ref(i).vertex], time_label(store, samples.ref(i).time, format)}] = i;

  std::string model;
  std::vector<double> out(samples.size() * hc, 0.0);
  std::vector<std::uint8_t> seen(out.size(), 0);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = path.string() + ":" + std::to_string(table.lines[r]);
    if (model.empty()) model = row[c_model];
    if (row[c_model] != model) throw DataError(where + ": more than one model in a prediction file");
    const auto it = index.find({row[c_vertex], row[c_time]});
    if (it == index.end()) continue;  // outside this test split
    std::size_t h = 0;
    double value = 0.0;
    try {
      h = std::stoul(row[c_h]);
      value = std::stod(row[c_pred]);
    } catch (const std::exception&) {
      throw DataError(where + ": malformed horizon or prediction");
    }
    const auto k = std::find(horizons.begin(), horizons.end(), h);
    if (k == horizons.end()) throw DataError(where + ": horizon " + std::to_string(h) + " not configured");
    const std::size_t slot = it->second * hc + static_cast<std::size_t>(k - horizons.begin());
    out[slot] = value;
    seen[slot] = 1;
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw DataError(path.string() + ": predictions do not cover every test sample");
  return {model, std::move(out)};
}

// -------------------------------------------------------------- commands

nlohmann::json cmd_synth(const RunConfig& config) {
  SynthConfig sc = config.synth;
  sc.seed = config.require_seed();
  const fs::path dir = prepare_output(config);
  const auto [graph, store] = synth_generate(sc);
  write_graph_csv(graph, dir / "edges.csv", dir / "attributes.csv");
  write_conditions(store, dir / "conditions.csv", config.data.time_format);
  const auto q = class_distribution(store);
  return {{"vertices", graph.vertex_count()},
          {"edges", graph.edge_count()},
          {"steps", store.steps()},
          {"cumulative_class_distribution", q},
          {"files", {(dir / "edges.csv").string(), (dir / "attributes.csv").string(), (dir / "conditions.csv").string()}}};
}

nlohmann::json cmd_train(const RunConfig& config) {
  const TrainConfig tc = seeded_train(config);
  const LoadedData data = load_data(config.data);
  const fs::path dir = prepare_output(config);
  const RunConfig aligned = config.resume ? align_with_checkpoint(config, load_checkpoint(config.checkpoint).manifest) : config;
  const Split split = split_samples(data, aligned);

  std::ofstream log(dir / "train_log.jsonl", config.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw DataError("cannot write " + (dir / "train_log.jsonl").string());
  TrainRunOptions options;
  options.log = &log;
  options.log_wall_time = config.log_wall_time;
  options.checkpoint = dir / "model.ckpt";
  options.extra_manifest = {{"seed", tc.seed}, {"split", config.split}};

  const TrainOutcome outcome = config.resume ? resume(split.train, config.checkpoint, tc, options)
                                             : train(split.train, config.model, tc, options);
  write_file(dir / "thresholds.json", nlohmann::json(outcome.thresholds).dump(2) + "\n");
  const auto& p = outcome.result.progress;
  return {{"train_samples", split.train.size()},
          {"steps", p.step},
          {"best_step", p.best_step},
          {"best_val", std::isfinite(p.best_val) ? nlohmann::json(p.best_val) : nlohmann::json(nullptr)},
          {"early_stopped", outcome.result.early_stopped},
          {"checkpoint", (dir / "model.ckpt").string()}};
}

nlohmann::json cmd_predict(const RunConfig& config) {
  if (config.checkpoint.empty()) throw ConfigError("predict needs a checkpoint");
  if (!fs::exists(config.checkpoint)) throw DataError("checkpoint not found: " + config.checkpoint.string());
  const RunConfig aligned = align_with_checkpoint(config, load_checkpoint(config.checkpoint).manifest);
  const LoadedData data = load_data(config.data);
  const fs::path dir = prepare_output(config);
  const Split split = split_samples(data, aligned);
  const auto p = predict_checkpoint(config.checkpoint, split.test, config.train.workers);
  const fs::path file = dir / ("predictions_" + p.name + ".csv");
  write_predictions_csv(file, p.name, p.predictions, split.test, config.data.time_format);
  return {{"model", p.name}, {"test_samples", split.test.size()}, {"predictions", file.string()}};
}

nlohmann::json cmd_eval(const RunConfig& config) {
  if (config.checkpoint.empty() && config.eval_predictions.empty())
    throw ConfigError("eval needs a checkpoint or prediction files");
  RunConfig aligned = config;
  if (!config.checkpoint.empty()) {
    if (!fs::exists(config.checkpoint)) throw DataError("checkpoint not found: " + config.checkpoint.string());
    aligned = align_with_checkpoint(config, load_checkpoint(config.checkpoint).manifest);
  }
  const LoadedData data = load_data(config.data);
  const fs::path dir = prepare_output(config);
  const Split split = split_samples(data, aligned);

  std::vector<ModelScore> scores;
  std::vector<std::pair<std::string, std::vector<std::vector<RmseBin>>>> rmse;
  if (!config.checkpoint.empty()) {
    const auto p = predict_checkpoint(config.checkpoint, split.test, config.train.workers);
    scores.push_back(score_predictions(p.name, p.predictions, split.test, p.thresholds));
    rmse.emplace_back(p.name, rmse_table(p.predictions, split.test, config.rmse_bin_seconds));
  }
  if (!config.eval_predictions.empty()) {
    const ProjectionThresholds th = fit_projection(released_labels(split.train));
    for (const auto& file : config.eval_predictions) {
      if (!fs::exists(file)) throw DataError("prediction file not found: " + file.string());
      const auto [name, preds] = read_predictions_csv(file, split.test, config.data.time_format);
      scores.push_back(score_predictions(name, preds, split.test, th));
      rmse.emplace_back(name, rmse_table(preds, split.test, config.rmse_bin_seconds));
    }
  }

  nlohmann::json report = nlohmann::json::array();
  for (const auto& s : scores) report.push_back(to_json(s));
  write_file(dir / "metrics.json", report.dump(2) + "\n");
  write_file(dir / "kappa_table.csv", kappa_table_csv(scores));
  write_file(dir / "rmse_by_time.csv", rmse_csv(rmse, aligned.model.horizons));
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& s : scores) summary[s.model] = s.average;
  return {{"average_kappa", summary}, {"test_samples", split.test.size()}};
}

nlohmann::json cmd_attention(const RunConfig& config) {
  if (config.checkpoint.empty()) throw ConfigError("attention needs a checkpoint");
  if (!fs::exists(config.checkpoint)) throw DataError("checkpoint not found: " + config.checkpoint.string());
  const LoadedModel m = load_model(config.checkpoint);
  RunConfig aligned = config;
  aligned.model = m.model.config;
  const LoadedData data = load_data(config.data);
  const fs::path dir = prepare_output(config);
  const Split split = split_samples(data, aligned);
  const SampleSet chosen = stride_subset(split.test, config.attention_max_samples);

  const auto& horizons = m.model.config.horizons;
  const std::size_t hc = horizons.size(), r = m.model.config.radius;
  std::vector<ForwardOutput> outputs(chosen.size());
  parallel_shards(chosen.size(), 32, config.train.workers, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) outputs[i] = forward(m.model, chosen.build(i));
  });

  std::ostringstream dump;
  dump << "vertex,time,horizon,side,order,weight\n";
  // mean[side][horizon][order], side 0 = upstream
  std::vector<std::vector<std::vector<double>>> mean(2, std::vector<std::vector<double>>(hc, std::vector<double>(r, 0.0)));
  const auto& store = chosen.store();
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const SampleRef ref = chosen.ref(i);
    const std::string head = store.vertex_ids()[ref.vertex] + ',' + time_label(store, ref.time, config.data.time_format) + ',';
    for (std::size_t k = 0; k < hc; ++k)
      for (int side = 0; side < 2; ++side) {
        const auto& alpha = side == 0 ? outputs[i].attention_up[k] : outputs[i].attention_down[k];
        for (std::size_t j = 0; j < r; ++j) {
          dump << head << horizons[k] << ',' << (side == 0 ? "upstream" : "downstream") << ',' << j + 1 << ','
               << fmt(alpha[j]) << '\n';
          mean[side][k][j] += alpha[j];
        }
      }
  }
  std::ostringstream avg;
  avg << "side,order,horizon,weight\n";
  nlohmann::json high_order = nlohmann::json::object();
  const double n = static_cast<double>(chosen.size());
  for (int side = 0; side < 2; ++side)
    for (std::size_t k = 0; k < hc; ++k) {
      double mass = 0.0;
      for (std::size_t j = 0; j < r; ++j) {
        const double w = mean[side][k][j] / n;
        avg << (side == 0 ? "upstream" : "downstream") << ',' << j + 1 << ',' << horizons[k] << ',' << fmt(w) << '\n';
        if (j >= 2) mass += w;
      }
      high_order[side == 0 ? "upstream" : "downstream"][std::to_string(horizons[k])] = mass;
    }
  write_file(dir / "attention_dump.csv", dump.str());
  write_file(dir / "attention_mean.csv", avg.str());
  return {{"samples", chosen.size()}, {"mass_on_orders_3_plus", high_order}};
}

nlohmann::json cmd_nmi(const RunConfig& config) {
  const LoadedData data = load_data(config.data);
  const fs::path dir = prepare_output(config);
  const auto values = nmi_by_radius(data.store, data.graph, config.nmi_max_radius, config.nmi);
  std::ostringstream out;
  out << "radius,nmi\n";
  nlohmann::json report = nlohmann::json::array();
  for (std::size_t r = 0; r < values.size(); ++r) {
    out << r + 1 << ',' << (values[r] ? fmt(*values[r]) : std::string()) << '\n';
    report.push_back({{"radius", r + 1}, {"nmi", values[r] ? nlohmann::json(*values[r]) : nlohmann::json(nullptr)}});
  }
  write_file(dir / "nmi_by_radius.csv", out.str());
  write_file(dir / "nmi.json", report.dump(2) + "\n");
  return {{"nmi_by_radius", report}};
}

nlohmann::json cmd_baseline(const RunConfig& config) {
  const std::string& kind = config.model_kind;
  if (kind == "deeptransport") throw ConfigError("baseline needs model_kind rw, arima, fnn or saes");
  const TrainConfig tc = seeded_train(config);
  const LoadedData data = load_data(config.data);
  const fs::path dir = prepare_output(config);
  const Split split = split_samples(data, config);
  const ProjectionThresholds th = fit_projection(released_labels(split.train));

  std::string name = kind;
  std::vector<double> preds;
  if (kind == "rw") {
    preds = rw_predict_all(split.test, derive_seed(tc.seed, 0x77));
  } else if (kind == "arima") {
    const std::size_t train_end = split_point(data.store.steps(), config.split);
    const auto models = arima_fit_store(data.store, train_end, config.arima);
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t v = 0; v < models.size(); ++v) j[data.store.vertex_ids()[v]] = models[v];
    write_file(dir / "arima_models.json", j.dump(2) + "\n");
    preds = arima_predict_all(models, split.test, config.arima);
  } else if (kind == "fnn") {
    FnnConfig fc = config.fnn;
    fc.history = config.model.history;
    fc.horizons = config.model.horizons;
    const FnnModel m = fnn_train(split.train, fc, tc);
    save_fnn(dir / "fnn.ckpt", m, th);
    name = "fnn-p" + std::to_string(fc.history);
    preds = fnn_predict_all(m, split.test, tc.workers);
  } else {
    SaesConfig sc = config.saes;
    sc.history = config.model.history;
    sc.horizons = config.model.horizons;
    const SaesModel m = saes_train(split.train, sc, tc);
    save_saes(dir / "saes.ckpt", m, th);
    preds = saes_predict_all(m, split.test, tc.workers);
  }
  write_predictions_csv(dir / ("predictions_" + kind + ".csv"), name, preds, split.test, config.data.time_format);
  const ModelScore score = score_predictions(name, preds, split.test, th);
  write_file(dir / ("metrics_" + kind + ".json"), to_json(score).dump(2) + "\n");
  return {{"model", name}, {"average_kappa", score.average}, {"test_samples", split.test.size()}};
}

// ------------------------------------------------------------------ entry

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"DeepTransport traffic-condition forecaster"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string output_dir, checkpoint, model_kind;
  std::optional<std::size_t> workers, max_steps;
  std::vector<std::string> predictions;
  bool no_wall_time = false, resume_flag = false;

  using Command = nlohmann::json (*)(const RunConfig&);
  const std::vector<std::tuple<std::string, std::string, Command>> commands{
      {"synth", "generate a synthetic graph and condition series", cmd_synth},
      {"train", "train DeepTransport and write a checkpoint", cmd_train},
      {"predict", "write test-split predictions of a checkpoint", cmd_predict},
      {"eval", "score checkpoints and prediction files", cmd_eval},
      {"attention", "dump and average slot attention weights", cmd_attention},
      {"nmi", "normalized mutual information by neighbour order", cmd_nmi},
      {"baseline", "train and score a baseline model", cmd_baseline}};
  std::map<CLI::App*, Command> dispatch;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override a config key, e.g. train.max_steps=100");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("-o,--out", output_dir, "output directory");
    sub->add_option("--checkpoint", checkpoint, "checkpoint file");
    sub->add_option("--workers", workers, "worker threads");
    sub->add_option("--max-steps", max_steps, "optimizer step cap");
    sub->add_flag("--no-wall-time", no_wall_time, "omit wall-clock time from the training log");
    if (name == "baseline") sub->add_option("--model", model_kind, "rw | arima | fnn | saes");
    if (name == "train") sub->add_flag("--resume", resume_flag, "continue from --checkpoint");
    if (name == "eval") sub->add_option("--predictions", predictions, "prediction CSVs to score");
    dispatch[sub] = fn;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    std::vector<std::string> overrides = sets;
    auto quoted = [](const std::string& s) { return nlohmann::json(s).dump(); };
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    if (!output_dir.empty()) overrides.push_back("output_dir=" + quoted(output_dir));
    if (!checkpoint.empty()) overrides.push_back("checkpoint=" + quoted(checkpoint));
    if (!model_kind.empty()) overrides.push_back("model_kind=" + quoted(model_kind));
    if (workers) overrides.push_back("train.workers=" + std::to_string(*workers));
    if (max_steps) overrides.push_back("train.max_steps=" + std::to_string(*max_steps));
    if (no_wall_time) overrides.push_back("log_wall_time=false");
    if (resume_flag) overrides.push_back("resume=true");
    if (!predictions.empty()) overrides.push_back("eval.predictions=" + nlohmann::json(predictions).dump());

    const RunConfig config = load_run_config(
        config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), overrides);
    for (const auto& [sub, fn] : dispatch)
      if (sub->parsed()) {
        out << fn(config).dump(2) << '\n';
        return kExitOk;
      }
    return kExitOther;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

}  // namespace deeptransport::cli
