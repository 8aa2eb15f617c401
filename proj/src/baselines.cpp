#include "deeptransport/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "deeptransport/checkpoint.hpp"
#include "deeptransport/errors.hpp"
#include "deeptransport/optim.hpp"

namespace deeptransport {

// ------------------------------------------------------------ random walk

std::vector<double> rw_predict(double current, std::size_t horizon_count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out(horizon_count);
  for (double& v : out) v = current + noise(rng);
  return out;
}

std::vector<double> carry_forward(std::span<const Code> series) {
  std::vector<double> out(series.size());
  auto first = std::find_if(series.begin(), series.end(), [](Code c) { return c != 0; });
  double last = first == series.end() ? 1.0 : static_cast<double>(*first);
  for (std::size_t t = 0; t < series.size(); ++t) {
    if (series[t] != 0) last = series[t];
    out[t] = last;
  }
  return out;
}

namespace {

std::vector<std::vector<double>> carried_store(const ConditionStore& store) {
  std::vector<std::vector<double>> out;
  out.reserve(store.vertex_count());
  for (std::size_t v = 0; v < store.vertex_count(); ++v) out.push_back(carry_forward(store.series(v)));
  return out;
}

}  // namespace

std::vector<double> rw_predict_all(const SampleSet& samples, std::uint64_t seed) {
  const auto carried = carried_store(samples.store());
  const std::size_t h = samples.config().horizons.size();
  std::vector<double> out;
  out.reserve(samples.size() * h);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRef r = samples.ref(i);
    const auto p = rw_predict(carried[r.vertex][r.time], h, derive_seed(seed, i));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// ------------------------------------------------------------------ ARIMA

void to_json(nlohmann::json& j, const ArimaModel& m) {
  j = nlohmann::json{{"p", m.order.p}, {"d", m.order.d}, {"q", m.order.q}, {"mean", m.mean}, {"phi", m.phi},
                     {"theta", m.theta}, {"css", m.css},  {"aic", m.aic},  {"residuals", m.residuals}};
}

void from_json(const nlohmann::json& j, ArimaModel& m) {
  m.order = {j.at("p").get<int>(), j.at("d").get<int>(), j.at("q").get<int>()};
  m.mean = j.at("mean");
  m.phi = j.at("phi").get<std::vector<double>>();
  m.theta = j.at("theta").get<std::vector<double>>();
  m.css = j.value("css", 0.0);
  m.aic = j.value("aic", 0.0);
  m.residuals = j.value("residuals", std::size_t{0});
}

namespace {

std::vector<double> difference(std::span<const double> y, int d) {
  std::vector<double> w(y.begin(), y.end());
  for (int k = 0; k < d; ++k) {
    for (std::size_t t = w.size() - 1; t > 0; --t) w[t] -= w[t - 1];
    w.erase(w.begin());
  }
  return w;
}

/// True if every root of 1 - c1 z - ... - ck z^k lies outside the unit
/// circle, i.e. the companion matrix has spectral radius < 1.
bool roots_outside_unit_circle(std::span<const double> c) {
  const auto k = static_cast<Eigen::Index>(c.size());
  if (k == 0) return true;
  if (k == 1) return std::abs(c[0]) < 1.0 - 1e-8;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) companion(0, i) = c[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 1; i < k; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  if (solver.info() != Eigen::Success) return false;
  return solver.eigenvalues().cwiseAbs().maxCoeff() < 1.0 - 1e-8;
}

struct ArimaParams {
  bool has_mean = false;
  int p = 0, q = 0;

  std::size_t size() const { return static_cast<std::size_t>(has_mean) + p + q; }
  double mean(const Eigen::VectorXd& b) const { return has_mean ? b[0] : 0.0; }
  double phi(const Eigen::VectorXd& b, int i) const { return b[static_cast<int>(has_mean) + i]; }
  double theta(const Eigen::VectorXd& b, int j) const { return b[static_cast<int>(has_mean) + p + j]; }

  bool admissible(const Eigen::VectorXd& b) const {
    std::vector<double> ar(static_cast<std::size_t>(p)), ma(static_cast<std::size_t>(q));
    for (int i = 0; i < p; ++i) ar[static_cast<std::size_t>(i)] = phi(b, i);
    // Invertibility of 1 + θ1 z + ... is the same root condition on -θ.
    for (int j = 0; j < q; ++j) ma[static_cast<std::size_t>(j)] = -theta(b, j);
    return roots_outside_unit_circle(ar) && roots_outside_unit_circle(ma);
  }
};

/// Residuals e_t of the differenced series w for t >= start (zero before),
/// their sum of squares and, optionally, the Jacobian de/dβ.
double css_residuals(const std::vector<double>& w, std::size_t start, const ArimaParams& ap, const Eigen::VectorXd& b,
                     std::vector<double>& e, Eigen::MatrixXd* jac) {
  const std::size_t n = w.size();
  const std::size_t k = ap.size();
  e.assign(n, 0.0);
  Eigen::MatrixXd de;
  if (jac) de = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  const double mu = ap.mean(b);
  const int off_phi = static_cast<int>(ap.has_mean);
  const int off_theta = off_phi + ap.p;
  double css = 0.0;
  for (std::size_t t = start; t < n; ++t) {
    double pred = 0.0;
    for (int i = 1; i <= ap.p; ++i) pred += ap.phi(b, i - 1) * (w[t - i] - mu);
    for (int j = 1; j <= ap.q && t >= start + static_cast<std::size_t>(j); ++j) pred += ap.theta(b, j - 1) * e[t - j];
    e[t] = (w[t] - mu) - pred;
    css += e[t] * e[t];
    if (!jac) continue;
    const auto row = static_cast<Eigen::Index>(t);
    if (ap.has_mean) {
      double sum_phi = 0.0;
      for (int i = 0; i < ap.p; ++i) sum_phi += ap.phi(b, i);
      de(row, 0) = -1.0 + sum_phi;
    }
    for (int i = 1; i <= ap.p; ++i) de(row, off_phi + i - 1) = -(w[t - i] - mu);
    for (int j = 1; j <= ap.q && t >= start + static_cast<std::size_t>(j); ++j) de(row, off_theta + j - 1) -= e[t - j];
    for (int j = 1; j <= ap.q && t >= start + static_cast<std::size_t>(j); ++j)
      de.row(row) -= ap.theta(b, j - 1) * de.row(static_cast<Eigen::Index>(t - j));
  }
  if (jac) *jac = de.bottomRows(static_cast<Eigen::Index>(n - start));
  return css;
}

Eigen::VectorXd arima_initial(const std::vector<double>& w, std::size_t start, const ArimaParams& ap) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ap.size()));
  double mu = 0.0;
  if (ap.has_mean) {
    for (std::size_t t = start; t < w.size(); ++t) mu += w[t];
    mu /= static_cast<double>(w.size() - start);
    b[0] = mu;
  }
  if (ap.p == 0) return b;
  // Least-squares AR(p) on the centred series as the starting point.
  const auto rows = static_cast<Eigen::Index>(w.size() - start);
  Eigen::MatrixXd x(rows, ap.p);
  Eigen::VectorXd y(rows);
  for (std::size_t t = start; t < w.size(); ++t) {
    const auto r = static_cast<Eigen::Index>(t - start);
    y[r] = w[t] - mu;
    for (int i = 1; i <= ap.p; ++i) x(r, i - 1) = w[t - i] - mu;
  }
  Eigen::MatrixXd a = x.transpose() * x;
  a.diagonal().array() += 1e-8 * (1.0 + a.diagonal().array());
  Eigen::VectorXd phi = a.ldlt().solve(x.transpose() * y);
  if (!phi.allFinite()) phi.setZero();
  const int off = static_cast<int>(ap.has_mean);
  for (int attempt = 0; attempt < 60; ++attempt) {
    b.segment(off, ap.p) = phi;
    if (ap.admissible(b)) return b;
    phi *= 0.9;
  }
  b.segment(off, ap.p).setZero();
  return b;
}

}  // namespace

std::optional<ArimaModel> arima_fit_order(std::span<const double> series, ArimaOrder order, std::size_t start) {
  if (order.p < 0 || order.d < 0 || order.q < 0) throw ConfigError("ARIMA orders must be non-negative");
  if (start < static_cast<std::size_t>(order.p + order.d)) throw ConfigError("ARIMA residual window starts too early");
  if (series.size() <= start + 1) throw DataError("ARIMA series too short for the residual window");
  const std::vector<double> w = difference(series, order.d);
  const std::size_t wstart = start - static_cast<std::size_t>(order.d);
  const ArimaParams ap{order.d == 0, order.p, order.q};

  Eigen::VectorXd b = arima_initial(w, wstart, ap);
  std::vector<double> e;
  Eigen::MatrixXd jac;
  double css = css_residuals(w, wstart, ap, b, e, &jac);
  if (!std::isfinite(css)) return std::nullopt;

  if (ap.size() > 0) {
    double lambda = 1e-3;
    for (int iter = 0; iter < 200 && lambda < 1e10; ++iter) {
      const Eigen::VectorXd res = Eigen::Map<const Eigen::VectorXd>(e.data() + wstart, jac.rows());
      Eigen::MatrixXd a = jac.transpose() * jac;
      const Eigen::VectorXd g = jac.transpose() * res;
      bool accepted = false;
      while (!accepted && lambda < 1e10) {
        Eigen::MatrixXd damped = a;
        damped.diagonal().array() += lambda * (a.diagonal().array() + 1e-12);
        const Eigen::VectorXd step = damped.ldlt().solve(-g);
        const Eigen::VectorXd trial = b + step;
        if (!step.allFinite() || !ap.admissible(trial)) {
          lambda *= 10.0;
          continue;
        }
        std::vector<double> e_trial;
        Eigen::MatrixXd jac_trial;
        const double css_trial = css_residuals(w, wstart, ap, trial, e_trial, &jac_trial);
        if (std::isfinite(css_trial) && css_trial < css) {
          const double gain = (css - css_trial) / std::max(css, 1e-300);
          b = trial;
          css = css_trial;
          e = std::move(e_trial);
          jac = std::move(jac_trial);
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          if (gain < 1e-10) iter = 200;
        } else {
          lambda *= 10.0;
        }
      }
      if (!accepted) break;
    }
  }
  if (!ap.admissible(b)) return std::nullopt;

  ArimaModel m;
  m.order = order;
  m.mean = ap.mean(b);
  for (int i = 0; i < order.p; ++i) m.phi.push_back(ap.phi(b, i));
  for (int j = 0; j < order.q; ++j) m.theta.push_back(ap.theta(b, j));
  m.css = css;
  m.residuals = w.size() - wstart;
  const double n = static_cast<double>(m.residuals);
  const double k = static_cast<double>(ap.size() + 1);
  m.aic = n * std::log(std::max(css / n, 1e-300)) + 2.0 * k;
  return m;
}

ArimaModel arima_fit(std::span<const double> series, const ArimaGrid& grid) {
  if (grid.max_p < 0 || grid.max_d < 0 || grid.max_q < 0) throw ConfigError("ARIMA grid bounds must be non-negative");
  const auto need = static_cast<std::size_t>(2 * (grid.max_p + grid.max_d + grid.max_q));
  if (series.size() <= need) throw DataError("ARIMA series too short for the order grid");

  if (std::all_of(series.begin(), series.end(), [&](double v) { return v == series[0]; })) {
    ArimaModel m;
    m.mean = series.empty() ? 0.0 : series[0];
    m.residuals = series.size();
    return m;
  }

  const auto start = static_cast<std::size_t>(grid.max_p + grid.max_d);
  std::optional<ArimaModel> best;
  auto key = [](const ArimaModel& m) {
    return std::make_tuple(m.aic, m.order.p + m.order.q, m.order.p, m.order.d);
  };
  for (int d = 0; d <= grid.max_d; ++d)
    for (int p = 0; p <= grid.max_p; ++p)
      for (int q = 0; q <= grid.max_q; ++q) {
        auto m = arima_fit_order(series, {p, d, q}, start);
        if (m && (!best || key(*m) < key(*best))) best = std::move(m);
      }
  if (!best) throw NumericalError("no admissible ARIMA order in the grid");
  return *best;
}

std::vector<double> arima_forecast(const ArimaModel& model, std::span<const double> history,
                                   std::span<const std::size_t> horizons) {
  if (history.empty()) throw DataError("ARIMA forecast needs a non-empty history");
  const int p = model.order.p, d = model.order.d, q = model.order.q;
  std::size_t hmax = 0;
  for (std::size_t h : horizons) hmax = std::max(hmax, h);
  std::vector<double> out;
  if (history.size() <= static_cast<std::size_t>(d + p)) {
    out.assign(horizons.size(), history.back());
    return out;
  }

  std::vector<double> w = difference(history, d);
  std::vector<double> e(w.size(), 0.0);
  const double mu = model.mean;
  const auto start = static_cast<std::size_t>(p);
  for (std::size_t t = start; t < w.size(); ++t) {
    double pred = mu;
    for (int i = 1; i <= p; ++i) pred += model.phi[static_cast<std::size_t>(i - 1)] * (w[t - i] - mu);
    for (int j = 1; j <= q && t >= start + static_cast<std::size_t>(j); ++j)
      pred += model.theta[static_cast<std::size_t>(j - 1)] * e[t - j];
    e[t] = w[t] - pred;
  }

  // levels[l] is the last value of the l-times differenced history.
  std::vector<double> levels(static_cast<std::size_t>(d));
  {
    std::vector<double> y(history.begin(), history.end());
    for (int l = 0; l < d; ++l) {
      levels[static_cast<std::size_t>(l)] = y.back();
      for (std::size_t t = y.size() - 1; t > 0; --t) y[t] -= y[t - 1];
      y.erase(y.begin());
    }
  }
  std::vector<double> path(hmax);
  for (std::size_t k = 0; k < hmax; ++k) {
    const std::size_t t = w.size();
    double next = mu;
    for (int i = 1; i <= p; ++i) next += model.phi[static_cast<std::size_t>(i - 1)] * (w[t - i] - mu);
    for (int j = 1; j <= q; ++j)
      if (t >= start + static_cast<std::size_t>(j)) next += model.theta[static_cast<std::size_t>(j - 1)] * e[t - j];
    w.push_back(next);
    e.push_back(0.0);
    double value = next;
    for (int l = d - 1; l >= 0; --l) {
      levels[static_cast<std::size_t>(l)] += value;
      value = levels[static_cast<std::size_t>(l)];
    }
    path[k] = value;
  }
  out.reserve(horizons.size());
  for (std::size_t h : horizons) {
    if (h == 0) throw ConfigError("forecast horizons must be >= 1");
    out.push_back(path[h - 1]);
  }
  return out;
}

std::vector<ArimaModel> arima_fit_store(const ConditionStore& store, std::size_t train_end,
                                       const ArimaRunConfig& config) {
  if (train_end > store.steps()) throw DataError("ARIMA training range exceeds the store");
  std::vector<ArimaModel> models(store.vertex_count());
  parallel_shards(store.vertex_count(), 1, config.workers, [&](std::size_t, std::size_t v, std::size_t) {
    const auto carried = carry_forward(store.series(v).subspan(0, train_end));
    const std::size_t from = carried.size() > config.fit_length ? carried.size() - config.fit_length : 0;
    models[v] = arima_fit(std::span<const double>(carried).subspan(from), config.grid);
  });
  return models;
}

std::vector<double> arima_predict_all(const std::vector<ArimaModel>& models, const SampleSet& samples,
                                      const ArimaRunConfig& config) {
  if (models.size() != samples.store().vertex_count()) throw DataError("one ARIMA model per vertex required");
  const auto carried = carried_store(samples.store());
  const auto& horizons = samples.config().horizons;
  const std::size_t h = horizons.size();
  std::vector<double> out(samples.size() * h);
  parallel_shards(samples.size(), 256, config.workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const SampleRef r = samples.ref(i);
      const std::size_t from = r.time + 1 > config.filter_length ? r.time + 1 - config.filter_length : 0;
      const std::span<const double> hist(carried[r.vertex].data() + from, r.time + 1 - from);
      const auto f = arima_forecast(models[r.vertex], hist, horizons);
      std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>(i * h));
    }
  });
  return out;
}

// -------------------------------------------------------------------- FNN

void to_json(nlohmann::json& j, const FnnConfig& c) {
  j = nlohmann::json{{"history", c.history}, {"hidden", c.hidden}, {"horizons", c.horizons}, {"init_scale", c.init_scale}};
}

void from_json(const nlohmann::json& j, FnnConfig& c) {
  FnnConfig d;
  c.history = j.value("history", d.history);
  c.hidden = j.value("hidden", d.hidden);
  c.horizons = j.value("horizons", d.horizons);
  c.init_scale = j.value("init_scale", d.init_scale);
}

namespace {

void add_weight(ParamSet& p, const std::string& name, std::size_t rows, std::size_t cols, double scale,
                std::uint64_t seed) {
  const double bound = scale * fan_bound(cols, rows);
  p.add(name, init_params({rows, cols}, {-bound, bound}, derive_seed(seed, hash_string(name))));
}

std::vector<Code> history_codes(const ConditionStore& store, std::size_t v, std::size_t t, std::size_t p) {
  std::vector<Code> codes(p + 1);
  for (std::size_t k = 0; k <= p; ++k) codes[k] = store.at(v, t - k);
  return codes;
}

double mean_released(std::span<const int> labels) {
  double sum = 0.0;
  std::size_t n = 0;
  for (int c : labels)
    if (c != 0) {
      sum += c;
      ++n;
    }
  if (n == 0) throw DataError("no released labels to train on");
  return sum / static_cast<double>(n);
}

Var label_loss(Tape& tape, Var pred, const ConditionStore& store, std::size_t v, std::size_t t,
               std::span<const std::size_t> horizons) {
  std::vector<double> target(horizons.size());
  Mask mask(horizons.size());
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    const Code c = store.at(v, t + horizons[k]);
    target[k] = c;
    mask[k] = c != 0;
  }
  return tape.squared_error(pred, Tensor::vector(std::move(target)), mask);
}

}  // namespace

FnnModel fnn_initialize(const FnnConfig& config, std::uint64_t seed) {
  if (config.hidden == 0 || config.horizons.empty()) throw ConfigError("FNN needs hidden units and horizons");
  FnnModel m;
  m.config = config;
  add_weight(m.params, "fnn.hidden.w", config.hidden, config.history + 1, config.init_scale, seed);
  m.params.add("fnn.hidden.b", Tensor({config.hidden}));
  add_weight(m.params, "fnn.out.w", config.horizons.size(), config.hidden, config.init_scale, seed);
  m.params.add("fnn.out.b", Tensor({config.horizons.size()}));
  return m;
}

Var fnn_forward(Tape& tape, const FnnModel& model, std::span<const Code> codes) {
  if (codes.size() != model.config.history + 1) throw ShapeError("FNN input length must be history + 1");
  std::vector<double> x(codes.begin(), codes.end());
  Var h = tape.tanh(tape.affine(tape.constant(Tensor::vector(std::move(x))), tape.param(model.params, 0),
                                tape.param(model.params, 1)));
  return tape.affine(h, tape.param(model.params, 2), tape.param(model.params, 3));
}

std::vector<double> fnn_predict(const FnnModel& model, std::span<const Code> codes) {
  Tape tape;
  const Tensor& y = tape.value(fnn_forward(tape, model, codes));
  return {y.values().begin(), y.values().end()};
}

FnnModel fnn_train(const SampleSet& samples, const FnnConfig& config, const TrainConfig& train, TrainResult* result) {
  if (samples.config().history != config.history || samples.config().horizons != config.horizons)
    throw ConfigError("FNN config does not match the sample configuration");
  FnnModel model = fnn_initialize(config, derive_seed(train.seed, 0xf22));
  model.params.value("fnn.out.b").fill(mean_released(samples.all_labels()));

  auto [train_set, val_full] = holdout_split(samples, train.validation_fraction);
  const SampleSet val_set = stride_subset(val_full, train.val_max_samples);
  const auto& store = samples.store();
  const auto& horizons = config.horizons;
  auto make_loss = [&](const SampleSet& set) -> SampleLossFn {
    return [&, p = config.history](Tape& tape, std::size_t i) {
      const SampleRef r = set.ref(i);
      return label_loss(tape, fnn_forward(tape, model, history_codes(store, r.vertex, r.time, p)), store, r.vertex,
                        r.time, horizons);
    };
  };
  AdamState adam(model.params, train.adam);
  TrainResult res = train_generic(model.params, adam, {}, train_set.size(), make_loss(train_set), val_set.size(),
                                  make_loss(val_set), train);
  if (result) *result = std::move(res);
  return model;
}

std::vector<double> fnn_predict_all(const FnnModel& model, const SampleSet& samples, std::size_t workers) {
  const std::size_t h = model.config.horizons.size();
  std::vector<double> out(samples.size() * h);
  parallel_shards(samples.size(), 512, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const SampleRef r = samples.ref(i);
      const auto y = fnn_predict(model, history_codes(samples.store(), r.vertex, r.time, model.config.history));
      std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(i * h));
    }
  });
  return out;
}

// ------------------------------------------------------------------- SAEs

void to_json(nlohmann::json& j, const SaesConfig& c) {
  j = nlohmann::json{{"history", c.history},
                     {"layers", c.layers},
                     {"horizons", c.horizons},
                     {"pretrain", c.pretrain},
                     {"init_scale", c.init_scale}};
}

void from_json(const nlohmann::json& j, SaesConfig& c) {
  SaesConfig d;
  c.history = j.value("history", d.history);
  c.layers = j.value("layers", d.layers);
  c.horizons = j.value("horizons", d.horizons);
  c.pretrain = j.contains("pretrain") ? j["pretrain"].get<TrainConfig>() : d.pretrain;
  c.init_scale = j.value("init_scale", d.init_scale);
}

std::vector<double> saes_input(const ConditionStore& store, std::size_t t, std::size_t history) {
  if (t < history || t >= store.steps()) throw DataError("SAEs input window outside the store");
  std::vector<double> x;
  x.reserve(store.vertex_count() * (history + 1));
  for (std::size_t v = 0; v < store.vertex_count(); ++v)
    for (std::size_t k = 0; k <= history; ++k) x.push_back(store.at(v, t - k) / 4.0);
  return x;
}

namespace {

using RowFn = std::function<std::vector<double>(std::size_t)>;

AutoencoderLayer pretrain_rows(const RowFn& row, std::size_t n, std::size_t in, std::size_t hidden,
                               const TrainConfig& config, double init_scale, std::uint64_t seed) {
  if (n == 0) throw DataError("autoencoder needs at least one input row");
  ParamSet p;
  add_weight(p, "enc.w", hidden, in, init_scale, seed);
  p.add("enc.b", Tensor({hidden}));
  add_weight(p, "dec.w", in, hidden, init_scale, seed);
  p.add("dec.b", Tensor({in}));
  const Mask all(in, 1);
  auto reconstruction = [&](Tape& tape, std::size_t i) {
    std::vector<double> x = row(i);
    const Tensor target = Tensor::vector(x);
    Var h = tape.sigmoid(tape.affine(tape.constant(Tensor::vector(std::move(x))), tape.param(p, 0), tape.param(p, 1)));
    return tape.squared_error(tape.affine(h, tape.param(p, 2), tape.param(p, 3)), target, all);
  };
  TrainConfig cfg = config;
  cfg.validation_fraction = 0.0;
  AdamState adam(p, cfg.adam);
  train_generic(p, adam, {}, n, reconstruction, 0, nullptr, cfg);

  AutoencoderLayer layer;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    Tape tape;
    total += tape.value(reconstruction(tape, i))[0];
  }
  layer.reconstruction = total / static_cast<double>(n);
  layer.w = p.value(0);
  layer.b = p.value(1);
  layer.decoder_w = p.value(2);
  layer.decoder_b = p.value(3);
  return layer;
}

std::vector<double> encode(const Tensor& w, const Tensor& b, std::span<const double> x) {
  Tape tape;
  Var wv = tape.constant(w), bv = tape.constant(b);
  const Tensor& y = tape.value(tape.sigmoid(tape.affine(tape.constant(Tensor::vector({x.begin(), x.end()})), wv, bv)));
  return {y.values().begin(), y.values().end()};
}

Var saes_forward(Tape& tape, const SaesModel& m, std::vector<double> x) {
  Var h = tape.constant(Tensor::vector(std::move(x)));
  for (std::size_t k = 0; k < m.config.layers.size(); ++k)
    h = tape.sigmoid(tape.affine(h, tape.param(m.params, 2 * k), tape.param(m.params, 2 * k + 1)));
  const std::size_t head = 2 * m.config.layers.size();
  return tape.affine(h, tape.param(m.params, head), tape.param(m.params, head + 1));
}

}  // namespace

AutoencoderLayer pretrain_autoencoder(const Tensor& inputs, std::size_t hidden, const TrainConfig& config,
                                      double init_scale, std::uint64_t seed) {
  const std::size_t n = inputs.rows(), in = inputs.cols();
  return pretrain_rows([&](std::size_t i) { return std::vector<double>(inputs.data() + i * in, inputs.data() + (i + 1) * in); },
                       n, in, hidden, config, init_scale, seed);
}

SaesModel saes_train(const SampleSet& samples, const SaesConfig& config, const TrainConfig& finetune,
                     TrainResult* result) {
  if (config.layers.empty()) throw ConfigError("SAEs needs at least one hidden layer");
  if (samples.config().history != config.history || samples.config().horizons != config.horizons)
    throw ConfigError("SAEs config does not match the sample configuration");
  const ConditionStore& store = samples.store();
  const std::size_t vertices = store.vertex_count();
  const std::size_t hcount = config.horizons.size();
  const std::size_t hmax = samples.config().max_horizon();

  std::vector<std::size_t> times;
  for (const auto& r : samples.refs()) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.empty()) throw DataError("SAEs training set is empty");

  std::vector<std::size_t> train_times = times, val_times;
  if (finetune.validation_fraction > 0.0) {
    const std::size_t cut =
        times[static_cast<std::size_t>(std::floor((1.0 - finetune.validation_fraction) * static_cast<double>(times.size())))];
    train_times.clear();
    for (std::size_t t : times) {
      if (t >= cut) val_times.push_back(t);
      else if (t + hmax < cut) train_times.push_back(t);
    }
  }
  if (train_times.empty()) throw DataError("no SAEs training times before the validation cut");

  SaesModel model;
  model.config = config;
  model.vertices = vertices;
  const std::uint64_t seed = derive_seed(finetune.seed, 0x5ae5);

  // Greedy stage k trains on the codes of stage k-1 for every training time.
  std::size_t in = vertices * (config.history + 1);
  std::vector<std::vector<double>> codes;
  for (std::size_t k = 0; k < config.layers.size(); ++k) {
    RowFn row = k == 0 ? RowFn([&](std::size_t i) { return saes_input(store, train_times[i], config.history); })
                       : RowFn([&](std::size_t i) { return codes[i]; });
    TrainConfig pre = config.pretrain;
    pre.seed = derive_seed(seed, k);
    const AutoencoderLayer layer =
        pretrain_rows(row, train_times.size(), in, config.layers[k], pre, config.init_scale, derive_seed(seed, 100 + k));
    std::vector<std::vector<double>> next(train_times.size());
    for (std::size_t i = 0; i < train_times.size(); ++i) next[i] = encode(layer.w, layer.b, row(i));
    codes = std::move(next);
    model.params.add("saes.enc" + std::to_string(k) + ".w", layer.w);
    model.params.add("saes.enc" + std::to_string(k) + ".b", layer.b);
    in = config.layers[k];
  }
  add_weight(model.params, "saes.head.w", vertices * hcount, in, config.init_scale, seed);
  model.params.add("saes.head.b", Tensor({vertices * hcount}, mean_released(samples.all_labels())));

  auto make_loss = [&](const std::vector<std::size_t>& ts) -> SampleLossFn {
    return [&](Tape& tape, std::size_t i) {
      const std::size_t t = ts[i];
      std::vector<double> target(vertices * hcount);
      Mask mask(vertices * hcount);
      for (std::size_t v = 0; v < vertices; ++v)
        for (std::size_t k = 0; k < hcount; ++k) {
          const Code c = store.at(v, t + config.horizons[k]);
          target[v * hcount + k] = c;
          mask[v * hcount + k] = c != 0;
        }
      Var y = saes_forward(tape, model, saes_input(store, t, config.history));
      return tape.squared_error(y, Tensor::vector(std::move(target)), mask);
    };
  };
  TrainConfig fine = finetune;
  AdamState adam(model.params, fine.adam);
  TrainResult res = train_generic(model.params, adam, {}, train_times.size(), make_loss(train_times), val_times.size(),
                                  make_loss(val_times), fine);
  if (result) *result = std::move(res);
  return model;
}

std::vector<double> saes_predict_time(const SaesModel& model, const ConditionStore& store, std::size_t t) {
  if (store.vertex_count() != model.vertices)
    throw DataError("SAEs model expects " + std::to_string(model.vertices) + " vertices, store has " +
                    std::to_string(store.vertex_count()));
  Tape tape;
  const Tensor& y = tape.value(saes_forward(tape, model, saes_input(store, t, model.config.history)));
  return {y.values().begin(), y.values().end()};
}

std::vector<double> saes_predict_all(const SaesModel& model, const SampleSet& samples, std::size_t workers) {
  const std::size_t h = model.config.horizons.size();
  if (samples.store().vertex_count() != model.vertices)
    throw DataError("SAEs model expects " + std::to_string(model.vertices) + " vertices");
  std::vector<std::size_t> times;
  for (const auto& r : samples.refs()) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::vector<std::vector<double>> outputs(times.size());
  parallel_shards(times.size(), 16, workers, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) outputs[i] = saes_predict_time(model, samples.store(), times[i]);
  });
  std::vector<double> out(samples.size() * h);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SampleRef r = samples.ref(i);
    const auto& y = outputs[static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), r.time) - times.begin())];
    std::copy_n(y.begin() + static_cast<std::ptrdiff_t>(r.vertex * h), h,
                out.begin() + static_cast<std::ptrdiff_t>(i * h));
  }
  return out;
}

// ------------------------------------------------------------ checkpoints

void save_fnn(const std::filesystem::path& path, const FnnModel& model, const ProjectionThresholds& thresholds) {
  Checkpoint ckpt;
  ckpt.manifest = {{"kind", "fnn"}, {"config", model.config}, {"thresholds", thresholds}};
  ckpt.params = model.params;
  save_checkpoint(path, ckpt);
}

std::pair<FnnModel, ProjectionThresholds> load_fnn(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("kind", std::string()) != "fnn") throw DataError(path.string() + ": not an FNN checkpoint");
  FnnModel m = fnn_initialize(ckpt.manifest.at("config").get<FnnConfig>(), 0);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const Tensor& t = ckpt.params.value(m.params.name(i));
    if (t.shape() != m.params.value(i).shape()) throw DataError(path.string() + ": parameter shape mismatch");
    m.params.value(i) = t;
  }
  return {std::move(m), ckpt.manifest.at("thresholds").get<ProjectionThresholds>()};
}

void save_saes(const std::filesystem::path& path, const SaesModel& model, const ProjectionThresholds& thresholds) {
  Checkpoint ckpt;
  ckpt.manifest = {{"kind", "saes"}, {"config", model.config}, {"vertices", model.vertices}, {"thresholds", thresholds}};
  ckpt.params = model.params;
  save_checkpoint(path, ckpt);
}

std::pair<SaesModel, ProjectionThresholds> load_saes(const std::filesystem::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.manifest.value("kind", std::string()) != "saes") throw DataError(path.string() + ": not an SAEs checkpoint");
  SaesModel m;
  m.config = ckpt.manifest.at("config").get<SaesConfig>();
  m.vertices = ckpt.manifest.at("vertices");
  m.params = std::move(ckpt.params);
  if (m.params.size() != 2 * m.config.layers.size() + 2) throw DataError(path.string() + ": SAEs layer count mismatch");
  return {std::move(m), ckpt.manifest.at("thresholds").get<ProjectionThresholds>()};
}

}  // namespace deeptransport
