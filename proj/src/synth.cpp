#include "deeptransport/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "deeptransport/errors.hpp"
#include "deeptransport/optim.hpp"

namespace deeptransport {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string vertex_name(std::size_t i, std::size_t n) {
  const int width = static_cast<int>(std::to_string(n > 0 ? n - 1 : 0).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "v%0*zu", width, i);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (vertices < 2) throw ConfigError("synth: need at least 2 vertices");
  if (days < 1 || steps_per_day < 1) throw ConfigError("synth: empty time range");
  if (mean_out_degree < 0.0) throw ConfigError("synth: mean out-degree must be non-negative");
  for (double p : {propagation, attenuation, decay, missing})
    if (!is_probability(p)) throw ConfigError("synth: probabilities must lie in [0, 1]");
  if (base_rate < 0.0 || peak_rate < 0.0 || base_rate + 2.0 * peak_rate > 1.0)
    throw ConfigError("synth: seed rates must be non-negative and keep the intensity below 1");
  if (peak_width_hours <= 0.0) throw ConfigError("synth: peak width must be positive");
  for (const auto& s : scheduled)
    if (s.code < 1 || s.code > 4) throw ConfigError("synth: scheduled seed code must be 1..4");
}

double SynthConfig::seed_rate(double hour) const {
  auto bump = [&](double centre) {
    const double z = (hour - centre) / peak_width_hours;
    return std::exp(-0.5 * z * z);
  };
  return base_rate + peak_rate * (bump(morning_peak_hour) + bump(evening_peak_hour));
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  nlohmann::json scheduled = nlohmann::json::array();
  for (const auto& s : c.scheduled) scheduled.push_back({{"vertex", s.vertex}, {"step", s.step}, {"code", s.code}});
  j = {{"vertices", c.vertices},
       {"mean_out_degree", c.mean_out_degree},
       {"nearest_candidates", c.nearest_candidates},
       {"days", c.days},
       {"steps_per_day", c.steps_per_day},
       {"propagation", c.propagation},
       {"attenuation", c.attenuation},
       {"decay", c.decay},
       {"base_rate", c.base_rate},
       {"peak_rate", c.peak_rate},
       {"morning_peak_hour", c.morning_peak_hour},
       {"evening_peak_hour", c.evening_peak_hour},
       {"peak_width_hours", c.peak_width_hours},
       {"missing", c.missing},
       {"scheduled", scheduled},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  const SynthConfig d;
  c.vertices = j.value("vertices", d.vertices);
  c.mean_out_degree = j.value("mean_out_degree", d.mean_out_degree);
  c.nearest_candidates = j.value("nearest_candidates", d.nearest_candidates);
  c.days = j.value("days", d.days);
  c.steps_per_day = j.value("steps_per_day", d.steps_per_day);
  c.propagation = j.value("propagation", d.propagation);
  c.attenuation = j.value("attenuation", d.attenuation);
  c.decay = j.value("decay", d.decay);
  c.base_rate = j.value("base_rate", d.base_rate);
  c.peak_rate = j.value("peak_rate", d.peak_rate);
  c.morning_peak_hour = j.value("morning_peak_hour", d.morning_peak_hour);
  c.evening_peak_hour = j.value("evening_peak_hour", d.evening_peak_hour);
  c.peak_width_hours = j.value("peak_width_hours", d.peak_width_hours);
  c.missing = j.value("missing", d.missing);
  c.scheduled.clear();
  if (j.contains("scheduled"))
    for (const auto& s : j.at("scheduled"))
      c.scheduled.push_back({s.at("vertex").get<VertexIndex>(), s.at("step").get<std::size_t>(), s.value("code", Code{4})});
  c.seed = j.value("seed", d.seed);
}

TrafficGraph synth_graph(const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(derive_seed(config.seed, 1));
  const std::size_t n = config.vertices;
  std::vector<double> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = uniform01(rng);
    y[i] = uniform01(rng);
  }

  std::vector<std::vector<std::uint8_t>> linked(n, std::vector<std::uint8_t>(n, 0));
  std::vector<EdgeRecord> edges;
  std::vector<AttributeRecord> attrs;
  const double base_degree = std::floor(config.mean_out_degree);
  const double extra_prob = config.mean_out_degree - base_degree;

  for (std::size_t v = 0; v < n; ++v) {
    AttributeRecord rec;
    rec.vertex = vertex_name(v, n);
    // Mostly low limit classes, as in urban networks.
    const double u = uniform01(rng);
    rec.limit_level = u < 0.4 ? 1 : u < 0.7 ? 2 : u < 0.9 ? 3 : 4;
    attrs.push_back(std::move(rec));
  }
  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto dist2 = [&](std::size_t i) { return (x[i] - x[v]) * (x[i] - x[v]) + (y[i] - y[v]) * (y[i] - y[v]); };
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist2(a) < dist2(b); });
    std::vector<std::size_t> candidates;
    for (std::size_t i : order) {
      if (i == v || linked[i][v]) continue;
      candidates.push_back(i);
      if (candidates.size() == config.nearest_candidates) break;
    }
    auto degree = static_cast<std::size_t>(base_degree) + (uniform01(rng) < extra_prob ? 1 : 0);
    degree = std::min(degree, candidates.size());
    std::shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(degree);
    std::sort(candidates.begin(), candidates.end());
    for (std::size_t u : candidates) {
      linked[v][u] = 1;
      edges.push_back({vertex_name(v, n), vertex_name(u, n)});
    }
  }
  return load_graph(edges, attrs, true);
}

ConditionStore simulate_conditions(const TrafficGraph& graph, const SynthConfig& config) {
  config.validate();
  const std::size_t n = graph.vertex_count();
  const std::size_t steps = config.days * config.steps_per_day;
  std::vector<std::string> ids;
  for (VertexIndex v = 0; v < n; ++v) ids.push_back(graph.id(v));
  ConditionStore store(std::move(ids), steps, 0);

  std::vector<std::vector<ScheduledSeed>> scheduled(steps);
  for (const auto& s : config.scheduled) {
    if (s.vertex >= n) throw ConfigError("synth: scheduled seed on unknown vertex");
    if (s.step < steps) scheduled[s.step].push_back(s);
  }

  std::mt19937_64 rng(derive_seed(config.seed, 2));
  std::vector<Code> code(n, 1), next(n, 1);
  std::vector<std::uint8_t> front(n, 0), next_front(n, 0);

  auto raise = [&](VertexIndex v, Code c) {
    if (c > next[v]) {
      next[v] = c;
      next_front[v] = 1;
    }
  };

  for (std::size_t t = 0; t < steps; ++t) {
    // Observation of step t (scheduled seeds at t are applied first).
    for (const auto& s : scheduled[t]) {
      if (s.code > code[s.vertex]) {
        code[s.vertex] = s.code;
        front[s.vertex] = 1;
      }
    }
    for (VertexIndex v = 0; v < n; ++v) store.set(v, t, uniform01(rng) < config.missing ? Code{0} : code[v]);

    next = code;
    std::fill(next_front.begin(), next_front.end(), 0);
    for (VertexIndex v = 0; v < n; ++v)
      if (code[v] > 1 && uniform01(rng) < config.decay) next[v] = static_cast<Code>(code[v] - 1);

    for (VertexIndex u = 0; u < n; ++u) {
      if (!front[u]) continue;
      for (VertexIndex w : graph.predecessors(u)) {
        const bool spread = uniform01(rng) < config.propagation;
        const bool weaker = uniform01(rng) < config.attenuation;
        if (!spread) continue;
        const Code c = static_cast<Code>(code[u] - (weaker ? 1 : 0));
        if (c >= 2) raise(w, c);
      }
    }

    const double hour =
        24.0 * static_cast<double>((t + 1) % config.steps_per_day) / static_cast<double>(config.steps_per_day);
    const double rate = config.seed_rate(hour);
    for (VertexIndex v = 0; v < n; ++v) {
      if (uniform01(rng) >= rate) continue;
      raise(v, uniform01(rng) < 0.5 ? Code{3} : Code{4});
    }
    code.swap(next);
    front.swap(next_front);
  }
  return store;
}

std::pair<TrafficGraph, ConditionStore> synth_generate(const SynthConfig& config) {
  TrafficGraph graph = synth_graph(config);
  ConditionStore store = simulate_conditions(graph, config);
  return {std::move(graph), std::move(store)};
}

}  // namespace deeptransport
