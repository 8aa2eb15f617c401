#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "deeptransport/dataset.hpp"
#include "deeptransport/graph.hpp"
#include "json.hpp"

namespace deeptransport {

/// A congestion seed forced at a given vertex and step, on top of the
/// random ones.
struct ScheduledSeed {
  VertexIndex vertex = 0;
  std::size_t step = 0;
  Code code = 4;
};

/// Desk-scale congestion-propagation process.
///
/// Every step: raised codes relax one level with probability `decay`;
/// each vertex raised in the previous step (the congestion front) raises
/// every upstream neighbour with probability `propagation` to its own code,
/// minus one level with probability `attenuation`, and only if that is at
/// least slow (2); fresh seeds (code 3 or 4) appear with a time-of-day
/// intensity that has a morning and an evening Gaussian peak.
struct SynthConfig {
  std::size_t vertices = 200;
  double mean_out_degree = 1.4;
  std::size_t nearest_candidates = 5;
  std::size_t days = 14;
  std::size_t steps_per_day = 288;

  double propagation = 0.9;  // q
  double attenuation = 0.3;
  double decay = 0.25;

  double base_rate = 1e-4;
  double peak_rate = 1.1e-2;
  double morning_peak_hour = 8.0;
  double evening_peak_hour = 18.0;
  double peak_width_hours = 1.2;

  double missing = 0.002;
  std::vector<ScheduledSeed> scheduled;
  std::uint64_t seed = 20170101;

  void validate() const;
  /// Seed intensity per vertex and step at a given hour of day.
  double seed_rate(double hour) const;
};

/// Random geometric directed graph: each vertex links to 1-2 of its nearest
/// neighbours (mean out-degree configurable), never reciprocally.
void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

TrafficGraph synth_graph(const SynthConfig& config);

/// Runs the propagation process on an arbitrary graph.
ConditionStore simulate_conditions(const TrafficGraph& graph, const SynthConfig& config);

std::pair<TrafficGraph, ConditionStore> synth_generate(const SynthConfig& config);

}  // namespace deeptransport
