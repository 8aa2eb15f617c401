#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deeptransport/graph.hpp"

namespace deeptransport {

/// Condition codes: 0 not released, 1 fluency, 2 slow, 3 congestion,
/// 4 extreme congestion.
using Code = std::uint8_t;
inline constexpr int kCodeCount = 5;
inline constexpr std::int64_t kStepSeconds = 300;

enum class TimeFormat { iso8601, step_index };

/// Dense vertex × time grid of condition codes at a fixed 5-minute step.
class ConditionStore {
 public:
  ConditionStore() = default;
  /// All-zero grid. `start` is seconds since the epoch (or 0 for
  /// step-indexed data, where step 0 is taken as midnight).
  ConditionStore(std::vector<std::string> vertex_ids, std::size_t steps, std::int64_t start = 0);

  std::size_t vertex_count() const noexcept { return vertex_ids_.size(); }
  std::size_t steps() const noexcept { return steps_; }
  std::int64_t start() const noexcept { return start_; }
  std::int64_t timestamp(std::size_t t) const { return start_ + static_cast<std::int64_t>(t) * kStepSeconds; }
  /// Seconds past midnight of step t.
  std::int64_t time_of_day(std::size_t t) const;
  const std::vector<std::string>& vertex_ids() const noexcept { return vertex_ids_; }

  Code at(std::size_t v, std::size_t t) const { return grid_[v * steps_ + t]; }
  void set(std::size_t v, std::size_t t, Code c);
  std::span<const Code> series(std::size_t v) const { return {grid_.data() + v * steps_, steps_}; }
  std::span<const Code> grid() const noexcept { return grid_; }

  /// Copy of time steps [begin, end).
  ConditionStore slice(std::size_t begin, std::size_t end) const;

  friend bool operator==(const ConditionStore&, const ConditionStore&) = default;

 private:
  std::vector<std::string> vertex_ids_;
  std::size_t steps_ = 0;
  std::int64_t start_ = 0;
  std::vector<Code> grid_;
};

/// Loads `vertex,timestamp,code` rows onto the graph's vertex order. Missing
/// cells are 0. In strict mode unknown vertices and off-lattice timestamps
/// are errors; otherwise they are skipped / floored onto the lattice.
ConditionStore load_conditions(const std::filesystem::path& file, const TrafficGraph& graph,
                               TimeFormat format = TimeFormat::step_index, bool strict = true);
void write_conditions(const ConditionStore& store, const std::filesystem::path& file,
                      TimeFormat format = TimeFormat::step_index);

std::int64_t parse_iso8601(std::string_view text);
std::string format_iso8601(std::int64_t seconds);

struct SampleConfig {
  std::size_t history = 12;  // p: each cell carries p + 1 codes
  std::size_t radius = 5;
  std::size_t max_paths = 8;
  std::vector<std::size_t> horizons{3, 6, 9, 12};

  std::size_t max_horizon() const;
  void validate() const;
};

/// Observations of one side (upstream or downstream) laid out as
/// rows × orders cells, each cell holding p + 1 codes (newest first) and
/// the vertex's limit level.
struct PathBlock {
  std::size_t rows = 0;
  std::size_t orders = 0;
  std::size_t codes_per_cell = 0;
  std::vector<VertexIndex> vertices;  // rows × orders
  std::vector<Code> codes;            // rows × orders × codes_per_cell
  std::vector<std::uint8_t> limits;   // rows × orders, 1..4
  Mask row_mask;

  std::size_t cell(std::size_t row, std::size_t order_index) const { return row * orders + order_index; }
};

struct Sample {
  VertexIndex vertex = 0;
  std::size_t time = 0;
  std::vector<Code> target_codes;  // c(v,t), c(v,t-1), ..., c(v,t-p)
  std::uint8_t target_limit = 1;
  PathBlock upstream;
  PathBlock downstream;
  std::vector<int> labels;  // c(v, t + h) per horizon
  Mask label_mask;          // 0 where the label is not released
};

struct SampleRef {
  VertexIndex vertex = 0;
  std::size_t time = 0;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

/// Lazily materialised samples over one store. Slot paths depend only on
/// the vertex and are computed once.
class SampleSet {
 public:
  SampleSet(const ConditionStore& store, const TrafficGraph& graph, SampleConfig config);

  std::size_t size() const noexcept { return refs_.size(); }
  const SampleRef& ref(std::size_t i) const { return refs_[i]; }
  const std::vector<SampleRef>& refs() const noexcept { return refs_; }
  Sample build(std::size_t i) const { return build(refs_[i]); }
  Sample build(SampleRef ref) const;

  const SampleConfig& config() const noexcept { return config_; }
  const ConditionStore& store() const noexcept { return *store_; }
  const TrafficGraph& graph() const noexcept { return *graph_; }
  const SlotPaths& slot_paths(VertexIndex v, Direction d) const {
    return d == Direction::upstream ? up_[v] : down_[v];
  }

  /// Same store/graph, restricted to the given references.
  SampleSet subset(std::vector<SampleRef> refs) const;
  /// Labels of every sample, horizon-major per sample, zeros included.
  std::vector<int> all_labels() const;

 private:
  SampleSet() = default;
  const ConditionStore* store_ = nullptr;
  const TrafficGraph* graph_ = nullptr;
  SampleConfig config_;
  std::vector<SlotPaths> up_;
  std::vector<SlotPaths> down_;
  std::vector<SampleRef> refs_;
};

/// One sample per (vertex, t) with t - p >= 0 and t + max(h) inside the
/// store, dropping samples whose labels are all not-released.
SampleSet make_samples(const ConditionStore& store, const TrafficGraph& graph, const SampleConfig& config);

/// Index of the first test step: floor(fraction · steps) clamped to
/// [1, steps - 1].
std::size_t split_point(std::size_t steps, double train_fraction);
std::pair<ConditionStore, ConditionStore> chrono_split(const ConditionStore& store, double train_fraction);

/// Splits samples of one store at split_point: training samples have every
/// label time before the cut, test samples read nothing before it.
std::pair<SampleSet, SampleSet> chrono_split(const SampleSet& samples, double train_fraction);

/// Cumulative proportions (q1, q2, q3, 1) of codes 1..4 among released
/// records. Throws DataError if no record is released.
std::array<double, 4> class_distribution(const ConditionStore& store);
std::array<double, 4> class_distribution(std::span<const int> labels);

}  // namespace deeptransport
