#include "deeptransport/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "deeptransport/csv.hpp"
#include "deeptransport/errors.hpp"

namespace deeptransport {

// --------------------------------------------------------- ConditionStore

ConditionStore::ConditionStore(std::vector<std::string> vertex_ids, std::size_t steps, std::int64_t start)
    : vertex_ids_(std::move(vertex_ids)), steps_(steps), start_(start), grid_(vertex_ids_.size() * steps, 0) {}

std::int64_t ConditionStore::time_of_day(std::size_t t) const {
  const std::int64_t s = timestamp(t) % 86400;
  return s < 0 ? s + 86400 : s;
}

void ConditionStore::set(std::size_t v, std::size_t t, Code c) {
  if (c >= kCodeCount) throw DataError("condition code " + std::to_string(c) + " outside 0..4");
  grid_[v * steps_ + t] = c;
}

ConditionStore ConditionStore::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > steps_) throw DataError("store slice out of range");
  ConditionStore out(vertex_ids_, end - begin, timestamp(begin));
  for (std::size_t v = 0; v < vertex_count(); ++v)
    std::copy_n(grid_.begin() + static_cast<std::ptrdiff_t>(v * steps_ + begin), end - begin,
                out.grid_.begin() + static_cast<std::ptrdiff_t>(v * out.steps_));
  return out;
}

std::int64_t parse_iso8601(std::string_view text) {
  std::tm tm{};
  std::istringstream in{std::string(text)};
  in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (in.fail()) {
    in.clear();
    in.str(std::string(text));
    in >> std::get_time(&tm, "%Y-%m-%d %H:%M:%S");
  }
  if (in.fail()) throw DataError("bad ISO-8601 timestamp '" + std::string(text) + "'");
  std::string rest;
  in >> rest;
  if (!rest.empty() && rest != "Z") throw DataError("unsupported timestamp suffix in '" + std::string(text) + "'");
  return static_cast<std::int64_t>(timegm(&tm));
}

std::string format_iso8601(std::int64_t seconds) {
  const std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  return buf;
}

namespace {

std::int64_t parse_int(const std::string& s, const std::string& where) {
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError(where + ": expected an integer, got '" + s + "'");
  return value;
}

}  // namespace

ConditionStore load_conditions(const std::filesystem::path& file, const TrafficGraph& graph, TimeFormat format,
                               bool strict) {
  const auto table = csv::read(file);
  const std::size_t vcol = table.column("vertex");
  const std::size_t tcol = table.column("timestamp");
  const std::size_t ccol = table.column("code");

  struct Cell {
    VertexIndex v;
    std::int64_t ts;
    Code code;
  };
  std::vector<Cell> cells;
  cells.reserve(table.rows.size());
  std::int64_t lo = std::numeric_limits<std::int64_t>::max();
  std::int64_t hi = std::numeric_limits<std::int64_t>::min();

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = file.string() + ":" + std::to_string(table.lines[r]);
    const auto v = graph.find(row[vcol]);
    if (!v) {
      if (strict) throw DataError(where + ": vertex '" + row[vcol] + "' is not in the graph");
      continue;
    }
    const std::int64_t code = parse_int(row[ccol], where);
    if (code < 0 || code >= kCodeCount) throw DataError(where + ": code " + row[ccol] + " outside 0..4");
    std::int64_t ts = 0;
    if (format == TimeFormat::iso8601) {
      ts = parse_iso8601(row[tcol]);
      if (ts % kStepSeconds != 0) {
        if (strict) throw DataError(where + ": timestamp " + row[tcol] + " is not on the 5-minute lattice");
        ts -= ((ts % kStepSeconds) + kStepSeconds) % kStepSeconds;
      }
    } else {
      ts = parse_int(row[tcol], where) * kStepSeconds;
    }
    lo = std::min(lo, ts);
    hi = std::max(hi, ts);
    cells.push_back({*v, ts, static_cast<Code>(code)});
  }

  std::vector<std::string> ids;
  ids.reserve(graph.vertex_count());
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v) ids.push_back(graph.id(v));
  if (cells.empty()) return ConditionStore(std::move(ids), 0, 0);

  const auto steps = static_cast<std::size_t>((hi - lo) / kStepSeconds + 1);
  ConditionStore store(std::move(ids), steps, lo);
  for (const auto& c : cells) store.set(c.v, static_cast<std::size_t>((c.ts - lo) / kStepSeconds), c.code);
  return store;
}

void write_conditions(const ConditionStore& store, const std::filesystem::path& file, TimeFormat format) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << "vertex,timestamp,code\n";
  const std::int64_t base_step = store.start() / kStepSeconds;
  for (std::size_t v = 0; v < store.vertex_count(); ++v) {
    const std::string& id = store.vertex_ids()[v];
    for (std::size_t t = 0; t < store.steps(); ++t) {
      out << id << ',';
      if (format == TimeFormat::iso8601) out << format_iso8601(store.timestamp(t));
      else out << base_step + static_cast<std::int64_t>(t);
      out << ',' << static_cast<int>(store.at(v, t)) << '\n';
    }
  }
}

// ---------------------------------------------------------------- samples

std::size_t SampleConfig::max_horizon() const {
  return horizons.empty() ? 0 : *std::max_element(horizons.begin(), horizons.end());
}

void SampleConfig::validate() const {
  if (radius < 1) throw ConfigError("radius must be >= 1");
  if (max_paths < 1) throw ConfigError("max_paths must be >= 1");
  if (horizons.empty()) throw ConfigError("horizon set must not be empty");
  for (std::size_t h : horizons)
    if (h < 1) throw ConfigError("horizons must be >= 1");
}

SampleSet::SampleSet(const ConditionStore& store, const TrafficGraph& graph, SampleConfig config)
    : store_(&store), graph_(&graph), config_(std::move(config)) {
  config_.validate();
  if (store.vertex_count() != graph.vertex_count()) throw DataError("store and graph disagree on vertex count");
  up_.reserve(graph.vertex_count());
  down_.reserve(graph.vertex_count());
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v) {
    up_.push_back(enumerate_slot_paths(graph, v, config_.radius, Direction::upstream, config_.max_paths));
    down_.push_back(enumerate_slot_paths(graph, v, config_.radius, Direction::downstream, config_.max_paths));
  }
}

namespace {

void fill_block(PathBlock& block, const SlotPaths& paths, const ConditionStore& store, const TrafficGraph& graph,
                std::size_t time, std::size_t history) {
  block.rows = paths.width;
  block.orders = paths.radius;
  block.codes_per_cell = history + 1;
  block.vertices = paths.paths;
  block.row_mask = paths.row_mask;
  block.codes.assign(block.rows * block.orders * block.codes_per_cell, 0);
  block.limits.assign(block.rows * block.orders, 1);
  for (std::size_t c = 0; c < block.vertices.size(); ++c) {
    const VertexIndex u = block.vertices[c];
    if (u == kPadVertex) continue;
    block.limits[c] = static_cast<std::uint8_t>(graph.limit_level(u));
    Code* dst = block.codes.data() + c * block.codes_per_cell;
    for (std::size_t k = 0; k <= history; ++k) dst[k] = store.at(u, time - k);
  }
}

}  // namespace

Sample SampleSet::build(SampleRef ref) const {
  const std::size_t p = config_.history;
  if (ref.time < p || ref.time + config_.max_horizon() >= store_->steps())
    throw DataError("sample time outside the store window");
  Sample s;
  s.vertex = ref.vertex;
  s.time = ref.time;
  s.target_codes.resize(p + 1);
  for (std::size_t k = 0; k <= p; ++k) s.target_codes[k] = store_->at(ref.vertex, ref.time - k);
  s.target_limit = static_cast<std::uint8_t>(graph_->limit_level(ref.vertex));
  fill_block(s.upstream, up_[ref.vertex], *store_, *graph_, ref.time, p);
  fill_block(s.downstream, down_[ref.vertex], *store_, *graph_, ref.time, p);
  for (std::size_t h : config_.horizons) {
    const Code c = store_->at(ref.vertex, ref.time + h);
    s.labels.push_back(c);
    s.label_mask.push_back(c != 0 ? 1 : 0);
  }
  return s;
}

SampleSet SampleSet::subset(std::vector<SampleRef> refs) const {
  SampleSet out;
  out.store_ = store_;
  out.graph_ = graph_;
  out.config_ = config_;
  out.up_ = up_;
  out.down_ = down_;
  out.refs_ = std::move(refs);
  return out;
}

std::vector<int> SampleSet::all_labels() const {
  std::vector<int> out;
  out.reserve(refs_.size() * config_.horizons.size());
  for (const auto& r : refs_)
    for (std::size_t h : config_.horizons) out.push_back(store_->at(r.vertex, r.time + h));
  return out;
}

SampleSet make_samples(const ConditionStore& store, const TrafficGraph& graph, const SampleConfig& config) {
  SampleSet set(store, graph, config);
  const std::size_t p = config.history;
  const std::size_t hmax = config.max_horizon();
  std::vector<SampleRef> refs;
  if (store.steps() > p + hmax) {
    for (VertexIndex v = 0; v < store.vertex_count(); ++v)
      for (std::size_t t = p; t + hmax < store.steps(); ++t) {
        const bool any_released = std::any_of(config.horizons.begin(), config.horizons.end(),
                                              [&](std::size_t h) { return store.at(v, t + h) != 0; });
        if (any_released) refs.push_back({v, t});
      }
  }
  return set.subset(std::move(refs));
}

std::size_t split_point(std::size_t steps, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  if (steps < 2) throw DataError("need at least two time steps to split");
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(steps)));
  return std::clamp<std::size_t>(cut, 1, steps - 1);
}

std::pair<ConditionStore, ConditionStore> chrono_split(const ConditionStore& store, double train_fraction) {
  const std::size_t cut = split_point(store.steps(), train_fraction);
  return {store.slice(0, cut), store.slice(cut, store.steps())};
}

std::pair<SampleSet, SampleSet> chrono_split(const SampleSet& samples, double train_fraction) {
  const std::size_t cut = split_point(samples.store().steps(), train_fraction);
  const std::size_t p = samples.config().history;
  const std::size_t hmax = samples.config().max_horizon();
  std::vector<SampleRef> train, test;
  for (const auto& r : samples.refs()) {
    if (r.time + hmax < cut) train.push_back(r);
    else if (r.time >= cut + p) test.push_back(r);
  }
  return {samples.subset(std::move(train)), samples.subset(std::move(test))};
}

namespace {

std::array<double, 4> cumulative(const std::array<std::size_t, 5>& counts) {
  const std::size_t released = counts[1] + counts[2] + counts[3] + counts[4];
  if (released == 0) throw DataError("class distribution needs at least one released record");
  std::array<double, 4> out{};
  std::size_t running = 0;
  for (int c = 1; c <= 4; ++c) {
    running += counts[static_cast<std::size_t>(c)];
    out[static_cast<std::size_t>(c - 1)] = static_cast<double>(running) / static_cast<double>(released);
  }
  out[3] = 1.0;
  return out;
}

}  // namespace

std::array<double, 4> class_distribution(const ConditionStore& store) {
  std::array<std::size_t, 5> counts{};
  for (Code c : store.grid()) ++counts[c];
  return cumulative(counts);
}

std::array<double, 4> class_distribution(std::span<const int> labels) {
  std::array<std::size_t, 5> counts{};
  for (int c : labels) {
    if (c < 0 || c >= kCodeCount) throw DataError("label outside 0..4");
    ++counts[static_cast<std::size_t>(c)];
  }
  return cumulative(counts);
}

}  // namespace deeptransport
