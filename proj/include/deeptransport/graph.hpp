#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "deeptransport/tape.hpp"

namespace deeptransport {

using VertexIndex = std::uint32_t;

/// Filler for slot-path cells that do not correspond to any vertex.
inline constexpr VertexIndex kPadVertex = std::numeric_limits<VertexIndex>::max();

/// Upstream: traffic flowing into the target. Downstream: flowing out of it.
enum class Direction { upstream, downstream };

std::string_view to_string(Direction d);

struct EdgeRecord {
  std::string from;
  std::string to;
};

/// One row of the attribute table. `limit_level` is the only attribute the
/// model consumes; everything else is kept verbatim.
struct AttributeRecord {
  std::string vertex;
  std::optional<int> limit_level;
  std::map<std::string, std::string> extra;
};

/// Directed road graph: road sections are vertices, an edge (u, v) means
/// traffic leaving u enters v. Immutable after construction.
class TrafficGraph {
 public:
  std::size_t vertex_count() const noexcept { return ids_.size(); }
  std::size_t edge_count() const noexcept { return edge_count_; }

  const std::string& id(VertexIndex v) const { return ids_.at(v); }
  std::optional<VertexIndex> find(std::string_view id) const;
  /// Throws DataError for an unknown id.
  VertexIndex index(std::string_view id) const;

  /// Neighbours sorted by vertex id (string order).
  std::span<const VertexIndex> successors(VertexIndex v) const { return out_.at(v); }
  std::span<const VertexIndex> predecessors(VertexIndex v) const { return in_.at(v); }
  std::span<const VertexIndex> neighbors(VertexIndex v, Direction d) const {
    return d == Direction::upstream ? predecessors(v) : successors(v);
  }
  bool has_edge(VertexIndex from, VertexIndex to) const;

  /// Speed-limit class in 1..4 (1 when the attribute table omits it).
  int limit_level(VertexIndex v) const { return limit_.at(v); }
  bool has_limit_level(VertexIndex v) const { return limit_given_.at(v) != 0; }
  const std::map<std::string, std::string>& extra_attributes(VertexIndex v) const { return extra_.at(v); }

  std::vector<std::pair<VertexIndex, VertexIndex>> edges() const;

 private:
  friend TrafficGraph load_graph(std::span<const EdgeRecord>, std::span<const AttributeRecord>, bool);

  std::vector<std::string> ids_;
  std::unordered_map<std::string, VertexIndex> lookup_;
  std::vector<std::vector<VertexIndex>> out_;
  std::vector<std::vector<VertexIndex>> in_;
  std::vector<int> limit_;
  std::vector<std::uint8_t> limit_given_;
  std::vector<std::map<std::string, std::string>> extra_;
  std::size_t edge_count_ = 0;
};

/// Builds and validates a graph. Vertices are numbered in order of first
/// appearance: attribute rows first, then edge endpoints. In strict mode an
/// edge endpoint without an attribute row is an error.
TrafficGraph load_graph(std::span<const EdgeRecord> edges, std::span<const AttributeRecord> attrs,
                        bool strict = false);

/// Reads the canonical CSV pair: edges `from,to` and attributes
/// `vertex,limit_level[,extra...]`. An empty attribute path is allowed.
TrafficGraph read_graph_csv(const std::filesystem::path& edge_file, const std::filesystem::path& attr_file,
                            bool strict = false);
void write_graph_csv(const TrafficGraph& graph, const std::filesystem::path& edge_file,
                     const std::filesystem::path& attr_file);

/// Path-aligned order slots around a target.
///
/// `paths` is a width × radius matrix (row-major). Row i is one directed
/// path; column j (0-based) holds its vertex of order j + 1. Rows past the
/// number of enumerated paths hold `pad` and are flagged invalid.
struct SlotPaths {
  Direction direction = Direction::downstream;
  std::size_t radius = 0;
  std::size_t width = 0;
  std::vector<VertexIndex> paths;
  Mask row_mask;

  VertexIndex at(std::size_t row, std::size_t order_index) const { return paths[row * radius + order_index]; }
  std::size_t valid_rows() const;
  /// Multiset of vertices of order `order_index + 1` over valid rows.
  std::vector<VertexIndex> slot(std::size_t order_index) const;

  friend bool operator==(const SlotPaths&, const SlotPaths&) = default;
};

/// Enumerates simple directed paths of `radius` hops ending at (upstream) or
/// starting from (downstream) the target. A path that reaches a vertex with
/// no unvisited neighbour before `radius` hops is completed by repeating
/// that vertex. Rows come out in lexicographic order of their vertex-id
/// sequences and are truncated to `max_paths`.
SlotPaths enumerate_slot_paths(const TrafficGraph& graph, VertexIndex target, std::size_t radius, Direction direction,
                               std::size_t max_paths, VertexIndex pad = kPadVertex);

/// All vertices within `radius` hops of the target in either direction,
/// target included, sorted by index.
std::vector<VertexIndex> perceptive_neighborhood(const TrafficGraph& graph, VertexIndex target, std::size_t radius);

/// BFS layers: result[k] holds the vertices whose shortest directed
/// distance from (downstream) or to (upstream) the target is exactly k + 1.
std::vector<std::vector<VertexIndex>> order_layers(const TrafficGraph& graph, VertexIndex target,
                                                   std::size_t max_radius, Direction direction);

}  // namespace deeptransport
