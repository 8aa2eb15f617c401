#include "deeptransport/graph.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <set>

#include "deeptransport/csv.hpp"
#include "deeptransport/errors.hpp"

namespace deeptransport {

std::string_view to_string(Direction d) { return d == Direction::upstream ? "up" : "down"; }

std::optional<VertexIndex> TrafficGraph::find(std::string_view id) const {
  auto it = lookup_.find(std::string(id));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

VertexIndex TrafficGraph::index(std::string_view id) const {
  if (auto v = find(id)) return *v;
  throw DataError("unknown vertex '" + std::string(id) + "'");
}

bool TrafficGraph::has_edge(VertexIndex from, VertexIndex to) const {
  const auto& succ = out_.at(from);
  return std::find(succ.begin(), succ.end(), to) != succ.end();
}

std::vector<std::pair<VertexIndex, VertexIndex>> TrafficGraph::edges() const {
  std::vector<std::pair<VertexIndex, VertexIndex>> out;
  out.reserve(edge_count_);
  for (VertexIndex u = 0; u < out_.size(); ++u)
    for (VertexIndex v : out_[u]) out.emplace_back(u, v);
  return out;
}

TrafficGraph load_graph(std::span<const EdgeRecord> edges, std::span<const AttributeRecord> attrs, bool strict) {
  TrafficGraph g;
  auto declare = [&g](const std::string& id) -> VertexIndex {
    if (id.empty()) throw DataError("empty vertex id");
    auto [it, inserted] = g.lookup_.emplace(id, static_cast<VertexIndex>(g.ids_.size()));
    if (inserted) {
      if (g.ids_.size() >= kPadVertex) throw DataError("too many vertices");
      g.ids_.push_back(id);
      g.limit_.push_back(1);
      g.limit_given_.push_back(0);
      g.extra_.emplace_back();
    }
    return it->second;
  };

  std::vector<std::uint8_t> has_attr_row;
  for (const auto& row : attrs) {
    const bool seen = g.lookup_.contains(row.vertex);
    const VertexIndex v = declare(row.vertex);
    has_attr_row.resize(g.ids_.size(), 0);
    if (row.limit_level && (*row.limit_level < 1 || *row.limit_level > 4))
      throw DataError("vertex '" + row.vertex + "': limit_level must be in 1..4");
    if (seen) {
      const bool same = row.extra == g.extra_[v] &&
                        (row.limit_level ? (g.limit_given_[v] && *row.limit_level == g.limit_[v]) : !g.limit_given_[v]);
      if (!same) throw DataError("vertex '" + row.vertex + "' declared twice with conflicting attributes");
      continue;
    }
    has_attr_row[v] = 1;
    if (row.limit_level) {
      g.limit_[v] = *row.limit_level;
      g.limit_given_[v] = 1;
    }
    g.extra_[v] = row.extra;
  }

  std::set<std::pair<VertexIndex, VertexIndex>> seen_edges;
  std::vector<std::pair<VertexIndex, VertexIndex>> edge_list;
  for (const auto& e : edges) {
    if (strict) {
      for (const auto* end : {&e.from, &e.to})
        if (!g.lookup_.contains(*end)) throw DataError("edge references undeclared vertex '" + *end + "'");
    }
    if (e.from == e.to) throw DataError("self-loop on vertex '" + e.from + "'");
    const VertexIndex u = declare(e.from);
    const VertexIndex v = declare(e.to);
    if (!seen_edges.emplace(u, v).second) throw DataError("duplicate edge " + e.from + " -> " + e.to);
    edge_list.emplace_back(u, v);
  }

  const std::size_t n = g.ids_.size();
  g.out_.assign(n, {});
  g.in_.assign(n, {});
  for (auto [u, v] : edge_list) {
    g.out_[u].push_back(v);
    g.in_[v].push_back(u);
  }
  auto by_id = [&g](VertexIndex a, VertexIndex b) { return g.ids_[a] < g.ids_[b]; };
  for (auto& l : g.out_) std::sort(l.begin(), l.end(), by_id);
  for (auto& l : g.in_) std::sort(l.begin(), l.end(), by_id);
  g.edge_count_ = edge_list.size();
  return g;
}

TrafficGraph read_graph_csv(const std::filesystem::path& edge_file, const std::filesystem::path& attr_file,
                            bool strict) {
  std::vector<AttributeRecord> attrs;
  if (!attr_file.empty()) {
    const auto table = csv::read(attr_file);
    const std::size_t vcol = table.column("vertex");
    const std::size_t lcol = table.column("limit_level");
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
      const auto& row = table.rows[r];
      AttributeRecord rec;
      rec.vertex = row[vcol];
      if (!row[lcol].empty()) {
        try {
          std::size_t used = 0;
          rec.limit_level = std::stoi(row[lcol], &used);
          if (used != row[lcol].size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
          throw DataError(attr_file.string() + ":" + std::to_string(table.lines[r]) + ": bad limit_level '" +
                          row[lcol] + "'");
        }
      }
      for (std::size_t c = 0; c < row.size(); ++c)
        if (c != vcol && c != lcol) rec.extra.emplace(table.header[c], row[c]);
      attrs.push_back(std::move(rec));
    }
  }
  const auto table = csv::read(edge_file);
  const std::size_t fcol = table.column("from");
  const std::size_t tcol = table.column("to");
  std::vector<EdgeRecord> edges;
  edges.reserve(table.rows.size());
  for (const auto& row : table.rows) edges.push_back({row[fcol], row[tcol]});
  return load_graph(edges, attrs, strict);
}

namespace {

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_graph_csv(const TrafficGraph& graph, const std::filesystem::path& edge_file,
                     const std::filesystem::path& attr_file) {
  {
    std::ofstream out(edge_file);
    if (!out) throw DataError("cannot write " + edge_file.string());
    out << "from,to\n";
    for (auto [u, v] : graph.edges()) out << quote(graph.id(u)) << ',' << quote(graph.id(v)) << '\n';
  }
  std::set<std::string> extra_keys;
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v)
    for (const auto& [k, _] : graph.extra_attributes(v)) extra_keys.insert(k);
  std::ofstream out(attr_file);
  if (!out) throw DataError("cannot write " + attr_file.string());
  out << "vertex,limit_level";
  for (const auto& k : extra_keys) out << ',' << quote(k);
  out << '\n';
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v) {
    out << quote(graph.id(v)) << ',';
    if (graph.has_limit_level(v)) out << graph.limit_level(v);
    const auto& extra = graph.extra_attributes(v);
    for (const auto& k : extra_keys) {
      auto it = extra.find(k);
      out << ',' << (it == extra.end() ? std::string() : quote(it->second));
    }
    out << '\n';
  }
}

// ------------------------------------------------------------- order slots

std::size_t SlotPaths::valid_rows() const {
  return static_cast<std::size_t>(std::count_if(row_mask.begin(), row_mask.end(), [](auto m) { return m != 0; }));
}

std::vector<VertexIndex> SlotPaths::slot(std::size_t order_index) const {
  std::vector<VertexIndex> out;
  for (std::size_t r = 0; r < width; ++r)
    if (row_mask[r]) out.push_back(at(r, order_index));
  return out;
}

SlotPaths enumerate_slot_paths(const TrafficGraph& graph, VertexIndex target, std::size_t radius, Direction direction,
                               std::size_t max_paths, VertexIndex pad) {
  if (target >= graph.vertex_count()) throw DataError("target vertex not in graph");
  if (radius < 1) throw ConfigError("radius must be >= 1");
  if (max_paths < 1) throw ConfigError("max_paths must be >= 1");

  SlotPaths out;
  out.direction = direction;
  out.radius = radius;
  out.width = max_paths;
  out.paths.assign(max_paths * radius, pad);
  out.row_mask.assign(max_paths, 0);

  std::vector<VertexIndex> path;
  path.reserve(radius);
  std::size_t rows = 0;

  auto emit = [&] {
    for (std::size_t j = 0; j < radius; ++j) out.paths[rows * radius + j] = j < path.size() ? path[j] : path.back();
    out.row_mask[rows] = 1;
    ++rows;
  };
  auto on_path = [&](VertexIndex v) {
    return v == target || std::find(path.begin(), path.end(), v) != path.end();
  };

  // Neighbour lists are id-sorted, so depth-first order is lexicographic
  // order of the emitted rows and we can stop at the cap.
  auto dfs = [&](auto&& self) -> void {
    if (path.size() == radius) {
      emit();
      return;
    }
    const VertexIndex last = path.empty() ? target : path.back();
    bool extended = false;
    for (VertexIndex next : graph.neighbors(last, direction)) {
      if (rows == max_paths) return;
      if (on_path(next)) continue;
      extended = true;
      path.push_back(next);
      self(self);
      path.pop_back();
    }
    if (!extended && !path.empty() && rows < max_paths) emit();
  };
  dfs(dfs);
  return out;
}

namespace {

std::vector<std::size_t> bfs_distances(const TrafficGraph& graph, VertexIndex target, std::size_t max_radius,
                                       Direction direction) {
  constexpr std::size_t unseen = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dist(graph.vertex_count(), unseen);
  std::deque<VertexIndex> queue{target};
  dist[target] = 0;
  while (!queue.empty()) {
    const VertexIndex v = queue.front();
    queue.pop_front();
    if (dist[v] == max_radius) continue;
    for (VertexIndex n : graph.neighbors(v, direction)) {
      if (dist[n] != unseen) continue;
      dist[n] = dist[v] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

}  // namespace

std::vector<VertexIndex> perceptive_neighborhood(const TrafficGraph& graph, VertexIndex target, std::size_t radius) {
  if (target >= graph.vertex_count()) throw DataError("target vertex not in graph");
  const auto up = bfs_distances(graph, target, radius, Direction::upstream);
  const auto down = bfs_distances(graph, target, radius, Direction::downstream);
  std::vector<VertexIndex> out;
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v)
    if (up[v] <= radius || down[v] <= radius) out.push_back(v);
  return out;
}

std::vector<std::vector<VertexIndex>> order_layers(const TrafficGraph& graph, VertexIndex target,
                                                   std::size_t max_radius, Direction direction) {
  if (target >= graph.vertex_count()) throw DataError("target vertex not in graph");
  const auto dist = bfs_distances(graph, target, max_radius, direction);
  std::vector<std::vector<VertexIndex>> layers(max_radius);
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v)
    if (dist[v] >= 1 && dist[v] <= max_radius) layers[dist[v] - 1].push_back(v);
  return layers;
}

}  // namespace deeptransport
