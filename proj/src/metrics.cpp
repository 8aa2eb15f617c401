#include "deeptransport/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "deeptransport/errors.hpp"

namespace deeptransport {

Matrix4 kappa_weights() {
  Matrix4 w{};
  constexpr double denom = 9.0;  // (N - 1)^2 with N = 4
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) w[i][j] = static_cast<double>((i - j) * (i - j)) / denom;
  return w;
}

KappaReport qw_kappa(std::span<const int> truth, std::span<const int> pred) {
  if (truth.empty()) throw DataError("kappa: empty input");
  if (truth.size() != pred.size()) throw DataError("kappa: truth and prediction lengths differ");
  KappaReport rep;
  rep.weights = kappa_weights();
  rep.count = truth.size();
  std::array<double, 4> rows{}, cols{};
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const int a = truth[k], b = pred[k];
    if (a < 1 || a > 4 || b < 1 || b > 4) throw DataError("kappa: codes must lie in 1..4");
    rep.observed[a - 1][b - 1] += 1.0;
    rows[a - 1] += 1.0;
    cols[b - 1] += 1.0;
  }
  const double n = static_cast<double>(truth.size());
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      rep.expected[i][j] = rows[i] * cols[j] / n;
      num += rep.weights[i][j] * rep.observed[i][j];
      den += rep.weights[i][j] * rep.expected[i][j];
    }
  if (den == 0.0) throw DataError("kappa: undefined for degenerate single-class marginals");
  rep.kappa = 1.0 - num / den;
  return rep;
}

std::vector<RmseBin> rmse_by_time_of_day(std::span<const int> truth, std::span<const double> pred,
                                         std::span<const std::int64_t> time_of_day_seconds,
                                         std::int64_t bin_seconds) {
  if (truth.size() != pred.size() || truth.size() != time_of_day_seconds.size())
    throw DataError("rmse: input lengths differ");
  if (bin_seconds <= 0) throw ConfigError("rmse: bin width must be positive");
  std::map<std::int64_t, std::pair<double, std::size_t>> bins;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const std::int64_t tod = ((time_of_day_seconds[k] % 86400) + 86400) % 86400;
    auto& [sse, count] = bins[tod / bin_seconds];
    const double e = pred[k] - static_cast<double>(truth[k]);
    sse += e * e;
    ++count;
  }
  std::vector<RmseBin> out;
  for (const auto& [bin, acc] : bins)
    out.push_back({bin * bin_seconds, acc.second, std::sqrt(acc.first / static_cast<double>(acc.second))});
  return out;
}

double nmi(const JointHistogram& joint) {
  std::array<double, kCodeCount> px{}, py{};
  std::vector<double> cells;
  double n = 0.0;
  for (int i = 0; i < kCodeCount; ++i)
    for (int j = 0; j < kCodeCount; ++j) {
      const double c = static_cast<double>(joint[i][j]);
      px[i] += c;
      py[j] += c;
      n += c;
      cells.push_back(c);
    }
  if (n == 0.0) throw DataError("nmi: empty histogram");
  // Entropies sum their terms in sorted count order, so transposing the
  // histogram or pairing a series with itself reproduces the exact same
  // floating-point sums; MI = H(X) + H(Y) - H(X,Y) then gives exact
  // symmetry and nmi(x, x) == 1.
  auto entropy = [n](auto counts) {
    std::sort(counts.begin(), counts.end());
    double h = 0.0;
    for (double c : counts)
      if (c > 0.0) h -= (c / n) * std::log(c / n);
    return h;
  };
  const double hx = entropy(px), hy = entropy(py), hxy = entropy(cells);
  if (hx + hy == 0.0) return 0.0;
  const double mi = hx + hy - hxy;
  // Clamp rounding noise so the value stays in [0, 1].
  return std::clamp(2.0 * mi / (hx + hy), 0.0, 1.0);
}

double nmi(std::span<const Code> x, std::span<const Code> y) {
  if (x.size() != y.size()) throw DataError("nmi: series lengths differ");
  JointHistogram joint{};
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (x[k] >= kCodeCount || y[k] >= kCodeCount) throw DataError("nmi: code outside 0..4");
    ++joint[x[k]][y[k]];
  }
  return nmi(joint);
}

std::vector<std::optional<double>> nmi_by_radius(const ConditionStore& store, const TrafficGraph& graph,
                                                 std::size_t max_radius, NmiOptions options) {
  if (store.vertex_count() != graph.vertex_count()) throw DataError("nmi: store and graph disagree on vertices");
  std::vector<JointHistogram> hist(max_radius, JointHistogram{});
  std::vector<std::uint8_t> any(max_radius, 0);
  auto pool = [&](VertexIndex v, Direction d) {
    const auto layers = order_layers(graph, v, max_radius, d);
    const auto target = store.series(v);
    for (std::size_t r = 0; r < max_radius; ++r)
      for (VertexIndex u : layers[r]) {
        const auto other = store.series(u);
        for (std::size_t t = 0; t < store.steps(); ++t) ++hist[r][target[t]][other[t]];
        any[r] = store.steps() > 0;
      }
  };
  for (VertexIndex v = 0; v < graph.vertex_count(); ++v) {
    if (options.upstream) pool(v, Direction::upstream);
    if (options.downstream) pool(v, Direction::downstream);
  }
  std::vector<std::optional<double>> out(max_radius);
  for (std::size_t r = 0; r < max_radius; ++r)
    if (any[r]) out[r] = nmi(hist[r]);
  return out;
}

}  // namespace deeptransport
