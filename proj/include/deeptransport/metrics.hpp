#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "deeptransport/dataset.hpp"
#include "deeptransport/graph.hpp"

namespace deeptransport {

using Matrix4 = std::array<std::array<double, 4>, 4>;

/// Quadratic weighted Cohen's kappa with its intermediate matrices.
/// Index i of every matrix corresponds to class i + 1.
struct KappaReport {
  Matrix4 observed{};  // O[i][j]: truth i, prediction j
  Matrix4 expected{};  // E = row marginal ⊗ column marginal / n
  Matrix4 weights{};   // (i - j)^2 / (N - 1)^2, N = 4
  double kappa = 0.0;
  std::size_t count = 0;
};

/// Throws DataError on empty/unequal input or codes outside 1..4, and when
/// Σ w·E = 0 (both raters use a single identical class).
KappaReport qw_kappa(std::span<const int> truth, std::span<const int> pred);

Matrix4 kappa_weights();

struct RmseBin {
  std::int64_t start_seconds = 0;  // time of day at which the bin opens
  std::size_t count = 0;
  double rmse = 0.0;
};

/// RMSE of continuous predictions against codes grouped by time-of-day
/// bins of `bin_seconds`; bins without records are omitted.
std::vector<RmseBin> rmse_by_time_of_day(std::span<const int> truth, std::span<const double> pred,
                                         std::span<const std::int64_t> time_of_day_seconds,
                                         std::int64_t bin_seconds);

/// Joint counts over the five-code alphabet.
using JointHistogram = std::array<std::array<std::uint64_t, kCodeCount>, kCodeCount>;

/// Plug-in normalized mutual information 2·MI / (H(X) + H(Y)); 0 when both
/// entropies vanish.
double nmi(std::span<const Code> x, std::span<const Code> y);
double nmi(const JointHistogram& joint);

struct NmiOptions {
  bool upstream = true;
  bool downstream = true;
};

/// For each order r in 1..max_radius, pools (target code, neighbour code)
/// pairs over every vertex, every neighbour at shortest directed distance
/// exactly r, and every time step, then returns the NMI of the pooled
/// histogram. Orders without any pair map to nullopt.
std::vector<std::optional<double>> nmi_by_radius(const ConditionStore& store, const TrafficGraph& graph,
                                                 std::size_t max_radius, NmiOptions options = {});

}  // namespace deeptransport
