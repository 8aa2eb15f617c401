#pragma once

#include <cmath>
#include <map>
#include <vector>

#include "deeptransport/dataset.hpp"

namespace deeptransport::testing {

/// Straight transcription of the weighted-kappa definition with explicit
/// histograms.
inline double brute_kappa(const std::vector<int>& a, const std::vector<int>& b) {
  const int n_classes = 4;
  double o[4][4] = {}, ha[4] = {}, hb[4] = {};
  for (std::size_t i = 0; i < a.size(); ++i) {
    o[a[i] - 1][b[i] - 1] += 1.0;
    ha[a[i] - 1] += 1.0;
    hb[b[i] - 1] += 1.0;
  }
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n_classes; ++i)
    for (int j = 0; j < n_classes; ++j) {
      const double w = double((i - j) * (i - j)) / double((n_classes - 1) * (n_classes - 1));
      const double e = ha[i] * hb[j] / static_cast<double>(a.size());
      num += w * o[i][j];
      den += w * e;
    }
  return 1.0 - num / den;
}

/// Plug-in NMI from probability maps.
inline double brute_nmi(const std::vector<Code>& x, const std::vector<Code>& y) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    joint[{x[i], y[i]}] += 1.0 / n;
    px[x[i]] += 1.0 / n;
    py[y[i]] += 1.0 / n;
  }
  double mi = 0.0, hx = 0.0, hy = 0.0;
  for (auto [k, p] : joint) mi += p * std::log(p / (px[k.first] * py[k.second]));
  for (auto [k, p] : px) hx -= p * std::log(p);
  for (auto [k, p] : py) hy -= p * std::log(p);
  return hx + hy == 0.0 ? 0.0 : 2.0 * mi / (hx + hy);
}

}  // namespace deeptransport::testing
