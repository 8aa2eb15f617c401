#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deeptransport/errors.hpp"
#include "deeptransport/metrics.hpp"
#include "oracles.hpp"

using namespace deeptransport;

namespace {

using deeptransport::testing::brute_kappa;
using deeptransport::testing::brute_nmi;

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int spread) {
  std::vector<int> out(n);
  for (int& v : out) v = 1 + static_cast<int>(rng() % static_cast<unsigned>(spread));
  return out;
}

TEST(Kappa, MatchesBruteForceOnFuzzedPairs) {
  std::mt19937_64 rng(13);
  int checked = 0;
  while (checked < 1000) {
    const std::size_t n = 2 + rng() % 200;
    auto a = random_labels(rng, n, 1 + static_cast<int>(rng() % 4));
    auto b = random_labels(rng, n, 1 + static_cast<int>(rng() % 4));
    if (rng() % 3 == 0)
      for (std::size_t i = 0; i < n; ++i)
        if (rng() % 2) b[i] = a[i];
    const double oracle = brute_kappa(a, b);
    if (!std::isfinite(oracle)) {
      EXPECT_THROW(qw_kappa(a, b), DataError);
      continue;
    }
    EXPECT_NEAR(qw_kappa(a, b).kappa, oracle, 1e-12);
    ++checked;
  }
}

TEST(Kappa, ReportMatricesMatchDefinition) {
  const std::vector<int> a{1, 1, 2, 3, 4, 4, 2};
  const std::vector<int> b{1, 2, 2, 4, 4, 1, 3};
  const auto r = qw_kappa(a, b);
  EXPECT_EQ(r.count, 7u);
  EXPECT_EQ(r.observed[0][1], 1.0);
  EXPECT_EQ(r.observed[3][0], 1.0);
  // Row marginal of truth class 1 is 2, column marginal of prediction class 2 is 2.
  EXPECT_DOUBLE_EQ(r.expected[0][1], 2.0 * 2.0 / 7.0);
  double total_o = 0, total_e = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      total_o += r.observed[i][j];
      total_e += r.expected[i][j];
    }
  EXPECT_DOUBLE_EQ(total_o, 7.0);
  EXPECT_NEAR(total_e, 7.0, 1e-12);
}

TEST(Kappa, SelfAgreementIsExactlyOne) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 200; ++i) {
    auto a = random_labels(rng, 5 + rng() % 100, 4);
    if (std::all_of(a.begin(), a.end(), [&](int v) { return v == a[0]; })) continue;
    EXPECT_EQ(qw_kappa(a, a).kappa, 1.0);
  }
}

TEST(Kappa, WeightsFollowSquaredDistance) {
  const auto w = kappa_weights();
  EXPECT_EQ(w[0][3], 1.0);
  EXPECT_DOUBLE_EQ(w[1][2], 1.0 / 9.0);
  EXPECT_DOUBLE_EQ(w[0][2], 4.0 / 9.0);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(w[i][i], 0.0);
}

TEST(Kappa, ReversedRatingIsNegative) {
  const std::vector<int> a{1, 2, 3, 4, 1, 2, 3, 4};
  const std::vector<int> b{4, 3, 2, 1, 4, 3, 2, 1};
  EXPECT_LT(qw_kappa(a, b).kappa, -0.9);
}

TEST(Kappa, RejectsBadInput) {
  EXPECT_THROW(qw_kappa(std::vector<int>{}, std::vector<int>{}), DataError);
  EXPECT_THROW(qw_kappa(std::vector<int>{1, 2}, std::vector<int>{1}), DataError);
  EXPECT_THROW(qw_kappa(std::vector<int>{0, 2}, std::vector<int>{1, 2}), DataError);
  EXPECT_THROW(qw_kappa(std::vector<int>{5, 2}, std::vector<int>{1, 2}), DataError);
  EXPECT_THROW(qw_kappa(std::vector<int>{2, 2}, std::vector<int>{2, 2}), DataError);
}

// --------------------------------------------------------------------- NMI

std::vector<Code> random_codes(std::mt19937_64& rng, std::size_t n) {
  std::vector<Code> out(n);
  for (auto& c : out) c = static_cast<Code>(rng() % 5);
  return out;
}

TEST(Nmi, SelfIsOneAndSymmetricExactly) {
  std::mt19937_64 rng(31);
  for (int i = 0; i < 200; ++i) {
    const auto x = random_codes(rng, 10 + rng() % 300);
    auto y = random_codes(rng, x.size());
    EXPECT_EQ(nmi(x, x), 1.0);
    EXPECT_EQ(nmi(x, y), nmi(y, x));
  }
}

TEST(Nmi, MatchesDirectFormula) {
  std::mt19937_64 rng(32);
  for (int i = 0; i < 200; ++i) {
    const auto x = random_codes(rng, 10 + rng() % 300);
    auto y = x;
    for (auto& c : y)
      if (rng() % 3 == 0) c = static_cast<Code>(rng() % 5);
    EXPECT_NEAR(nmi(x, y), brute_nmi(x, y), 1e-12);
    const double v = nmi(x, y);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Nmi, IndependentAndConstantInputs) {
  // Product distribution: every (x, y) pair appears once.
  std::vector<Code> x, y;
  for (Code a = 0; a < 5; ++a)
    for (Code b = 0; b < 5; ++b) {
      x.push_back(a);
      y.push_back(b);
    }
  EXPECT_NEAR(nmi(x, y), 0.0, 1e-12);
  const std::vector<Code> flat(10, 2);
  EXPECT_EQ(nmi(flat, flat), 0.0);
  EXPECT_THROW(nmi(std::vector<Code>{1, 2}, std::vector<Code>{1}), DataError);
}

TEST(Nmi, ByRadiusPoolsExactOrderPairs) {
  // Chain a -> b -> c: a is b's upstream neighbour, c is two hops downstream of a.
  const std::vector<EdgeRecord> edges{{"a", "b"}, {"b", "c"}};
  const auto g = load_graph(edges, {});
  ConditionStore s({"a", "b", "c"}, 50);
  std::mt19937_64 rng(3);
  for (std::size_t t = 0; t < 50; ++t) {
    const Code c = static_cast<Code>(1 + rng() % 4);
    s.set(0, t, c);
    s.set(1, t, c);
    s.set(2, t, static_cast<Code>(1 + rng() % 4));
  }
  const auto by_r = nmi_by_radius(s, g, 3);
  // Order 1 pools (a,b), (b,a), (b,c), (c,b) in both directions.
  std::vector<Code> x, y;
  for (auto [u, v] : std::vector<std::pair<int, int>>{{0, 1}, {1, 2}, {1, 0}, {2, 1}})
    for (std::size_t t = 0; t < 50; ++t) {
      x.push_back(s.at(u, t));
      y.push_back(s.at(v, t));
    }
  ASSERT_TRUE(by_r[0]);
  EXPECT_NEAR(*by_r[0], brute_nmi(x, y), 1e-12);
  EXPECT_TRUE(by_r[1]);
  EXPECT_FALSE(by_r[2]);
}

// -------------------------------------------------------------------- RMSE

TEST(Rmse, BinsByTimeOfDay) {
  const std::vector<int> truth{1, 2, 3, 4};
  const std::vector<double> pred{1.5, 2.0, 1.0, 4.0};
  const std::vector<std::int64_t> tod{0, 100, 3600, 3700};
  const auto bins = rmse_by_time_of_day(truth, pred, tod, 3600);
  ASSERT_EQ(bins.size(), 2u);
  EXPECT_EQ(bins[0].start_seconds, 0);
  EXPECT_EQ(bins[0].count, 2u);
  EXPECT_DOUBLE_EQ(bins[0].rmse, std::sqrt(0.25 / 2.0));
  EXPECT_EQ(bins[1].start_seconds, 3600);
  EXPECT_DOUBLE_EQ(bins[1].rmse, std::sqrt(4.0 / 2.0));
}

}  // namespace
