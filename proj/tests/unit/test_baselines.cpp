#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "deeptransport/baselines.hpp"
#include "deeptransport/errors.hpp"
#include "deeptransport/evaluation.hpp"
#include "deeptransport/synth.hpp"
#include "test_support.hpp"

using namespace deeptransport;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dt_baselines_" + name);
}

// ------------------------------------------------------------ random walk

TEST(RandomWalk, SeedReproducibleAndCentredOnCurrentCode) {
  EXPECT_EQ(rw_predict(2.0, 4, 11), rw_predict(2.0, 4, 11));
  EXPECT_NE(rw_predict(2.0, 4, 11), rw_predict(2.0, 4, 12));
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  const auto draws = rw_predict(3.0, n, 5);
  for (double v : draws) {
    sum += v - 3.0;
    sq += (v - 3.0) * (v - 3.0);
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(RandomWalk, CarryForwardFillsGaps) {
  const std::vector<Code> s{0, 0, 3, 0, 2, 0};
  EXPECT_EQ(carry_forward(s), (std::vector<double>{3, 3, 3, 3, 2, 2}));
  EXPECT_EQ(carry_forward(std::vector<Code>{0, 0}), (std::vector<double>{1, 1}));
}

// ------------------------------------------------------------------ ARIMA

std::vector<double> ar1(double phi, double mean, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> e(0.0, 1.0);
  std::vector<double> y(n);
  double x = 0.0;
  for (int burn = 0; burn < 200; ++burn) x = phi * x + e(rng);
  for (auto& v : y) {
    x = phi * x + e(rng);
    v = mean + x;
  }
  return y;
}

TEST(Arima, RecoversAutoregressiveCoefficient) {
  const auto y = ar1(0.8, 2.0, 2000, 17);
  const auto m = arima_fit_order(y, {1, 0, 0}, 1);
  ASSERT_TRUE(m);
  EXPECT_NEAR(m->phi[0], 0.8, 0.1);
  EXPECT_NEAR(m->mean, 2.0, 0.3);

  const auto chosen = arima_fit(y, {.max_p = 2, .max_d = 1, .max_q = 2});
  EXPECT_EQ(chosen.order.d, 0);
  EXPECT_GE(chosen.order.p, 1);
}

TEST(Arima, WhiteNoiseForecastsNearTheMean) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> e(1.5, 0.5);
  std::vector<double> y(800);
  for (auto& v : y) v = e(rng);
  const auto m = arima_fit(y, {.max_p = 2, .max_d = 1, .max_q = 2});
  EXPECT_EQ(m.order.d, 0);
  const std::vector<std::size_t> h{1, 5, 12};
  for (double f : arima_forecast(m, y, h)) EXPECT_NEAR(f, 1.5, 0.15);
}

TEST(Arima, ConstantSeriesForecastsTheConstant) {
  const std::vector<double> y(100, 2.0);
  const auto m = arima_fit(y, {.max_p = 2, .max_d = 2, .max_q = 2});
  EXPECT_EQ(m.order.d, 0);
  const std::vector<std::size_t> h{1, 3, 12};
  for (double f : arima_forecast(m, y, h)) EXPECT_NEAR(f, 2.0, 1e-9);
}

TEST(Arima, ForecastMatchesClosedFormAndDecaysToMean) {
  ArimaModel m;
  m.order = {1, 0, 0};
  m.phi = {0.6};
  m.mean = 2.0;
  const std::vector<double> hist{1.0, 3.0, 4.0};
  const std::vector<std::size_t> h{1, 2, 50};
  const auto f = arima_forecast(m, hist, h);
  EXPECT_DOUBLE_EQ(f[0], 2.0 + 0.6 * 2.0);
  EXPECT_DOUBLE_EQ(f[1], 2.0 + 0.36 * 2.0);
  EXPECT_NEAR(f[2], 2.0, 1e-9);
}

TEST(Arima, ManualRecursionWithDifferencingAndMovingAverage) {
  // ARIMA(1,1,1), no constant: w = diff(y); e replayed from t = p.
  ArimaModel m;
  m.order = {1, 1, 1};
  m.phi = {0.5};
  m.theta = {0.4};
  const std::vector<double> y{1.0, 2.0, 4.0, 3.0};
  const std::vector<double> w{1.0, 2.0, -1.0};
  // e[1] = w1 - 0.5 w0 (no earlier residual), e[2] = w2 - 0.5 w1 - 0.4 e[1].
  const double e1 = w[1] - 0.5 * w[0];
  const double e2 = w[2] - 0.5 * w[1] - 0.4 * e1;
  const double w3 = 0.5 * w[2] + 0.4 * e2;
  const double w4 = 0.5 * w3;
  const std::vector<std::size_t> h{1, 2};
  const auto f = arima_forecast(m, y, h);
  EXPECT_NEAR(f[0], 3.0 + w3, 1e-12);
  EXPECT_NEAR(f[1], 3.0 + w3 + w4, 1e-12);
}

TEST(Arima, ShortSeriesIsRejected) {
  const std::vector<double> y(10, 1.0);
  EXPECT_THROW(arima_fit(y), DataError);
}

TEST(Arima, JsonRoundTripKeepsCoefficients) {
  ArimaModel m;
  m.order = {2, 1, 1};
  m.phi = {0.1, -0.2};
  m.theta = {0.3};
  m.mean = 0.0;
  m.aic = 12.5;
  const auto back = nlohmann::json(m).get<ArimaModel>();
  EXPECT_EQ(back.order, m.order);
  EXPECT_EQ(back.phi, m.phi);
  EXPECT_EQ(back.theta, m.theta);
}

// -------------------------------------------------------------------- FNN

FnnConfig tiny_fnn() { return {.history = 3, .hidden = 5, .horizons = {1, 2, 3, 4}, .init_scale = 1.0}; }

TEST(Fnn, ShapesAndZeroInput) {
  FnnModel m = fnn_initialize(tiny_fnn(), 3);
  EXPECT_EQ(m.params.value("fnn.hidden.w").shape(), (Shape{5, 4}));
  EXPECT_EQ(m.params.value("fnn.out.w").shape(), (Shape{4, 5}));
  const std::vector<Code> zeros(4, 0);
  // Biases start at zero, so a zero input gives a zero output.
  for (double v : fnn_predict(m, zeros)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fnn_predict(m, std::vector<Code>{1, 2}), ShapeError);
}

TEST(Fnn, GradientMatchesFiniteDifferences) {
  FnnModel m = fnn_initialize(tiny_fnn(), 8);
  std::mt19937_64 rng(2);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    m.params.value(i) = deeptransport::testing::random_tensor(m.params.value(i).shape(), rng, -0.5, 0.5);
  const std::vector<Code> codes{2, 3, 1, 4};
  const Tensor target = Tensor::vector({1, 2, 3, 4});
  const Mask mask{1, 0, 1, 1};
  const double err = deeptransport::testing::max_gradient_error(m.params, [&](Tape& tape) {
    return tape.squared_error(fnn_forward(tape, m, codes), target, mask);
  });
  EXPECT_LT(err, 1e-5);
}

struct SynthFixture {
  TrafficGraph graph;
  ConditionStore store;
  SynthFixture() {
    SynthConfig c;
    c.vertices = 12;
    c.days = 2;
    c.peak_rate = 0.05;
    std::tie(graph, store) = synth_generate(c);
  }
};

TEST(Fnn, TrainingLowersValidationLossAndCheckpointRoundTrips) {
  SynthFixture f;
  SampleConfig sc{.history = 3, .radius = 2, .max_paths = 2, .horizons = {1, 2, 3, 4}};
  const SampleSet samples = make_samples(f.store, f.graph, sc);
  TrainConfig tc{.batch_size = 64, .workers = 1, .shard_size = 16, .adam = {.lr = 5e-3}, .max_epochs = 3};
  tc.eval_every = 20;
  TrainResult result;
  const FnnModel m = fnn_train(samples, tiny_fnn(), tc, &result);
  std::vector<double> val;
  for (const auto& r : result.log)
    if (r.val_loss) val.push_back(*r.val_loss);
  ASSERT_GE(val.size(), 2u);
  EXPECT_LT(result.progress.best_val, val.front());

  const auto path = temp_file("fnn.ckpt");
  const ProjectionThresholds th{0.5, 0.7, 0.9};
  save_fnn(path, m, th);
  const auto [back, th_back] = load_fnn(path);
  EXPECT_EQ(th_back, th);
  EXPECT_EQ(fnn_predict_all(back, samples, 1), fnn_predict_all(m, samples, 1));
  EXPECT_THROW(load_saes(path), DataError);
  std::filesystem::remove(path);

  FnnConfig wrong = tiny_fnn();
  wrong.history = 4;
  EXPECT_THROW(fnn_train(samples, wrong, tc), ConfigError);
}

// ------------------------------------------------------------------- SAEs

TEST(Saes, PretrainingReducesReconstructionError) {
  std::mt19937_64 rng(6);
  // Rows on a 2-D subspace of R^8 are compressible through 3 units.
  Tensor x({200, 8});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < 200; ++i) {
    const double a = u(rng), b = u(rng);
    for (std::size_t k = 0; k < 8; ++k) x.data()[i * 8 + k] = 0.5 * a * std::sin(double(k)) + 0.5 * b * std::cos(double(k));
  }
  TrainConfig short_run{.batch_size = 32, .workers = 1, .shard_size = 16, .adam = {.lr = 1e-2}, .max_epochs = 1};
  TrainConfig long_run = short_run;
  long_run.max_epochs = 60;
  const auto before = pretrain_autoencoder(x, 3, short_run, 1.0, 1);
  const auto after = pretrain_autoencoder(x, 3, long_run, 1.0, 1);
  EXPECT_LT(after.reconstruction, 0.5 * before.reconstruction);
  EXPECT_EQ(after.w.shape(), (Shape{3, 8}));
  EXPECT_EQ(after.decoder_w.shape(), (Shape{8, 3}));
}

TEST(Saes, InputLayoutAndOutputShapes) {
  SynthFixture f;
  const auto x = saes_input(f.store, 5, 2);
  ASSERT_EQ(x.size(), 12u * 3u);
  EXPECT_EQ(x[3 * 1 + 2], f.store.at(1, 3) / 4.0);
  EXPECT_THROW(saes_input(f.store, 1, 2), DataError);

  SampleConfig sc{.history = 2, .radius = 1, .max_paths = 1, .horizons = {1, 2}};
  const SampleSet samples = make_samples(f.store, f.graph, sc);
  SaesConfig cfg{.history = 2, .layers = {6, 4}, .horizons = {1, 2}};
  cfg.pretrain.max_epochs = 1;
  TrainConfig fine{.batch_size = 32, .workers = 1, .shard_size = 16, .adam = {}, .max_epochs = 1};
  const SaesModel m = saes_train(samples, cfg, fine);
  EXPECT_EQ(m.params.value("saes.enc0.w").shape(), (Shape{6, 36}));
  EXPECT_EQ(m.params.value("saes.head.w").shape(), (Shape{24, 4}));
  EXPECT_EQ(saes_predict_time(m, f.store, 10).size(), 24u);

  const auto preds = saes_predict_all(m, samples, 1);
  ASSERT_EQ(preds.size(), samples.size() * 2);
  const auto at = saes_predict_time(m, f.store, samples.ref(7).time);
  EXPECT_EQ(preds[7 * 2 + 1], at[samples.ref(7).vertex * 2 + 1]);

  const auto path = temp_file("saes.ckpt");
  save_saes(path, m, {});
  const auto [back, th] = load_saes(path);
  EXPECT_EQ(saes_predict_all(back, samples, 1), preds);
  std::filesystem::remove(path);
}

// ------------------------------------------------------------- evaluation

TEST(Evaluation, PerfectRankingScoresOneAndTablesHaveHeaders) {
  SynthFixture f;
  SampleConfig sc{.history = 2, .radius = 1, .max_paths = 1, .horizons = {3, 6}};
  const SampleSet samples = make_samples(f.store, f.graph, sc);
  std::vector<double> oracle(samples.size() * 2);
  std::vector<int> released;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      const Code c = f.store.at(samples.ref(i).vertex, samples.ref(i).time + sc.horizons[k]);
      oracle[i * 2 + k] = c;
      if (k == 0 && c) released.push_back(c);
    }
  // Labels themselves, ranked against thresholds fitted on the same labels,
  // reproduce every class.
  const auto th = fit_projection(released);
  const auto score = score_predictions("oracle", oracle, samples, th);
  ASSERT_EQ(score.horizons.size(), 2u);
  EXPECT_NEAR(score.horizons[0].report.kappa, 1.0, 1e-12);

  const std::vector<ModelScore> scores{score};
  const std::string csv = kappa_table_csv(scores);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "model,15min,30min,avg");
  EXPECT_EQ(nlohmann::json(to_json(score))["horizons"][1]["minutes"], 30);

  const auto rmse = rmse_table(oracle, samples, 3600);
  ASSERT_EQ(rmse.size(), 2u);
  EXPECT_EQ(rmse[0].size(), 24u);
  for (const auto& b : rmse[0]) EXPECT_EQ(b.rmse, 0.0);

  EXPECT_THROW(score_predictions("x", std::vector<double>(3), samples, th), ShapeError);
}

}  // namespace
