#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "deeptransport/errors.hpp"
#include "deeptransport/synth.hpp"
#include "deeptransport/training.hpp"
#include "test_support.hpp"

using namespace deeptransport;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ------------------------------------------------------------- projection

TEST(Projection, HandRankedExample) {
  const std::vector<double> preds{0.1, 0.2, 0.9, 3.8};
  EXPECT_EQ(project_labels(preds, {0.5, 0.75, 0.75}), (std::vector<int>{1, 1, 2, 4}));
}

TEST(Projection, AllThresholdsOneGiveClassOne) {
  const std::vector<double> preds{3.0, -1.0, 8.0};
  EXPECT_EQ(project_labels(preds, {1.0, 1.0, 1.0}), (std::vector<int>{1, 1, 1}));
}

TEST(Projection, SkewedThresholdsOnTenPredictions) {
  std::vector<double> preds{5, 1, 9, 3, 7, 2, 8, 4, 6, 0};
  const auto classes = project_labels(preds, {0.882, 0.967, 0.995});
  std::array<int, 5> counts{};
  for (int c : classes) ++counts[c];
  EXPECT_EQ(counts[1], 8);
  EXPECT_EQ(counts[2], 1);
  EXPECT_EQ(counts[3], 0);
  EXPECT_EQ(counts[4], 1);
  EXPECT_EQ(classes[2], 4);  // the largest prediction
  EXPECT_EQ(classes[6], 2);
}

TEST(Projection, TiesKeepOriginalOrder) {
  const std::vector<double> preds{2.0, 2.0, 2.0, 2.0};
  EXPECT_EQ(project_labels(preds, {0.5, 0.75, 1.0}), (std::vector<int>{1, 1, 2, 3}));
}

TEST(Projection, FuzzedCountsObeyFloorArithmeticAndOrderIsMonotone) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    std::array<double, 3> q{u(rng), u(rng), u(rng)};
    std::sort(q.begin(), q.end());
    if (trial % 7 == 0) q[1] = q[0];
    std::vector<double> preds(n);
    for (double& p : preds) p = trial % 5 == 0 ? std::round(4 * u(rng)) : 5 * u(rng) - 0.5;
    const auto classes = project_labels(preds, {q[0], q[1], q[2]});
    std::array<std::size_t, 5> counts{};
    for (int c : classes) ++counts[c];
    const auto f = [&](double x) { return static_cast<std::size_t>(std::floor(x * static_cast<double>(n))); };
    ASSERT_EQ(counts[1], f(q[0]));
    ASSERT_EQ(counts[2], f(q[1]) - f(q[0]));
    ASSERT_EQ(counts[3], f(q[2]) - f(q[1]));
    ASSERT_EQ(counts[4], n - f(q[2]));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; j += 7)
        if (preds[i] < preds[j]) ASSERT_LE(classes[i], classes[j]);
  }
}

TEST(Projection, FitFromLabels) {
  std::vector<int> uniform;
  for (int c = 1; c <= 4; ++c) uniform.insert(uniform.end(), 10, c);
  EXPECT_EQ(fit_projection(uniform), (ProjectionThresholds{0.25, 0.5, 0.75}));
  EXPECT_EQ(fit_projection(std::vector<int>{3, 3, 0}), (ProjectionThresholds{0.0, 0.0, 1.0}));
  EXPECT_EQ(fit_projection(std::vector<int>{1, 1, 1}), (ProjectionThresholds{1.0, 1.0, 1.0}));
  std::vector<int> skewed;
  for (auto [code, n] : {std::pair{1, 882}, {2, 85}, {3, 28}, {4, 5}}) skewed.insert(skewed.end(), n, code);
  const auto t = fit_projection(skewed);
  EXPECT_NEAR(t.q1, 0.882, 1e-12);
  EXPECT_NEAR(t.q2, 0.967, 1e-12);
  EXPECT_NEAR(t.q3, 0.995, 1e-12);
}

TEST(Projection, JsonRejectsUnorderedThresholds) {
  const nlohmann::json good = ProjectionThresholds{0.8, 0.9, 0.99};
  EXPECT_EQ(good.get<ProjectionThresholds>(), (ProjectionThresholds{0.8, 0.9, 0.99}));
  EXPECT_THROW(nlohmann::json::parse("[0.9, 0.8, 1.0]").get<ProjectionThresholds>(), ConfigError);
  EXPECT_THROW(nlohmann::json::parse("[0.1, 0.2]").get<ProjectionThresholds>(), ConfigError);
}

// ---------------------------------------------------------------- training

struct Data {
  TrafficGraph graph;
  ConditionStore store;
};

Data small_data() {
  SynthConfig c;
  c.vertices = 20;
  c.days = 2;
  auto [g, s] = synth_generate(c);
  return {std::move(g), std::move(s)};
}

ModelConfig small_model() {
  ModelConfig m;
  m.history = 3;
  m.radius = 2;
  m.slot_width = 3;
  m.embed_dim = 4;
  m.feature_maps = 2;
  m.hidden = 6;
  m.attention_hidden = 4;
  return m;
}

TEST(ParallelShards, CoversEveryIndexOnceAndRethrows) {
  for (std::size_t workers : {1u, 3u, 8u}) {
    std::vector<int> seen(103, 0);
    parallel_shards(103, 10, workers, [&](std::size_t, std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) ++seen[i];
    });
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    EXPECT_THROW(parallel_shards(50, 10, workers,
                                 [](std::size_t s, std::size_t, std::size_t) {
                                   if (s == 3) throw NumericalError("boom");
                                 }),
                 NumericalError);
  }
}

TEST(BatchGradient, ShardSumEqualsWholeBatch) {
  const auto d = small_data();
  const ModelConfig mc = small_model();
  const auto set = stride_subset(make_samples(d.store, d.graph, mc.sample_config()), 4);
  const auto model = ModelParams::initialize(mc, 5);
  SampleLossFn fn = [&](Tape& tape, std::size_t i) {
    const Sample s = set.build(i);
    return loss(tape, forward(tape, model, s).predictions, s.labels, s.label_mask);
  };
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  Gradients whole, halves;
  const double l4 = batch_gradient(model.params, idx, fn, 4, 1, whole);
  const double l2 = batch_gradient(model.params, idx, fn, 2, 2, halves);
  // Manual oracle: one tape per sample, summed.
  Gradients manual(model.params);
  double lm = 0.0;
  for (std::size_t i : idx) {
    Tape tape;
    Var l = fn(tape, i);
    lm += tape.value(l)[0];
    tape.backward(l);
    tape.accumulate_param_grads(manual);
  }
  EXPECT_NEAR(l4, lm, 1e-12);
  EXPECT_NEAR(l2, lm, 1e-12);
  for (std::size_t p = 0; p < manual.size(); ++p)
    for (std::size_t k = 0; k < manual[p].size(); ++k) {
      EXPECT_NEAR(whole[p][k], manual[p][k], 1e-12);
      EXPECT_NEAR(halves[p][k], manual[p][k], 1e-12);
    }
}

TrainConfig quick_config() {
  TrainConfig t;
  t.batch_size = 32;
  t.workers = 1;
  t.shard_size = 8;
  t.max_epochs = 0;
  t.max_steps = 12;
  t.eval_every = 4;
  t.patience = 100;
  t.val_max_samples = 64;
  t.seed = 3;
  return t;
}

TEST(Train, WorkerCountDoesNotChangeParameters) {
  const auto d = small_data();
  const ModelConfig mc = small_model();
  const auto set = stride_subset(make_samples(d.store, d.graph, mc.sample_config()), 600);
  TrainConfig t = quick_config();
  const auto one = train(set, mc, t);
  t.workers = 4;
  const auto four = train(set, mc, t);
  EXPECT_EQ(one.model.params, four.model.params);
  ASSERT_EQ(one.result.log.size(), four.result.log.size());
  for (std::size_t i = 0; i < one.result.log.size(); ++i)
    EXPECT_EQ(one.result.log[i].train_loss, four.result.log[i].train_loss);
}

TEST(Train, RepeatedRunsWriteByteIdenticalCheckpoints) {
  const auto d = small_data();
  const ModelConfig mc = small_model();
  const auto set = stride_subset(make_samples(d.store, d.graph, mc.sample_config()), 400);
  const auto dir = std::filesystem::temp_directory_path() / "dt_train_repeat";
  std::filesystem::create_directories(dir);
  TrainRunOptions a, b;
  a.checkpoint = dir / "a.ckpt";
  b.checkpoint = dir / "b.ckpt";
  train(set, mc, quick_config(), a);
  train(set, mc, quick_config(), b);
  const std::string ca = slurp(*a.checkpoint), cb = slurp(*b.checkpoint);
  EXPECT_FALSE(ca.empty());
  EXPECT_EQ(ca, cb);
  std::filesystem::remove_all(dir);
}

TEST(Train, LossHalvesOnFiftySamplesWithinTwoHundredSteps) {
  const auto d = small_data();
  const ModelConfig mc;
  const auto all = make_samples(d.store, d.graph, mc.sample_config());
  // Prefer samples whose labels vary so the mean-label start is not already optimal.
  std::vector<SampleRef> refs;
  for (std::size_t i = 0; i < all.size() && refs.size() < 50; i += 7) {
    const auto labels = all.build(i).labels;
    if (std::any_of(labels.begin(), labels.end(), [](int c) { return c > 1; })) refs.push_back(all.ref(i));
  }
  ASSERT_EQ(refs.size(), 50u);
  const auto set = all.subset(refs);
  TrainConfig t;
  t.batch_size = 50;
  t.workers = 1;
  t.shard_size = 25;
  t.max_epochs = 0;
  t.max_steps = 200;
  t.validation_fraction = 0.0;
  const auto out = train(set, mc, t);
  ASSERT_EQ(out.result.log.size(), 200u);
  const double first = out.result.log.front().train_loss;
  const double last = out.result.log.back().train_loss;
  EXPECT_LT(last, 0.5 * first) << "first " << first << " last " << last;
  EXPECT_FALSE(out.result.early_stopped);
  for (const auto& r : out.result.log) EXPECT_FALSE(r.val_loss.has_value());
}

TEST(Train, ResumeContinuesTheSameTrajectory) {
  const auto d = small_data();
  const ModelConfig mc = small_model();
  const auto set = stride_subset(make_samples(d.store, d.graph, mc.sample_config()), 300);
  const auto dir = std::filesystem::temp_directory_path() / "dt_train_resume";
  std::filesystem::create_directories(dir);
  TrainConfig t = quick_config();
  t.validation_fraction = 0.0;
  t.max_steps = 16;
  const auto straight = train(set, mc, t);

  TrainConfig half = t;
  half.max_steps = 7;
  TrainRunOptions opt;
  opt.checkpoint = dir / "half.ckpt";
  train(set, mc, half, opt);
  EXPECT_EQ(load_model(*opt.checkpoint).progress.step, 7u);
  const auto resumed = resume(set, *opt.checkpoint, t);
  EXPECT_EQ(resumed.model.params, straight.model.params);
  EXPECT_EQ(resumed.result.progress.step, 16u);
  std::filesystem::remove_all(dir);
}

TEST(Train, EarlyStoppingRestoresBestParameters) {
  const auto d = small_data();
  const ModelConfig mc = small_model();
  const auto set = stride_subset(make_samples(d.store, d.graph, mc.sample_config()), 400);
  TrainConfig t = quick_config();
  t.adam.lr = 0.3;  // large enough to overshoot
  t.max_steps = 60;
  t.eval_every = 2;
  t.patience = 2;
  std::ostringstream log;
  TrainRunOptions opt;
  opt.log = &log;
  opt.log_wall_time = false;
  const auto out = train(set, mc, t, opt);
  const auto& p = out.result.progress;
  EXPECT_LE(p.best_step, p.step);
  if (out.result.early_stopped) EXPECT_EQ(p.bad_evals, t.patience);
  // The returned parameters score the best validation loss seen.
  auto [tr, val_full] = holdout_split(set, t.validation_fraction);
  const auto val = stride_subset(val_full, t.val_max_samples);
  double total = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Sample s = val.build(i);
    total += loss(forward(out.model, s), s.labels, s.label_mask);
  }
  EXPECT_NEAR(total / static_cast<double>(val.size()), p.best_val, 1e-9);
  // One JSON line per step with the documented keys.
  std::istringstream lines(log.str());
  std::string line;
  std::size_t count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("step") && j.contains("train_loss") && j.contains("val_loss"));
    EXPECT_FALSE(j.contains("wall_time"));
    ++count;
  }
  EXPECT_EQ(count, p.step);
}

TEST(Train, HoldoutSplitIsChronological) {
  const auto d = small_data();
  const ModelConfig mc = small_model();
  const auto set = make_samples(d.store, d.graph, mc.sample_config());
  const auto [tr, val] = holdout_split(set, 0.1);
  std::size_t last_label = 0, first_val = static_cast<std::size_t>(-1);
  for (const auto& r : tr.refs()) last_label = std::max(last_label, r.time + mc.sample_config().max_horizon());
  for (const auto& r : val.refs()) first_val = std::min(first_val, r.time);
  EXPECT_LT(last_label, first_val);
  EXPECT_GT(val.size(), set.size() / 20);
  EXPECT_LT(val.size(), set.size() / 5);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  nlohmann::json j = t;
  EXPECT_EQ(j.at("batch_size"), 1100);
  EXPECT_EQ(j.at("workers"), 11);
  EXPECT_EQ(j.at("lr"), 1e-3);
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  t.patience = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  t = {};
  t.batch_size = 0;
  EXPECT_THROW(t.validate(), ConfigError);
}

}  // namespace
