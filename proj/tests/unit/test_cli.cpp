#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "deeptransport/cli.hpp"
#include "deeptransport/csv.hpp"
#include "deeptransport/errors.hpp"
#include "deeptransport/evaluation.hpp"

using namespace deeptransport;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct CliResult {
  int code = 0;
  std::string out, err;
};

CliResult invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "deeptransport");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "dt_cli_tests";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto r = invoke({"synth", "--seed", "11", "-o", (root / "data").string(), "--set", "synth.vertices=16",
                           "--set", "synth.days=2", "--set", "synth.peak_rate=0.05"});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ofstream(root / "run.json") << R"({
      "seed": 4,
      "data": {"edges": "EDGES", "attributes": "ATTRS", "conditions": "CONDS"},
      "model": {"embed_dim": 3, "hidden": 4, "attention_hidden": 4, "radius": 3, "slot_width": 2, "history": 4},
      "train": {"batch_size": 16, "workers": 2, "shard_size": 4, "max_steps": 12, "eval_every": 4,
                "val_max_samples": 200},
      "attention": {"max_samples": 50}
    })";
    std::string text = slurp(root / "run.json");
    auto put = [&](const std::string& key, const fs::path& p) { text.replace(text.find(key), key.size(), p.string()); };
    put("EDGES", root / "data/edges.csv");
    put("ATTRS", root / "data/attributes.csv");
    put("CONDS", root / "data/conditions.csv");
    std::ofstream(root / "run.json") << text;
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string config() { return (root / "run.json").string(); }
  static std::string dir(const std::string& name) { return (root / name).string(); }
};
fs::path CliTest::root;

TEST_F(CliTest, SynthIsReproducibleAndReadable) {
  const auto a = invoke({"synth", "--seed", "11", "-o", dir("synth_again"), "--set", "synth.vertices=16", "--set",
                         "synth.days=2", "--set", "synth.peak_rate=0.05"});
  ASSERT_EQ(a.code, 0) << a.err;
  for (const char* f : {"edges.csv", "attributes.csv", "conditions.csv"})
    EXPECT_EQ(slurp(root / "data" / f), slurp(root / "synth_again" / f)) << f;
  const auto cfg = cli::load_run_config(fs::path(config()), {});
  const auto data = cli::load_data(cfg.data);
  EXPECT_EQ(data.graph.vertex_count(), 16u);
  EXPECT_EQ(data.store.steps(), 2u * 288u);
}

TEST_F(CliTest, TrainTwiceGivesByteIdenticalCheckpoints) {
  for (const char* d : {"train_a", "train_b"}) {
    const auto r = invoke({"train", "-c", config(), "-o", dir(d), "--no-wall-time"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(root / "train_a/model.ckpt"), slurp(root / "train_b/model.ckpt"));
  EXPECT_EQ(slurp(root / "train_a/train_log.jsonl"), slurp(root / "train_b/train_log.jsonl"));
  EXPECT_FALSE(slurp(root / "train_a/train_log.jsonl").empty());
  EXPECT_TRUE(fs::exists(root / "train_a/thresholds.json"));
}

TEST_F(CliTest, ResumeReproducesTheUninterruptedRun) {
  const std::vector<std::string> common{"--no-wall-time", "--set", "train.validation_fraction=0"};
  auto args = [&](std::vector<std::string> a) {
    a.insert(a.end(), common.begin(), common.end());
    return a;
  };
  ASSERT_EQ(invoke(args({"train", "-c", config(), "-o", dir("full"), "--max-steps", "10"})).code, 0);
  ASSERT_EQ(invoke(args({"train", "-c", config(), "-o", dir("part"), "--max-steps", "4"})).code, 0);
  const auto r = invoke(args({"train", "-c", config(), "-o", dir("part"), "--max-steps", "10", "--resume",
                              "--checkpoint", dir("part") + "/model.ckpt"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(root / "full/train_log.jsonl"), slurp(root / "part/train_log.jsonl"));
  EXPECT_EQ(slurp(root / "full/model.ckpt"), slurp(root / "part/model.ckpt"));
}

TEST_F(CliTest, ExitCodesSeparateFailureKinds) {
  EXPECT_EQ(invoke({"train", "-c", config(), "--set", "data.conditions=/nonexistent.csv"}).code, cli::kExitData);
  const auto missing = invoke({"train", "-c", config(), "--set", "data.conditions=/nonexistent.csv"});
  EXPECT_NE(missing.err.find("/nonexistent.csv"), std::string::npos);
  EXPECT_EQ(invoke({"train", "-c", config(), "--set", "seed=null"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"train", "-c", config(), "--set", "colour=blue"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"train", "-c", config(), "--set", "split=1.5"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"frobnicate"}).code, cli::kExitConfig);
  EXPECT_EQ(invoke({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(invoke({"eval", "-c", config(), "--checkpoint", "/nonexistent.ckpt"}).code, cli::kExitData);
}

TEST_F(CliTest, OverridesTakePrecedenceOverFileOverDefaults) {
  const auto c = cli::load_run_config(fs::path(config()), {"train.max_steps=7", "model.radius=2"});
  EXPECT_EQ(c.train.max_steps, 7u);
  EXPECT_EQ(c.model.radius, 2u);
  EXPECT_EQ(c.train.batch_size, 16u);  // file
  EXPECT_EQ(c.train.patience, TrainConfig{}.patience);  // default
  EXPECT_EQ(c.model.horizons, (std::vector<std::size_t>{3, 6, 9, 12}));
  EXPECT_THROW(cli::load_run_config(fs::path(config()), {"train.batch_size=\"many\""}), ConfigError);
  EXPECT_THROW(cli::load_run_config(fs::path(config()), {"noequals"}), ConfigError);
}

TEST_F(CliTest, EvalIsRepeatableAndMatchesDirectKappa) {
  ASSERT_EQ(invoke({"train", "-c", config(), "-o", dir("ev_model"), "--no-wall-time"}).code, 0);
  const std::string ckpt = dir("ev_model") + "/model.ckpt";
  for (const char* d : {"ev_a", "ev_b"}) ASSERT_EQ(invoke({"eval", "-c", config(), "--checkpoint", ckpt, "-o", dir(d)}).code, 0);
  for (const char* f : {"metrics.json", "kappa_table.csv", "rmse_by_time.csv"})
    EXPECT_EQ(slurp(root / "ev_a" / f), slurp(root / "ev_b" / f)) << f;

  ASSERT_EQ(invoke({"predict", "-c", config(), "--checkpoint", ckpt, "-o", dir("pr")}).code, 0);
  const auto table = csv::read(root / "pr/predictions_deeptransport-r3p4.csv");
  const auto thresholds = load_model(ckpt).thresholds;
  const auto metrics = nlohmann::json::parse(slurp(root / "ev_a/metrics.json"));
  ASSERT_EQ(metrics.size(), 1u);
  // Rebuild each horizon's kappa from the dumped CSV alone.
  std::map<std::string, std::pair<std::vector<int>, std::vector<double>>> by_h;
  for (const auto& row : table.rows) {
    if (row[5] == "0") continue;
    by_h[row[3]].first.push_back(std::stoi(row[5]));
    by_h[row[3]].second.push_back(std::stod(row[4]));
  }
  for (const auto& h : metrics[0]["horizons"]) {
    const auto& [truth, pred] = by_h[std::to_string(h["horizon_steps"].get<int>())];
    const double direct = qw_kappa(truth, project_labels(pred, thresholds)).kappa;
    EXPECT_NEAR(h["kappa"].get<double>(), direct, 1e-12);
  }
  const std::string header = slurp(root / "ev_a/kappa_table.csv").substr(0, 34);
  EXPECT_EQ(header, "model,15min,30min,45min,60min,avg\n");
}

TEST_F(CliTest, BaselinePredictionsRoundTripThroughEval) {
  const auto r = invoke({"baseline", "-c", config(), "--model", "rw", "-o", dir("bl")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = invoke({"eval", "-c", config(), "--predictions", dir("bl") + "/predictions_rw.csv", "-o", dir("bl_ev")});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto direct = nlohmann::json::parse(slurp(root / "bl/metrics_rw.json"));
  const auto via_eval = nlohmann::json::parse(slurp(root / "bl_ev/metrics.json"));
  EXPECT_EQ(direct["average_kappa"].get<double>(), via_eval[0]["average_kappa"].get<double>());
  EXPECT_EQ(invoke({"baseline", "-c", config(), "--model", "deeptransport"}).code, cli::kExitConfig);
}

TEST_F(CliTest, AttentionDumpIsNormalizedAndAveragedCorrectly) {
  ASSERT_EQ(invoke({"train", "-c", config(), "-o", dir("at_model"), "--no-wall-time"}).code, 0);
  ASSERT_EQ(invoke({"attention", "-c", config(), "--checkpoint", dir("at_model") + "/model.ckpt", "-o", dir("at")}).code, 0);
  const auto dump = csv::read(root / "at/attention_dump.csv");
  EXPECT_EQ(dump.header, (std::vector<std::string>{"vertex", "time", "horizon", "side", "order", "weight"}));
  std::map<std::string, double> sums;
  std::map<std::string, std::pair<double, int>> means;
  for (const auto& row : dump.rows) {
    sums[row[0] + '|' + row[1] + '|' + row[2] + '|' + row[3]] += std::stod(row[5]);
    auto& m = means[row[3] + '|' + row[4] + '|' + row[2]];
    m.first += std::stod(row[5]);
    m.second += 1;
  }
  EXPECT_EQ(sums.size(), 50u * 4u * 2u);
  for (const auto& [k, s] : sums) EXPECT_NEAR(s, 1.0, 1e-12) << k;
  const auto avg = csv::read(root / "at/attention_mean.csv");
  EXPECT_EQ(avg.rows.size(), 2u * 4u * 3u);
  for (const auto& row : avg.rows) {
    const auto& m = means.at(row[0] + '|' + row[1] + '|' + row[2]);
    EXPECT_NEAR(std::stod(row[3]), m.first / m.second, 1e-12);
  }
}

TEST_F(CliTest, NmiReportDecaysOnSyntheticAndIsEmptyWithoutNeighbours) {
  const auto r = invoke({"nmi", "-c", config(), "-o", dir("nmi")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(root / "nmi/nmi.json"));
  ASSERT_EQ(report.size(), 5u);
  EXPECT_GT(report[0]["nmi"].get<double>(), report[2]["nmi"].get<double>());

  // Two isolated edges: nothing sits two hops away.
  std::ofstream(root / "iso_edges.csv") << "from,to\na,b\nc,d\n";
  std::ofstream(root / "iso_cond.csv") << "vertex,timestamp,code\na,0,1\nb,0,2\nc,1,3\nd,1,4\n";
  const auto iso = invoke({"nmi", "--seed", "1", "-o", dir("nmi_iso"), "--set",
                           "data.edges=" + (root / "iso_edges.csv").string(), "--set",
                           "data.conditions=" + (root / "iso_cond.csv").string(), "--set", "nmi.max_radius=2"});
  ASSERT_EQ(iso.code, 0) << iso.err;
  EXPECT_EQ(slurp(root / "nmi_iso/nmi_by_radius.csv").substr(slurp(root / "nmi_iso/nmi_by_radius.csv").find("\n2,")),
            "\n2,\n");
}

}  // namespace
