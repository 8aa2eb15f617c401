#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "deeptransport/baselines.hpp"
#include "deeptransport/dataset.hpp"
#include "deeptransport/metrics.hpp"
#include "deeptransport/model.hpp"
#include "deeptransport/synth.hpp"
#include "deeptransport/training.hpp"
#include "json.hpp"

namespace deeptransport::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

struct DataPaths {
  std::filesystem::path edges;
  std::filesystem::path attributes;  // may be empty
  std::filesystem::path conditions;
  TimeFormat time_format = TimeFormat::step_index;
  bool strict = true;
};

/// Everything one invocation needs. Relative paths resolve against the
/// working directory. The seed has no default: a run without one is a
/// configuration error.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  DataPaths data;
  std::filesystem::path output_dir = ".";
  std::filesystem::path checkpoint;  // input of eval/predict/attention, resume source of train
  bool resume = false;
  double split = 0.8;
  /// deeptransport | rw | arima | fnn | saes
  std::string model_kind = "deeptransport";

  ModelConfig model;
  TrainConfig train;
  FnnConfig fnn;
  SaesConfig saes;
  ArimaRunConfig arima;
  SynthConfig synth;

  std::size_t nmi_max_radius = 5;
  NmiOptions nmi;
  std::size_t attention_max_samples = 2000;
  std::int64_t rmse_bin_seconds = 1800;
  bool log_wall_time = true;

  /// Extra inputs of eval: prediction CSVs scored next to the checkpoint.
  std::vector<std::filesystem::path> eval_predictions;

  std::uint64_t require_seed() const;
  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Unknown top-level keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);

/// Reads a JSON config file and applies `key.path=value` overrides; values
/// parse as JSON when they can, otherwise as strings.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

/// Shared by every data-consuming command.
struct LoadedData {
  TrafficGraph graph;
  ConditionStore store;
};
LoadedData load_data(const DataPaths& paths);

struct Split {
  SampleSet train;
  SampleSet test;
};
/// Samples of the model's history and horizons, split chronologically.
Split split_samples(const LoadedData& data, const RunConfig& config);

/// Schema `model,vertex,time,horizon,prediction,label`.
void write_predictions_csv(const std::filesystem::path& path, const std::string& model,
                           std::span<const double> predictions, const SampleSet& samples, TimeFormat format);
/// Reads one model's predictions back onto `samples`; every sample must be present.
std::pair<std::string, std::vector<double>> read_predictions_csv(const std::filesystem::path& path,
                                                                 const SampleSet& samples, TimeFormat format);

/// Commands. Each writes its artifacts under config.output_dir and returns
/// a short summary printed by the executable.
nlohmann::json cmd_synth(const RunConfig& config);
nlohmann::json cmd_train(const RunConfig& config);
nlohmann::json cmd_predict(const RunConfig& config);
nlohmann::json cmd_eval(const RunConfig& config);
nlohmann::json cmd_attention(const RunConfig& config);
nlohmann::json cmd_nmi(const RunConfig& config);
nlohmann::json cmd_baseline(const RunConfig& config);

/// Full command line entry; maps exceptions to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deeptransport::cli
