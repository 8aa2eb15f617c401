#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "deeptransport/dataset.hpp"
#include "deeptransport/model.hpp"
#include "deeptransport/optim.hpp"
#include "deeptransport/tape.hpp"
#include "json.hpp"

namespace deeptransport {

struct TrainConfig {
  std::size_t batch_size = 1100;
  std::size_t workers = 11;
  /// Samples per gradient shard. Shards, not workers, fix the summation
  /// order, so results do not depend on the worker count.
  std::size_t shard_size = 100;
  AdamConfig adam;
  std::size_t max_epochs = 20;
  std::size_t max_steps = 0;  // 0: no step cap
  std::size_t patience = 5;
  std::size_t eval_every = 100;
  /// Chronological tail of the training range held out for early stopping.
  double validation_fraction = 0.1;
  std::size_t val_max_samples = 5000;  // 0: use every validation sample
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Resumable state of a training run.
struct TrainProgress {
  std::size_t step = 0;  // completed optimizer steps
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  std::size_t bad_evals = 0;
};

struct TrainLogRecord {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double wall_time = 0.0;
};

nlohmann::json to_json(const TrainLogRecord& r, bool with_wall_time);

struct TrainHooks {
  std::function<void(const TrainLogRecord&)> on_log;
  /// Called after every validation improvement with the improved parameters.
  std::function<void(const ParamSet&, const AdamState&, const TrainProgress&)> on_improve;
};

struct TrainResult {
  TrainProgress progress;
  bool early_stopped = false;
  std::vector<TrainLogRecord> log;
};

/// Builds the loss of sample `index` on `tape`; must return a scalar node.
using SampleLossFn = std::function<Var(Tape& tape, std::size_t index)>;

/// Minibatch Adam on the mean per-sample loss. Batches come from a
/// per-epoch permutation seeded by (seed, epoch), so step s always sees the
/// same batch and a run can resume from any checkpoint. Each batch is cut
/// into shards of `shard_size`; shard gradients are summed in shard order.
/// With a validation set the best parameters seen are left in `params`.
TrainResult train_generic(ParamSet& params, AdamState& adam, TrainProgress progress, std::size_t n_train,
                          const SampleLossFn& train_loss, std::size_t n_val, const SampleLossFn& val_loss,
                          const TrainConfig& config, const TrainHooks& hooks = {});

/// Runs fn(shard, begin, end) over consecutive shards of [0, n) on up to
/// `workers` threads. Exceptions are rethrown on the caller.
void parallel_shards(std::size_t n, std::size_t shard_size, std::size_t workers,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Sum of per-sample gradients over `indices`, accumulated shard by shard in
/// index order. Returns the summed loss.
double batch_gradient(const ParamSet& params, std::span<const std::size_t> indices, const SampleLossFn& loss_fn,
                      std::size_t shard_size, std::size_t workers, Gradients& out);

/// Cumulative class proportions (q1, q2, q3) used to rank-project continuous
/// predictions onto codes 1..4.
struct ProjectionThresholds {
  double q1 = 1.0, q2 = 1.0, q3 = 1.0;
  friend bool operator==(const ProjectionThresholds&, const ProjectionThresholds&) = default;
};

void to_json(nlohmann::json& j, const ProjectionThresholds& t);
void from_json(const nlohmann::json& j, ProjectionThresholds& t);

/// Thresholds from released (non-zero) training labels.
ProjectionThresholds fit_projection(std::span<const int> labels);

/// Ranks predictions ascending (stable); the first floor(q1·n) become 1, up
/// to floor(q2·n) 2, up to floor(q3·n) 3, the rest 4. Output keeps input order.
std::vector<int> project_labels(std::span<const double> predictions, const ProjectionThresholds& thresholds);

/// Splits training samples at a chronological cut inside their time range:
/// the last `fraction` becomes validation, earlier samples whose labels
/// end before the cut stay for training.
std::pair<SampleSet, SampleSet> holdout_split(const SampleSet& samples, double fraction);

/// Deterministic evenly-strided subset of at most `max_samples` samples.
SampleSet stride_subset(const SampleSet& samples, std::size_t max_samples);

struct TrainRunOptions {
  std::ostream* log = nullptr;  // JSON lines
  bool log_wall_time = true;
  /// Written at every validation improvement (and at the end when there is
  /// no validation set).
  std::optional<std::filesystem::path> checkpoint;
  nlohmann::json extra_manifest = nlohmann::json::object();
};

struct TrainOutcome {
  ModelParams model;
  ProjectionThresholds thresholds;
  TrainResult result;
};

/// Trains DeepTransport on `samples`, holding out their chronological tail
/// for early stopping. Output-head biases start at the mean training label.
TrainOutcome train(const SampleSet& samples, const ModelConfig& model_config, const TrainConfig& config,
                   const TrainRunOptions& options = {});

/// Continues a run from a checkpoint written by train().
TrainOutcome resume(const SampleSet& samples, const std::filesystem::path& checkpoint, const TrainConfig& config,
                    const TrainRunOptions& options = {});

/// Predictions for every sample, row-major n × |horizons|.
std::vector<double> predict_all(const ModelParams& model, const SampleSet& samples, std::size_t workers);

/// Saves / loads a trained model with its projection thresholds.
void save_model(const std::filesystem::path& path, const ModelParams& model, const ProjectionThresholds& thresholds,
                const std::optional<AdamState>& adam = std::nullopt, const TrainProgress& progress = {},
                const nlohmann::json& extra = nlohmann::json::object());

struct LoadedModel {
  ModelParams model;
  ProjectionThresholds thresholds;
  std::optional<AdamState> adam;
  TrainProgress progress;
  nlohmann::json manifest;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace deeptransport
