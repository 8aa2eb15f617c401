#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "deeptransport/dataset.hpp"
#include "deeptransport/tape.hpp"
#include "deeptransport/training.hpp"
#include "json.hpp"

namespace deeptransport {

// ------------------------------------------------------------ random walk

/// current + N(0, 1), one independent draw per horizon.
std::vector<double> rw_predict(double current, std::size_t horizon_count, std::uint64_t seed);

/// Row-major n × |horizons|. The current code of a sample is its latest
/// released code (not-released steps carry the previous value forward).
std::vector<double> rw_predict_all(const SampleSet& samples, std::uint64_t seed);

/// Copy of `series` with not-released (0) entries replaced by the previous
/// released code; leading zeros take the first released code (1 if none).
std::vector<double> carry_forward(std::span<const Code> series);

// ------------------------------------------------------------------ ARIMA

struct ArimaOrder {
  int p = 0, d = 0, q = 0;
  friend bool operator==(const ArimaOrder&, const ArimaOrder&) = default;
};

struct ArimaGrid {
  int max_p = 5, max_d = 2, max_q = 5;
};

struct ArimaModel {
  ArimaOrder order;
  double mean = 0.0;  // constant of the differenced series; fitted only when d = 0
  std::vector<double> phi;
  std::vector<double> theta;
  double css = 0.0;
  double aic = 0.0;
  std::size_t residuals = 0;
};

void to_json(nlohmann::json& j, const ArimaModel& m);
void from_json(const nlohmann::json& j, ArimaModel& m);

/// Conditional-sum-of-squares fit of one order by Levenberg-Marquardt.
/// Residuals are summed over series indices >= `start` (start must be at
/// least p + d). Returns nullopt if no stationary and invertible optimum
/// is found.
std::optional<ArimaModel> arima_fit_order(std::span<const double> series, ArimaOrder order, std::size_t start);

/// Grid search over p <= max_p, d <= max_d, q <= max_q minimizing AIC on a
/// residual window shared by every order. Ties go to the smaller p + q,
/// then p, then d. Throws DataError if the series is shorter than
/// 2 · (max_p + max_d + max_q) + 1.
ArimaModel arima_fit(std::span<const double> series, const ArimaGrid& grid = {});

/// Forecasts 1..max(horizons) steps past the end of `history` and returns
/// the values at the requested horizons.
std::vector<double> arima_forecast(const ArimaModel& model, std::span<const double> history,
                                   std::span<const std::size_t> horizons);

struct ArimaRunConfig {
  ArimaGrid grid;
  std::size_t fit_length = 576;     // tail of the training series used for fitting
  std::size_t filter_length = 288;  // history window replayed before each forecast
  std::size_t workers = 1;
};

/// One fitted model per vertex, from steps [0, train_end) of the store.
std::vector<ArimaModel> arima_fit_store(const ConditionStore& store, std::size_t train_end, const ArimaRunConfig& config);
std::vector<double> arima_predict_all(const std::vector<ArimaModel>& models, const SampleSet& samples,
                                      const ArimaRunConfig& config);

// -------------------------------------------------------------------- FNN

struct FnnConfig {
  std::size_t history = 12;
  std::size_t hidden = 32;
  std::vector<std::size_t> horizons{3, 6, 9, 12};
  double init_scale = 1.0;
};

void to_json(nlohmann::json& j, const FnnConfig& c);
void from_json(const nlohmann::json& j, FnnConfig& c);

struct FnnModel {
  FnnConfig config;
  ParamSet params;  // fnn.hidden.w [hidden, p+1], fnn.hidden.b, fnn.out.w [H, hidden], fnn.out.b
};

FnnModel fnn_initialize(const FnnConfig& config, std::uint64_t seed);
/// Input: the target's own p + 1 codes, newest first.
Var fnn_forward(Tape& tape, const FnnModel& model, std::span<const Code> codes);
std::vector<double> fnn_predict(const FnnModel& model, std::span<const Code> codes);
FnnModel fnn_train(const SampleSet& samples, const FnnConfig& config, const TrainConfig& train,
                   TrainResult* result = nullptr);
std::vector<double> fnn_predict_all(const FnnModel& model, const SampleSet& samples, std::size_t workers);

// ------------------------------------------------------------------- SAEs

struct SaesConfig {
  std::size_t history = 12;
  std::vector<std::size_t> layers{256, 256, 256, 256};
  std::vector<std::size_t> horizons{3, 6, 9, 12};
  /// Optimizer settings of each greedy autoencoder stage; fine-tuning uses
  /// the main training configuration.
  TrainConfig pretrain{.batch_size = 64, .workers = 1, .shard_size = 16, .adam = {}, .max_epochs = 5};
  double init_scale = 1.0;
};

void to_json(nlohmann::json& j, const SaesConfig& c);
void from_json(const nlohmann::json& j, SaesConfig& c);

struct SaesModel {
  SaesConfig config;
  std::size_t vertices = 0;
  ParamSet params;  // saes.enc{k}.w/b, saes.head.w/b
};

/// Input of time t: every vertex's codes c(v,t), ..., c(v,t-p), scaled by
/// 1/4, concatenated in vertex-index order.
std::vector<double> saes_input(const ConditionStore& store, std::size_t t, std::size_t history);

struct AutoencoderLayer {
  Tensor w, b;                 // encoder, sigmoid
  Tensor decoder_w, decoder_b;  // linear reconstruction
  double reconstruction = 0.0;  // mean squared error per input row after training
};

/// Trains one sigmoid-encoder / linear-decoder autoencoder on the rows of
/// `inputs` (n × in).
AutoencoderLayer pretrain_autoencoder(const Tensor& inputs, std::size_t hidden, const TrainConfig& config,
                                      double init_scale, std::uint64_t seed);

/// Greedy layer-wise pretraining, then a linear multi-task head over
/// vertices × horizons, then end-to-end fine-tuning.
SaesModel saes_train(const SampleSet& samples, const SaesConfig& config, const TrainConfig& finetune,
                     TrainResult* result = nullptr);
/// Outputs for time t: vertices × |horizons|, vertex-major.
std::vector<double> saes_predict_time(const SaesModel& model, const ConditionStore& store, std::size_t t);
std::vector<double> saes_predict_all(const SaesModel& model, const SampleSet& samples, std::size_t workers);

/// Checkpoints for the neural baselines share the archive format.
void save_fnn(const std::filesystem::path& path, const FnnModel& model, const ProjectionThresholds& thresholds);
std::pair<FnnModel, ProjectionThresholds> load_fnn(const std::filesystem::path& path);
void save_saes(const std::filesystem::path& path, const SaesModel& model, const ProjectionThresholds& thresholds);
std::pair<SaesModel, ProjectionThresholds> load_saes(const std::filesystem::path& path);

}  // namespace deeptransport
