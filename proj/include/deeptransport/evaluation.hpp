#pragma once

#include <span>
#include <string>
#include <vector>

#include "deeptransport/dataset.hpp"
#include "deeptransport/metrics.hpp"
#include "deeptransport/training.hpp"
#include "json.hpp"

namespace deeptransport {

struct HorizonScore {
  std::size_t horizon = 0;
  KappaReport report;
};

struct ModelScore {
  std::string model;
  std::vector<HorizonScore> horizons;
  double average = 0.0;  // mean kappa over horizons
};

/// Projects predictions (row-major n × |horizons|) horizon by horizon over
/// the samples whose label is released, then scores them with qw_kappa.
ModelScore score_predictions(const std::string& model, std::span<const double> predictions, const SampleSet& samples,
                             const ProjectionThresholds& thresholds);

/// Projected classes per (sample, horizon); 0 where the label is not released.
std::vector<int> project_per_horizon(std::span<const double> predictions, const SampleSet& samples,
                                     const ProjectionThresholds& thresholds);

nlohmann::json to_json(const ModelScore& score);

/// Table layout: header `model,<h1>min,...,avg`, one row per model.
std::string kappa_table_csv(std::span<const ModelScore> scores);

/// RMSE of each horizon's raw predictions by time of day of the target step.
std::vector<std::vector<RmseBin>> rmse_table(std::span<const double> predictions, const SampleSet& samples,
                                             std::int64_t bin_seconds);

}  // namespace deeptransport
