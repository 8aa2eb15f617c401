#include "deeptransport/evaluation.hpp"

#include <sstream>

#include "deeptransport/errors.hpp"

namespace deeptransport {

namespace {

void check_layout(std::span<const double> predictions, const SampleSet& samples) {
  if (predictions.size() != samples.size() * samples.config().horizons.size())
    throw ShapeError("prediction count does not match samples × horizons");
}

}  // namespace

std::vector<int> project_per_horizon(std::span<const double> predictions, const SampleSet& samples,
                                     const ProjectionThresholds& thresholds) {
  check_layout(predictions, samples);
  const auto& horizons = samples.config().horizons;
  const std::size_t hc = horizons.size();
  std::vector<int> out(predictions.size(), 0);
  for (std::size_t k = 0; k < hc; ++k) {
    std::vector<std::size_t> rows;
    std::vector<double> values;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const SampleRef r = samples.ref(i);
      if (samples.store().at(r.vertex, r.time + horizons[k]) == 0) continue;
      rows.push_back(i);
      values.push_back(predictions[i * hc + k]);
    }
    const auto classes = project_labels(values, thresholds);
    for (std::size_t j = 0; j < rows.size(); ++j) out[rows[j] * hc + k] = classes[j];
  }
  return out;
}

ModelScore score_predictions(const std::string& model, std::span<const double> predictions, const SampleSet& samples,
                             const ProjectionThresholds& thresholds) {
  const auto classes = project_per_horizon(predictions, samples, thresholds);
  const auto& horizons = samples.config().horizons;
  const std::size_t hc = horizons.size();
  ModelScore score;
  score.model = model;
  for (std::size_t k = 0; k < hc; ++k) {
    std::vector<int> truth, pred;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const SampleRef r = samples.ref(i);
      const Code c = samples.store().at(r.vertex, r.time + horizons[k]);
      if (c == 0) continue;
      truth.push_back(c);
      pred.push_back(classes[i * hc + k]);
    }
    score.horizons.push_back({horizons[k], qw_kappa(truth, pred)});
    score.average += score.horizons.back().report.kappa;
  }
  score.average /= static_cast<double>(hc);
  return score;
}

namespace {

nlohmann::json matrix_json(const Matrix4& m) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& row : m) j.push_back(row);
  return j;
}

}  // namespace

nlohmann::json to_json(const ModelScore& score) {
  nlohmann::json horizons = nlohmann::json::array();
  for (const auto& h : score.horizons)
    horizons.push_back({{"horizon_steps", h.horizon},
                        {"minutes", h.horizon * kStepSeconds / 60},
                        {"kappa", h.report.kappa},
                        {"count", h.report.count},
                        {"observed", matrix_json(h.report.observed)},
                        {"expected", matrix_json(h.report.expected)},
                        {"weights", matrix_json(h.report.weights)}});
  return {{"model", score.model}, {"average_kappa", score.average}, {"horizons", horizons}};
}

std::string kappa_table_csv(std::span<const ModelScore> scores) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "model";
  if (!scores.empty())
    for (const auto& h : scores.front().horizons) out << ',' << h.horizon * kStepSeconds / 60 << "min";
  out << ",avg\n";
  for (const auto& s : scores) {
    out << s.model;
    for (const auto& h : s.horizons) out << ',' << h.report.kappa;
    out << ',' << s.average << '\n';
  }
  return out.str();
}

std::vector<std::vector<RmseBin>> rmse_table(std::span<const double> predictions, const SampleSet& samples,
                                             std::int64_t bin_seconds) {
  check_layout(predictions, samples);
  const auto& horizons = samples.config().horizons;
  const std::size_t hc = horizons.size();
  std::vector<std::vector<RmseBin>> out;
  for (std::size_t k = 0; k < hc; ++k) {
    std::vector<int> truth;
    std::vector<double> pred;
    std::vector<std::int64_t> tod;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const SampleRef r = samples.ref(i);
      const std::size_t t = r.time + horizons[k];
      const Code c = samples.store().at(r.vertex, t);
      if (c == 0) continue;
      truth.push_back(c);
      pred.push_back(predictions[i * hc + k]);
      tod.push_back(samples.store().time_of_day(t));
    }
    out.push_back(truth.empty() ? std::vector<RmseBin>{} : rmse_by_time_of_day(truth, pred, tod, bin_seconds));
  }
  return out;
}

}  // namespace deeptransport
