#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "deeptransport/tape.hpp"

namespace deeptransport {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators for every tensor of a ParamSet.
class AdamState {
 public:
  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig config);

  /// One bias-corrected Adam update. Throws NumericalError (and leaves the
  /// parameters untouched) if any gradient is non-finite.
  void step(ParamSet& params, const Gradients& grads);

  const AdamConfig& config() const noexcept { return config_; }
  std::size_t steps() const noexcept { return steps_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }
  std::size_t size() const noexcept { return m_.size(); }

  /// Restores accumulators from a checkpoint.
  void restore(std::size_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct UniformInit {
  double low = -0.1;
  double high = 0.1;
};

/// Symmetric Glorot-style bound sqrt(6 / (fan_in + fan_out)).
double fan_bound(std::size_t fan_in, std::size_t fan_out);

/// Tensor of i.i.d. uniform draws on [low, high); a pure function of seed.
Tensor init_params(const Shape& shape, UniformInit scheme, std::uint64_t seed);

/// Mixes a base seed with a stream label into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t hash_string(std::string_view text);

}  // namespace deeptransport
