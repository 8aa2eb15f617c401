#include "deeptransport/optim.hpp"

#include <cmath>
#include <random>

#include "deeptransport/errors.hpp"

namespace deeptransport {

AdamState::AdamState(const ParamSet& params, AdamConfig config) : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).shape());
    v_.emplace_back(params.value(i).shape());
  }
}

void AdamState::step(ParamSet& params, const Gradients& grads) {
  if (grads.size() != m_.size() || params.size() != m_.size())
    throw ShapeError("adam: parameter/gradient/state counts differ");
  if (!grads.all_finite()) throw NumericalError("adam: non-finite gradient");

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    Tensor& p = params.value(i);
    const Tensor& g = grads[i];
    if (g.size() != p.size()) throw ShapeError("adam: gradient shape mismatch for " + params.name(i));
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g[k];
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void AdamState::restore(std::size_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw ShapeError("adam: restored state size mismatch");
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m[i].shape() != m_[i].shape() || v[i].shape() != v_[i].shape())
      throw ShapeError("adam: restored accumulator shape mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

double fan_bound(std::size_t fan_in, std::size_t fan_out) {
  const std::size_t fan = fan_in + fan_out;
  return fan == 0 ? 0.0 : std::sqrt(6.0 / static_cast<double>(fan));
}

Tensor init_params(const Shape& shape, UniformInit scheme, std::uint64_t seed) {
  if (!(scheme.high >= scheme.low)) throw ConfigError("init_params: empty interval");
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  const double width = scheme.high - scheme.low;
  for (double& v : t.values()) {
    // 53 random mantissa bits -> [0, 1)
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = scheme.low + width * u;
  }
  return t;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_string(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace deeptransport
