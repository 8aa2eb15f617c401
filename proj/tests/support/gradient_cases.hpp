#pragma once

#include <functional>
#include <ostream>
#include <random>
#include <vector>

#include "deeptransport/tape.hpp"
#include "test_support.hpp"

namespace deeptransport::testing {

// Scalar probe Σ out ⊙ R with a fixed random R, so every output entry gets
// a distinct upstream gradient.
inline Var probe(Tape& tape, Var out, const Tensor& r) { return tape.sum(tape.mul(out, tape.constant(r))); }

struct GradCase {
  const char* name;
  std::function<void(ParamSet&, std::mt19937_64&)> init;
  std::function<Var(Tape&, const ParamSet&, const Tensor&)> build;
  Shape out_shape;
};

inline void PrintTo(const GradCase& c, std::ostream* os) { *os << c.name; }

namespace detail {
inline Var p(Tape& t, const ParamSet& ps, std::size_t i) { return t.param(ps, i); }
inline const Mask kRowMask{1, 0, 1, 1};
inline const Mask kColMask{0, 1, 1};
}  // namespace detail

/// One case per tape primitive; each reduces its output to a scalar.
inline std::vector<GradCase> primitive_gradient_cases() {
  using detail::p, detail::kRowMask, detail::kColMask;
  return {
    GradCase{"affine",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("x", random_tensor({3, 4}, g));
               ps.add("w", random_tensor({2, 4}, g));
               ps.add("b", random_tensor({2}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return probe(t, t.affine(p(t, ps, 0), p(t, ps, 1), p(t, ps, 2)), r);
             },
             {3, 2}},
    GradCase{"affine_vector",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("x", random_tensor({5}, g));
               ps.add("w", random_tensor({3, 5}, g));
               ps.add("b", random_tensor({3}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return probe(t, t.affine(p(t, ps, 0), p(t, ps, 1), p(t, ps, 2)), r);
             },
             {3}},
    GradCase{"matmul",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("a", random_tensor({2, 3}, g));
               ps.add("b", random_tensor({3, 4}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.matmul(p(t, ps, 0), p(t, ps, 1)), r); },
             {2, 4}},
    GradCase{"conv1d_nonoverlap",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("x", random_tensor({2, 9}, g));
               ps.add("w", random_tensor({2, 3}, g));
               ps.add("b", random_tensor({2}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return probe(t, t.conv1d_nonoverlap(p(t, ps, 0), p(t, ps, 1), p(t, ps, 2), 3), r);
             },
             {2, 6}},
    GradCase{"tanh", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({3, 3}, g, -2, 2)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.tanh(p(t, ps, 0)), r); },
             {3, 3}},
    GradCase{"sigmoid", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({3, 3}, g, -4, 4)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.sigmoid(p(t, ps, 0)), r); },
             {3, 3}},
    GradCase{"softmax_vector", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({5}, g, -3, 3)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.softmax(p(t, ps, 0)), r); },
             {5}},
    GradCase{"softmax_rows", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({2, 4}, g, -3, 3)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.softmax(p(t, ps, 0)), r); },
             {2, 4}},
    GradCase{"add",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("a", random_tensor({2, 3}, g));
               ps.add("b", random_tensor({2, 3}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.add(p(t, ps, 0), p(t, ps, 1)), r); },
             {2, 3}},
    GradCase{"mul",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("a", random_tensor({2, 3}, g));
               ps.add("b", random_tensor({2, 3}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.mul(p(t, ps, 0), p(t, ps, 1)), r); },
             {2, 3}},
    GradCase{"concat_rows",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("a", random_tensor({1, 3}, g));
               ps.add("b", random_tensor({2, 3}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               const Var parts[] = {p(t, ps, 0), p(t, ps, 1)};
               return probe(t, t.concat(parts, 0), r);
             },
             {3, 3}},
    GradCase{"concat_cols",
             [](ParamSet& ps, std::mt19937_64& g) {
               ps.add("a", random_tensor({2, 1}, g));
               ps.add("b", random_tensor({2, 3}, g));
             },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               const Var parts[] = {p(t, ps, 0), p(t, ps, 1), p(t, ps, 0)};
               return probe(t, t.concat(parts, 1), r);
             },
             {2, 5}},
    GradCase{"slice_cols", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({3, 5}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.slice_cols(p(t, ps, 0), 1, 3), r); },
             {3, 3}},
    GradCase{"reshape", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({2, 6}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.reshape(p(t, ps, 0), {4, 3}), r); },
             {4, 3}},
    GradCase{"gather_rows", [](ParamSet& ps, std::mt19937_64& g) { ps.add("table", random_tensor({4, 3}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return probe(t, t.gather_rows(p(t, ps, 0), {2, 0, 2, 3}), r);
             },
             {4, 3}},
    GradCase{"broadcast_rows", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({1, 3}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) { return probe(t, t.broadcast_rows(p(t, ps, 0), 4), r); },
             {4, 3}},
    GradCase{"masked_max_pool_rows", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({4, 3}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return probe(t, t.masked_max_pool(p(t, ps, 0), kRowMask, 0), r);
             },
             {3}},
    GradCase{"masked_max_pool_cols", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({2, 3}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return probe(t, t.masked_max_pool(p(t, ps, 0), kColMask, 1), r);
             },
             {2}},
    GradCase{"squared_error",
             [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({4}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor&) {
               return t.squared_error(p(t, ps, 0), Tensor::vector({1.0, -0.5, 0.25, 2.0}), Mask{1, 1, 0, 1});
             },
             {1}},
    GradCase{"sum", [](ParamSet& ps, std::mt19937_64& g) { ps.add("x", random_tensor({2, 3}, g)); },
             [](Tape& t, const ParamSet& ps, const Tensor& r) {
               return t.mul(t.sum(p(t, ps, 0)), t.constant(Tensor::scalar(r[0])));
             },
             {1}}};
}

/// Largest error over `points` random draws of one case.
inline double worst_case_error(const GradCase& c, int points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int point = 0; point < points; ++point) {
    ParamSet params;
    c.init(params, rng);
    const Tensor r = random_tensor(c.out_shape, rng);
    worst = std::max(worst, max_gradient_error(params, [&](Tape& tape) { return c.build(tape, params, r); }));
  }
  return worst;
}

}  // namespace deeptransport::testing
