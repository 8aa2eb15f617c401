#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deeptransport/tensor.hpp"

namespace deeptransport {

/// Per-row (or per-column) validity flags; non-zero means valid.
using Mask = std::vector<std::uint8_t>;

/// Named, ordered collection of learnable tensors.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t index(std::string_view name) const;
  std::optional<std::size_t> find(std::string_view name) const;

  const Tensor& value(std::size_t i) const { return values_[i]; }
  Tensor& value(std::size_t i) { return values_[i]; }
  const Tensor& value(std::string_view name) const { return values_[index(name)]; }
  Tensor& value(std::string_view name) { return values_[index(name)]; }
  const std::string& name(std::size_t i) const { return names_[i]; }

  std::size_t size() const noexcept { return values_.size(); }
  std::size_t scalar_count() const noexcept;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Gradient buffers aligned one-to-one with a ParamSet.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamSet& params);

  Tensor& operator[](std::size_t i) { return grads_[i]; }
  const Tensor& operator[](std::size_t i) const { return grads_[i]; }
  std::size_t size() const noexcept { return grads_.size(); }

  void add(const Gradients& other);
  void scale(double factor);
  void zero();
  bool all_finite() const noexcept;

 private:
  std::vector<Tensor> grads_;
};

/// Handle to a node recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode recorder. Every primitive evaluates eagerly, stores its
/// output, and registers a closure that pushes the output gradient to its
/// inputs. Nodes are appended in execution order, so the record is already
/// topologically sorted and backward() is a single reverse sweep.
///
/// Parameter leaves reference ParamSet storage directly; the ParamSet must
/// outlive the tape and must not be mutated while the tape is alive.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var param(const ParamSet& params, std::size_t index);
  Var constant(Tensor value);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() loss w.r.t. `v`; zeros if unreached.
  Tensor grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Row-wise x·Wᵀ + b. x is [n, in] (or [in]), W is [out, in], b is [out].
  Var affine(Var x, Var w, Var b);
  /// [n, k] · [k, m].
  Var matmul(Var a, Var b);
  /// Non-overlapping 1-D convolution: every row of x [n, k·window] is cut
  /// into k blocks of `window` columns and each block is mapped through the
  /// shared kernel W [m, window] plus b [m]. Output is [n, k·m].
  Var conv1d_nonoverlap(Var x, Var w, Var b, std::size_t window);
  Var tanh(Var x);
  Var sigmoid(Var x);
  /// Softmax along the last axis (per row for matrices).
  Var softmax(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var concat(std::span<const Var> parts, std::size_t axis);
  Var slice_cols(Var x, std::size_t start, std::size_t count);
  Var reshape(Var x, Shape shape);
  Var gather_rows(Var table, std::vector<std::size_t> indices);
  /// Repeats a row vector n times: [d] or [1, d] -> [n, d].
  Var broadcast_rows(Var x, std::size_t n);
  /// Max over `axis` of a matrix, skipping masked-out rows (axis 0) or
  /// columns (axis 1). Ties resolve to the lowest index. If every entry is
  /// masked the result is `neutral` with zero gradient.
  Var masked_max_pool(Var x, const Mask& mask, std::size_t axis, double neutral = 0.0);
  /// Σ mask_i (pred_i - target_i)^2 as a scalar.
  Var squared_error(Var pred, const Tensor& target, const Mask& mask);
  Var sum(Var x);

  void backward(Var loss);
  /// Adds the gradient of every parameter leaf into `out`.
  void accumulate_param_grads(Gradients& out) const;

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor grad;
    std::function<void()> back;
    std::ptrdiff_t param = -1;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  Var push(Tensor value, std::function<void()> back, const char* op);
  const Tensor& val(std::size_t id) const { return nodes_[id].value(); }
  /// Lazily allocated gradient buffer of node `id`.
  Tensor& gbuf(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::ptrdiff_t> param_nodes_;
};

}  // namespace deeptransport
