#include "deeptransport/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "deeptransport/errors.hpp"

namespace deeptransport {

// ---------------------------------------------------------------- ParamSet

std::size_t ParamSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  const std::size_t i = values_.size();
  index_.emplace(name, i);
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return i;
}

std::optional<std::size_t> ParamSet::find(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamSet::index(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw ConfigError("unknown parameter: " + std::string(name));
}

std::size_t ParamSet::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.size();
  return n;
}

// --------------------------------------------------------------- Gradients

Gradients::Gradients(const ParamSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) grads_.emplace_back(params.value(i).shape());
}

void Gradients::add(const Gradients& other) {
  if (other.size() != size()) throw ShapeError("gradient sets differ in length");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    auto dst = grads_[i].values();
    auto src = other.grads_[i].values();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

void Gradients::scale(double factor) {
  for (auto& g : grads_)
    for (double& x : g.values()) x *= factor;
}

void Gradients::zero() {
  for (auto& g : grads_) g.fill(0.0);
}

bool Gradients::all_finite() const noexcept {
  return std::all_of(grads_.begin(), grads_.end(), [](const Tensor& t) { return t.all_finite(); });
}

// -------------------------------------------------------------------- Tape

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op) + ": " + what);
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMatrix> view(double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
Eigen::Map<const RowMatrix> view(const double* p, std::size_t rows, std::size_t cols) {
  return {p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

// Y[n, out] = X[n, in] · W[out, in]ᵀ + b
void affine_kernel(const double* x, const double* w, const double* b, double* y, std::size_t n, std::size_t in,
                   std::size_t out) {
  auto Y = view(y, n, out);
  Y.noalias() = view(x, n, in) * view(w, out, in).transpose();
  Y.rowwise() += view(b, 1, out).row(0);
}

void affine_backward(const double* g, const double* x, const double* w, double* gx, double* gw, double* gb,
                     std::size_t n, std::size_t in, std::size_t out) {
  const auto G = view(g, n, out);
  view(gx, n, in).noalias() += G * view(w, out, in);
  view(gw, out, in).noalias() += G.transpose() * view(x, n, in);
  view(gb, 1, out) += G.colwise().sum();
}

}  // namespace

Var Tape::push(Tensor value, std::function<void()> back, const char* op) {
  if (!value.all_finite()) throw NumericalError(std::string(op) + " produced a non-finite value");
  Node node;
  node.owned = std::move(value);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

void Tape::check(Var v) const {
  if (v.id >= nodes_.size()) throw ShapeError("variable does not belong to this tape");
}

Tensor& Tape::gbuf(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty() && n.value().size() > 0) n.grad = Tensor(n.value().shape());
  return n.grad;
}

Var Tape::param(const ParamSet& params, std::size_t index) {
  if (index >= params.size()) throw ShapeError("parameter index out of range");
  if (param_nodes_.size() < params.size()) param_nodes_.resize(params.size(), -1);
  if (param_nodes_[index] >= 0) return Var{static_cast<std::size_t>(param_nodes_[index])};
  Node node;
  node.ref = &params.value(index);
  node.param = static_cast<std::ptrdiff_t>(index);
  nodes_.push_back(std::move(node));
  param_nodes_[index] = static_cast<std::ptrdiff_t>(nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(std::move(value), nullptr, "constant"); }

const Tensor& Tape::value(Var v) const {
  check(v);
  return val(v.id);
}

Tensor Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id];
  if (n.grad.empty()) return Tensor(n.value().shape());
  return n.grad;
}

Var Tape::affine(Var x, Var w, Var b) {
  check(x), check(w), check(b);
  const Tensor& X = val(x.id);
  const Tensor& W = val(w.id);
  const Tensor& B = val(b.id);
  require(W.rank() == 2, "affine", "weight must be a matrix");
  require(X.rank() == 1 || X.rank() == 2, "affine", "input must be rank 1 or 2");
  const std::size_t n = X.rows(), in = X.cols(), out = W.rows();
  if (W.cols() != in)
    require(false, "affine", "weight " + shape_string(W.shape()) + " vs input " + shape_string(X.shape()));
  require(B.size() == out, "affine", "bias length mismatch");

  Tensor Y(X.rank() == 1 ? Shape{out} : Shape{n, out});
  affine_kernel(X.data(), W.data(), B.data(), Y.data(), n, in, out);
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, w, b, y, n, in, out] {
    affine_backward(nodes_[y].grad.data(), val(x.id).data(), val(w.id).data(), gbuf(x.id).data(), gbuf(w.id).data(),
                    gbuf(b.id).data(), n, in, out);
  }, "affine");
}

Var Tape::matmul(Var a, Var b) {
  check(a), check(b);
  const Tensor& A = val(a.id);
  const Tensor& B = val(b.id);
  require(A.rank() == 2 && B.rank() == 2, "matmul", "operands must be matrices");
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  if (B.rows() != k) require(false, "matmul", shape_string(A.shape()) + " x " + shape_string(B.shape()));
  Tensor C(Shape{n, m});
  view(C.data(), n, m).noalias() = view(A.data(), n, k) * view(B.data(), k, m);
  const std::size_t c = nodes_.size();
  return push(std::move(C), [this, a, b, c, n, k, m] {
    const auto G = view(nodes_[c].grad.data(), n, m);
    view(gbuf(a.id).data(), n, k).noalias() += G * view(val(b.id).data(), k, m).transpose();
    view(gbuf(b.id).data(), k, m).noalias() += view(val(a.id).data(), n, k).transpose() * G;
  }, "matmul");
}

Var Tape::conv1d_nonoverlap(Var x, Var w, Var b, std::size_t window) {
  check(x), check(w), check(b);
  const Tensor& X = val(x.id);
  const Tensor& W = val(w.id);
  const Tensor& B = val(b.id);
  require(window > 0, "conv1d_nonoverlap", "window must be positive");
  require(W.rank() == 2 && W.cols() == window, "conv1d_nonoverlap", "kernel must be [maps, window]");
  require(X.rank() == 2 || X.rank() == 1, "conv1d_nonoverlap", "input must be rank 1 or 2");
  require(X.cols() % window == 0, "conv1d_nonoverlap", "input width not a multiple of the window");
  const std::size_t n = X.rows(), blocks = X.cols() / window, maps = W.rows();
  require(B.size() == maps, "conv1d_nonoverlap", "bias length mismatch");
  const std::size_t out_w = blocks * maps;

  // Row-major storage makes [n, blocks·window] the same buffer as
  // [n·blocks, window], so the convolution is one affine map per block.
  Tensor Y(X.rank() == 1 ? Shape{out_w} : Shape{n, out_w});
  affine_kernel(X.data(), W.data(), B.data(), Y.data(), n * blocks, window, maps);
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, w, b, y, n, blocks, maps, window] {
    affine_backward(nodes_[y].grad.data(), val(x.id).data(), val(w.id).data(), gbuf(x.id).data(), gbuf(w.id).data(),
                    gbuf(b.id).data(), n * blocks, window, maps);
  }, "conv1d_nonoverlap");
}

Var Tape::tanh(Var x) {
  check(x);
  Tensor Y = val(x.id);
  for (double& v : Y.values()) v = std::tanh(v);
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y] {
    const Tensor& G = nodes_[y].grad;
    const Tensor& Y = val(y);
    Tensor& gx = gbuf(x.id);
    for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] * (1.0 - Y[i] * Y[i]);
  }, "tanh");
}

Var Tape::sigmoid(Var x) {
  check(x);
  Tensor Y = val(x.id);
  for (double& v : Y.values()) v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y] {
    const Tensor& G = nodes_[y].grad;
    const Tensor& Y = val(y);
    Tensor& gx = gbuf(x.id);
    for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i] * Y[i] * (1.0 - Y[i]);
  }, "sigmoid");
}

Var Tape::softmax(Var x) {
  check(x);
  const Tensor& X = val(x.id);
  require(X.rank() == 1 || X.rank() == 2, "softmax", "input must be rank 1 or 2");
  const std::size_t n = X.rows(), d = X.cols();
  Tensor Y = X;
  for (std::size_t r = 0; r < n; ++r) {
    double* row = Y.data() + r * d;
    const double mx = *std::max_element(row, row + d);
    double total = 0.0;
    for (std::size_t k = 0; k < d; ++k) total += (row[k] = std::exp(row[k] - mx));
    for (std::size_t k = 0; k < d; ++k) row[k] /= total;
  }
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y, n, d] {
    const Tensor& G = nodes_[y].grad;
    const Tensor& Y = val(y);
    Tensor& gx = gbuf(x.id);
    for (std::size_t r = 0; r < n; ++r) {
      const double* yr = Y.data() + r * d;
      const double* gr = G.data() + r * d;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += gr[k] * yr[k];
      for (std::size_t k = 0; k < d; ++k) gx[r * d + k] += yr[k] * (gr[k] - dot);
    }
  }, "softmax");
}

Var Tape::add(Var a, Var b) {
  check(a), check(b);
  require(val(a.id).shape() == val(b.id).shape(), "add",
          shape_string(val(a.id).shape()) + " vs " + shape_string(val(b.id).shape()));
  Tensor Y = val(a.id);
  const Tensor& B = val(b.id);
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, a, b, y] {
    const Tensor& G = nodes_[y].grad;
    Tensor& ga = gbuf(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i];
    Tensor& gb = gbuf(b.id);
    for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i];
  }, "add");
}

Var Tape::mul(Var a, Var b) {
  check(a), check(b);
  require(val(a.id).shape() == val(b.id).shape(), "mul",
          shape_string(val(a.id).shape()) + " vs " + shape_string(val(b.id).shape()));
  Tensor Y = val(a.id);
  const Tensor& B = val(b.id);
  for (std::size_t i = 0; i < Y.size(); ++i) Y[i] *= B[i];
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, a, b, y] {
    const Tensor& G = nodes_[y].grad;
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    Tensor& ga = gbuf(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) ga[i] += G[i] * B[i];
    Tensor& gb = gbuf(b.id);
    for (std::size_t i = 0; i < G.size(); ++i) gb[i] += G[i] * A[i];
  }, "mul");
}

Var Tape::concat(std::span<const Var> parts, std::size_t axis) {
  require(!parts.empty(), "concat", "no inputs");
  for (Var p : parts) check(p);
  std::vector<Var> ids(parts.begin(), parts.end());
  const Tensor& first = val(ids[0].id);

  if (first.rank() <= 1) {
    require(axis == 0, "concat", "rank-1 inputs concatenate along axis 0 only");
    std::vector<double> out;
    for (Var p : ids) {
      require(val(p.id).rank() <= 1, "concat", "mixed ranks");
      auto v = val(p.id).values();
      out.insert(out.end(), v.begin(), v.end());
    }
    const std::size_t y = nodes_.size();
    return push(Tensor::vector(std::move(out)), [this, ids, y] {
      const Tensor& G = nodes_[y].grad;
      std::size_t off = 0;
      for (Var p : ids) {
        Tensor& g = gbuf(p.id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += G[off + i];
        off += g.size();
      }
    }, "concat");
  }

  require(first.rank() == 2 && axis <= 1, "concat", "only rank 1 or 2 supported");
  std::size_t rows = 0, cols = 0;
  for (Var p : ids) {
    const Tensor& t = val(p.id);
    require(t.rank() == 2, "concat", "mixed ranks");
    if (axis == 0) {
      require(t.cols() == first.cols(), "concat", "column mismatch");
      rows += t.rows();
    } else {
      require(t.rows() == first.rows(), "concat", "row mismatch");
      cols += t.cols();
    }
  }
  if (axis == 0) cols = first.cols();
  else rows = first.rows();

  Tensor Y(Shape{rows, cols});
  std::size_t off = 0;
  for (Var p : ids) {
    const Tensor& t = val(p.id);
    for (std::size_t r = 0; r < t.rows(); ++r)
      for (std::size_t c = 0; c < t.cols(); ++c) {
        if (axis == 0) Y.at(off + r, c) = t.at(r, c);
        else Y.at(r, off + c) = t.at(r, c);
      }
    off += axis == 0 ? t.rows() : t.cols();
  }
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, ids, y, axis] {
    const Tensor& G = nodes_[y].grad;
    std::size_t off = 0;
    for (Var p : ids) {
      Tensor& g = gbuf(p.id);
      const std::size_t r_n = val(p.id).rows(), c_n = val(p.id).cols();
      for (std::size_t r = 0; r < r_n; ++r)
        for (std::size_t c = 0; c < c_n; ++c) g.at(r, c) += axis == 0 ? G.at(off + r, c) : G.at(r, off + c);
      off += axis == 0 ? r_n : c_n;
    }
  }, "concat");
}

Var Tape::slice_cols(Var x, std::size_t start, std::size_t count) {
  check(x);
  const Tensor& X = val(x.id);
  require(X.rank() == 1 || X.rank() == 2, "slice_cols", "input must be rank 1 or 2");
  require(start + count <= X.cols(), "slice_cols", "range exceeds width");
  const std::size_t n = X.rows(), w = X.cols();
  Tensor Y(X.rank() == 1 ? Shape{count} : Shape{n, count});
  for (std::size_t r = 0; r < n; ++r)
    std::copy_n(X.data() + r * w + start, count, Y.data() + r * count);
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y, n, w, start, count] {
    const Tensor& G = nodes_[y].grad;
    Tensor& gx = gbuf(x.id);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < count; ++c) gx[r * w + start + c] += G[r * count + c];
  }, "slice_cols");
}

Var Tape::reshape(Var x, Shape shape) {
  check(x);
  require(shape_size(shape) == val(x.id).size(), "reshape",
          shape_string(val(x.id).shape()) + " -> " + shape_string(shape));
  Tensor Y(std::move(shape), std::vector<double>(val(x.id).values().begin(), val(x.id).values().end()));
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y] {
    const Tensor& G = nodes_[y].grad;
    Tensor& gx = gbuf(x.id);
    for (std::size_t i = 0; i < G.size(); ++i) gx[i] += G[i];
  }, "reshape");
}

Var Tape::gather_rows(Var table, std::vector<std::size_t> indices) {
  check(table);
  const Tensor& T = val(table.id);
  require(T.rank() == 2, "gather_rows", "table must be a matrix");
  const std::size_t d = T.cols();
  Tensor Y(Shape{indices.size(), d});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= T.rows())
      require(false, "gather_rows", "row index " + std::to_string(indices[i]) + " out of range");
    std::copy_n(T.data() + indices[i] * d, d, Y.data() + i * d);
  }
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, table, y, d, idx = std::move(indices)] {
    const Tensor& G = nodes_[y].grad;
    Tensor& gt = gbuf(table.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t k = 0; k < d; ++k) gt[idx[i] * d + k] += G[i * d + k];
  }, "gather_rows");
}

Var Tape::broadcast_rows(Var x, std::size_t n) {
  check(x);
  const Tensor& X = val(x.id);
  require(X.rank() == 1 || (X.rank() == 2 && X.rows() == 1), "broadcast_rows", "input must be a row vector");
  const std::size_t d = X.cols();
  Tensor Y(Shape{n, d});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(X.data(), d, Y.data() + r * d);
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y, n, d] {
    const Tensor& G = nodes_[y].grad;
    Tensor& gx = gbuf(x.id);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < d; ++k) gx[k] += G[r * d + k];
  }, "broadcast_rows");
}

Var Tape::masked_max_pool(Var x, const Mask& mask, std::size_t axis, double neutral) {
  check(x);
  const Tensor& X = val(x.id);
  require(X.rank() == 2, "masked_max_pool", "input must be a matrix");
  require(axis <= 1, "masked_max_pool", "axis must be 0 or 1");
  const std::size_t n = X.rows(), d = X.cols();
  const std::size_t pooled = axis == 0 ? n : d;  // extent being reduced
  const std::size_t kept = axis == 0 ? d : n;
  require(mask.size() == pooled, "masked_max_pool", "mask length mismatch");

  Tensor Y(Shape{kept}, neutral);
  std::vector<std::ptrdiff_t> argmax(kept, -1);
  for (std::size_t k = 0; k < kept; ++k) {
    for (std::size_t i = 0; i < pooled; ++i) {
      if (!mask[i]) continue;
      const double v = axis == 0 ? X.at(i, k) : X.at(k, i);
      if (argmax[k] < 0 || v > Y[k]) {
        Y[k] = v;
        argmax[k] = static_cast<std::ptrdiff_t>(i);
      }
    }
  }
  const std::size_t y = nodes_.size();
  return push(std::move(Y), [this, x, y, axis, d, arg = std::move(argmax)] {
    const Tensor& G = nodes_[y].grad;
    Tensor& gx = gbuf(x.id);
    for (std::size_t k = 0; k < arg.size(); ++k) {
      if (arg[k] < 0) continue;
      const std::size_t i = static_cast<std::size_t>(arg[k]);
      if (axis == 0) gx[i * d + k] += G[k];
      else gx[k * d + i] += G[k];
    }
  }, "masked_max_pool");
}

Var Tape::squared_error(Var pred, const Tensor& target, const Mask& mask) {
  check(pred);
  const Tensor& P = val(pred.id);
  require(P.size() == target.size(), "squared_error", "prediction/target length mismatch");
  require(mask.size() == P.size(), "squared_error", "mask length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i)
    if (mask[i]) total += (P[i] - target[i]) * (P[i] - target[i]);
  const std::size_t y = nodes_.size();
  return push(Tensor::scalar(total), [this, pred, y, target, mask] {
    const double g = nodes_[y].grad[0];
    const Tensor& P = val(pred.id);
    Tensor& gp = gbuf(pred.id);
    for (std::size_t i = 0; i < P.size(); ++i)
      if (mask[i]) gp[i] += 2.0 * g * (P[i] - target[i]);
  }, "squared_error");
}

Var Tape::sum(Var x) {
  check(x);
  double total = 0.0;
  for (double v : val(x.id).values()) total += v;
  const std::size_t y = nodes_.size();
  return push(Tensor::scalar(total), [this, x, y] {
    const double g = nodes_[y].grad[0];
    Tensor& gx = gbuf(x.id);
    for (double& v : gx.values()) v += g;
  }, "sum");
}

void Tape::backward(Var loss) {
  check(loss);
  if (val(loss.id).size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_string(val(loss.id).shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  gbuf(loss.id)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.back && !n.grad.empty()) n.back();
  }
}

void Tape::accumulate_param_grads(Gradients& out) const {
  for (const Node& n : nodes_) {
    if (n.param < 0 || n.grad.empty()) continue;
    Tensor& dst = out[static_cast<std::size_t>(n.param)];
    if (dst.size() != n.grad.size()) throw ShapeError("gradient buffer does not match parameter");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
  }
}

}  // namespace deeptransport
