#pragma once

// Dense f64 tensors with a tape-based reverse-mode differentiation engine.
//
// A Tensor is an immutable value (shape + shared row-major storage) that may
// carry a handle to a node on a Tape. Every primitive below records itself on
// the tape of its tracked inputs; untracked inputs are treated as constants.
// A Tape must outlive every tracked Tensor that refers to it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lte {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Factorization failure in linear_solve; `index` is the offending batch matrix.
class SolveError : public Error {
 public:
  SolveError(const std::string& what, std::size_t index) : Error(what), index(index) {}
  std::size_t index;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tape;
class Tensor;

namespace detail {
Tensor wrap(Shape shape, std::vector<double> data);
}

class Tensor {
 public:
  Tensor() : data_(std::make_shared<const std::vector<double>>(1, 0.0)) {}

  // Validating constructor for external input: size must match and every
  // value must be finite.
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
    if (lte::numel(shape_) != data.size()) {
      throw Error("tensor: shape " + shape_str(shape_) + " needs " +
                  std::to_string(lte::numel(shape_)) + " values, got " +
                  std::to_string(data.size()));
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::isfinite(data[i])) {
        throw Error("tensor: non-finite value at flat index " + std::to_string(i));
      }
    }
    data_ = std::make_shared<const std::vector<double>>(std::move(data));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }
  static Tensor full(Shape shape, double v) {
    auto n = lte::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor eye(std::size_t n) {
    std::vector<double> d(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
    return Tensor({n, n}, std::move(d));
  }
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    std::vector<double> d;
    std::size_t cols = rows.size() ? rows.begin()->size() : 0;
    for (const auto& r : rows) {
      if (r.size() != cols) throw Error("tensor: ragged matrix literal");
      d.insert(d.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(d));
  }
  static Tensor vector(std::vector<double> values) {
    auto n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  std::size_t dim() const { return shape_.size(); }
  std::size_t size(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_->size(); }
  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  const std::vector<double>& values() const { return *data_; }

  double item() const {
    if (numel() != 1) throw Error("tensor: item() on shape " + shape_str(shape_));
    return (*data_)[0];
  }
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::size_t i, std::size_t j) const {
    if (dim() != 2) throw Error("tensor: at(i,j) on shape " + shape_str(shape_));
    return (*data_)[i * shape_[1] + j];
  }

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.node_ = 0;
    return t;
  }

 private:
  friend class Tape;
  friend Tensor detail::wrap(Shape, std::vector<double>);

  struct Unchecked {};
  Tensor(Unchecked, Shape shape, std::vector<double> data)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))) {}

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

class Gradients {
 public:
  Gradients() = default;
  Gradients(const Tape* tape, std::vector<std::vector<double>> buffers)
      : tape_(tape), buffers_(std::move(buffers)) {}

  // dLoss/dLeaf; zeros when the leaf did not influence the loss.
  Tensor wrt(const Tensor& leaf) const;
  bool touched(const Tensor& leaf) const {
    return leaf.tape() == tape_ && leaf.node() < buffers_.size() &&
           !buffers_[leaf.node()].empty();
  }

 private:
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> buffers_;
};

class Tape {
 public:
  using Backward = std::function<void(std::span<const double> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Tensor& value) {
    Tensor t = value.detach();
    t.tape_ = this;
    t.node_ = push(t.numel(), nullptr);
    return t;
  }

  std::size_t push(std::size_t size, Backward backward) {
    nodes_.push_back({size, std::move(backward)});
    return nodes_.size() - 1;
  }

  void attach(Tensor& t, std::size_t node) {
    t.tape_ = this;
    t.node_ = node;
  }

  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node during backward; allocated zeroed on first use.
  std::span<double> grad(std::size_t node) {
    auto& g = grads_[node];
    if (g.empty()) g.assign(nodes_[node].size, 0.0);
    return g;
  }

  Gradients backward(const Tensor& loss) {
    if (loss.tape() != this) throw Error("backward: loss is not tracked on this tape");
    if (loss.numel() != 1) {
      throw Error("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    grads_.assign(nodes_.size(), {});
    grad(loss.node())[0] = 1.0;
    for (std::size_t n = loss.node() + 1; n-- > 0;) {
      if (grads_[n].empty() || !nodes_[n].backward) continue;
      // Closures only write to parent buffers, which precede node n.
      nodes_[n].backward(grads_[n], *this);
    }
    return Gradients(this, std::exchange(grads_, {}));
  }

 private:
  struct Node {
    std::size_t size;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

inline Tensor Gradients::wrt(const Tensor& leaf) const {
  if (!touched(leaf)) return detail::wrap(leaf.shape(), std::vector<double>(leaf.numel(), 0.0));
  return detail::wrap(leaf.shape(), buffers_[leaf.node()]);
}

namespace detail {

inline Tensor wrap(Shape shape, std::vector<double> data) {
  return Tensor(Tensor::Unchecked{}, std::move(shape), std::move(data));
}

inline Tape* common_tape(std::initializer_list<const Tensor*> inputs, const char* op) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape()) throw Error(std::string(op) + ": inputs live on different tapes");
    tape = t->tape();
  }
  return tape;
}

// Registers `out` on the tape shared by the tracked inputs, if any.
inline Tensor record(Tensor out, std::initializer_list<const Tensor*> inputs, const char* op,
                     Tape::Backward backward) {
  if (Tape* tape = common_tape(inputs, op)) {
    tape->attach(out, tape->push(out.numel(), std::move(backward)));
  }
  return out;
}

inline void add_into(Tape& tape, const Tensor& t, std::span<const double> g) {
  auto dst = tape.grad(t.node());
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

inline std::size_t norm_axis(long axis, std::size_t dims, const char* op) {
  long a = axis < 0 ? axis + static_cast<long>(dims) : axis;
  if (a < 0 || a >= static_cast<long>(dims)) {
    throw Error(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                std::to_string(dims) + "-d tensor");
  }
  return static_cast<std::size_t>(a);
}

// Trailing-dimension alignment: dimensions match when equal or when one is 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
    std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw Error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t off = out.size() - in.size();
  std::size_t s = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[i + off] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) over every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  std::size_t n = numel(out);
  if (n == 0) return;
  std::size_t nd = out.size();
  if (nd == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0, ib = 0;
  const std::size_t last = out[nd - 1], la = sa[nd - 1], lb = sb[nd - 1];
  for (std::size_t k = 0; k < n; k += last) {
    for (std::size_t t = 0; t < last; ++t) f(k + t, ia + t * la, ib + t * lb);
    for (std::size_t d = nd - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Elementwise binary op. dfa/dfb return the partial derivative of the output
// with respect to the first/second operand, given (x, y).
template <class Fwd, class Da, class Db>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Da dfa, Db dfb) {
  Shape out_shape;
  std::vector<double> out;
  const auto& av = a.values();
  const auto& bv = b.values();
  if (a.shape() == b.shape()) {
    out_shape = a.shape();
    out.resize(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    out_shape = broadcast_shape(a.shape(), b.shape(), op);
    out.resize(numel(out_shape));
    auto sa = broadcast_strides(a.shape(), out_shape);
    auto sb = broadcast_strides(b.shape(), out_shape);
    for_each_broadcast(out_shape, sa, sb, [&](std::size_t k, std::size_t i, std::size_t j) {
      out[k] = fwd(av[i], bv[j]);
    });
  }
  Tensor result = wrap(out_shape, std::move(out));
  return record(std::move(result), {&a, &b}, op,
                [a, b, out_shape, dfa, dfb](std::span<const double> g, Tape& tape) {
                  const auto& av = a.values();
                  const auto& bv = b.values();
                  auto sa = broadcast_strides(a.shape(), out_shape);
                  auto sb = broadcast_strides(b.shape(), out_shape);
                  if (a.tracked()) {
                    auto ga = tape.grad(a.node());
                    for_each_broadcast(out_shape, sa, sb,
                                       [&](std::size_t k, std::size_t i, std::size_t j) {
                                         ga[i] += g[k] * dfa(av[i], bv[j]);
                                       });
                  }
                  if (b.tracked()) {
                    auto gb = tape.grad(b.node());
                    for_each_broadcast(out_shape, sa, sb,
                                       [&](std::size_t k, std::size_t i, std::size_t j) {
                                         gb[j] += g[k] * dfb(av[i], bv[j]);
                                       });
                  }
                });
}

// Elementwise unary op. dfdx receives (x, y) with y = fwd(x).
template <class Fwd, class D>
Tensor unary_op(const Tensor& a, const char* op, Fwd fwd, D dfdx) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  Tensor result = wrap(a.shape(), out);
  return record(std::move(result), {&a}, op,
                [a, y = std::move(out), dfdx](std::span<const double> g, Tape& tape) {
                  auto ga = tape.grad(a.node());
                  const auto& av = a.values();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(av[i], y[i]);
                });
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
  Shape out = s;
  if (keepdim) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<long>(axis));
  }
  return out;
}

// C (m x n) += op(A) * op(B), row-major.
inline void gemm(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
                 std::size_t n, bool transA, bool transB) {
  if (!transA && !transB) {
    for (std::size_t i = 0; i < m; ++i) {
      double* c = C + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = A[i * k + p];
        const double* b = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      }
    }
  } else if (!transA && transB) {
    // B stored n x k
    for (std::size_t i = 0; i < m; ++i) {
      const double* a = A + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* b = B + j * k;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += a[p] * b[p];
        C[i * n + j] += s;
      }
    }
  } else if (transA && !transB) {
    // A stored k x m
    for (std::size_t p = 0; p < k; ++p) {
      const double* b = B + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double a = A[p * m + i];
        double* c = C + i * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += A[p * m + i] * B[j * k + p];
        C[i * n + j] += s;
      }
  }
}

// In-place Cholesky of a k x k SPD matrix (lower triangle). Returns false when
// a pivot is not strictly positive.
inline bool cholesky(double* L, std::size_t k) {
  for (std::size_t j = 0; j < k; ++j) {
    double d = L[j * k + j];
    for (std::size_t p = 0; p < j; ++p) d -= L[j * k + p] * L[j * k + p];
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    d = std::sqrt(d);
    L[j * k + j] = d;
    for (std::size_t i = j + 1; i < k; ++i) {
      double s = L[i * k + j];
      for (std::size_t p = 0; p < j; ++p) s -= L[i * k + p] * L[j * k + p];
      L[i * k + j] = s / d;
    }
    for (std::size_t i = 0; i < j; ++i) L[i * k + j] = 0.0;
  }
  return true;
}

// Solves L L^T X = B in place (B is k x m).
inline void cholesky_solve(const double* L, double* B, std::size_t k, std::size_t m) {
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      double s = B[i * m + c];
      for (std::size_t p = 0; p < i; ++p) s -= L[i * k + p] * B[p * m + c];
      B[i * m + c] = s / L[i * k + i];
    }
    for (std::size_t i = k; i-- > 0;) {
      double s = B[i * m + c];
      for (std::size_t p = i + 1; p < k; ++p) s -= L[p * k + i] * B[p * m + c];
      B[i * m + c] = s / L[i * k + i];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (broadcasting, trailing-dimension alignment)

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary_op(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor exp(const Tensor& a) {
  return detail::unary_op(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
  return detail::unary_op(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary_op(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// d sqrt(x)/dx at x = 0 is taken as 0 (subgradient convention for norms).
inline Tensor sqrt(const Tensor& a) {
  return detail::unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

inline Tensor leaky_relu(const Tensor& a, double slope) {
  return detail::unary_op(
      a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw Error("reshape: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(shape));
  }
  Tensor out = detail::wrap(std::move(shape), a.values());
  return detail::record(std::move(out), {&a}, "reshape",
                        [a](std::span<const double> g, Tape& tape) { detail::add_into(tape, a, g); });
}

inline Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  Shape out_shape = detail::broadcast_shape(a.shape(), shape, "broadcast_to");
  if (out_shape != shape) {
    throw Error("broadcast_to: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(shape));
  }
  return add(a, detail::wrap(shape, std::vector<double>(numel(shape), 0.0)));
}

// Swaps the last two dimensions of a 2-d or 3-d tensor.
inline Tensor transpose(const Tensor& a) {
  if (a.dim() != 2 && a.dim() != 3) throw Error("transpose: needs 2-d or 3-d, got " + shape_str(a.shape()));
  const std::size_t batch = a.dim() == 3 ? a.size(0) : 1;
  const std::size_t r = a.size(a.dim() - 2), c = a.size(a.dim() - 1);
  Shape out_shape = a.shape();
  std::swap(out_shape[a.dim() - 2], out_shape[a.dim() - 1]);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = av[b * r * c + i * c + j];
  return detail::record(detail::wrap(out_shape, std::move(out)), {&a}, "transpose",
                        [a, batch, r, c](std::span<const double> g, Tape& tape) {
                          auto ga = tape.grad(a.node());
                          for (std::size_t b = 0; b < batch; ++b)
                            for (std::size_t i = 0; i < r; ++i)
                              for (std::size_t j = 0; j < c; ++j)
                                ga[b * r * c + i * c + j] += g[b * r * c + j * r + i];
                        });
}

inline Tensor concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) throw Error("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = detail::norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.dim() != s0.size()) throw Error("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (d != ax && p.size(d) != s0[d]) {
        throw Error("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
      }
    }
    out_shape[ax] += p.size(ax);
  }
  const auto split = detail::split_axis(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.size(ax);
    const auto& pv = p.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(pv.begin() + static_cast<long>(o * len * split.inner), len * split.inner,
                  out.begin() + static_cast<long>((o * split.len + offset) * split.inner));
    offset += len;
  }
  Tensor result = detail::wrap(out_shape, std::move(out));
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tracked()) {
      if (tape && tape != p.tape()) throw Error("concat: inputs live on different tapes");
      tape = p.tape();
    }
  }
  if (!tape) return result;
  tape->attach(result, tape->push(result.numel(), [parts, split, ax](std::span<const double> g, Tape& t) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.size(ax);
      if (p.tracked()) {
        auto gp = t.grad(p.node());
        for (std::size_t o = 0; o < split.outer; ++o)
          for (std::size_t q = 0; q < len * split.inner; ++q)
            gp[o * len * split.inner + q] += g[(o * split.len + offset) * split.inner + q];
      }
      offset += len;
    }
  }));
  return result;
}

// Selects rows (first-axis slices) by index; repeated indices accumulate
// gradient.
inline Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  if (a.dim() < 1) throw Error("gather_rows: needs at least 1-d, got " + shape_str(a.shape()));
  const std::size_t rows = a.size(0);
  const std::size_t row = rows ? a.numel() / rows : 0;
  Shape out_shape = a.shape();
  out_shape[0] = indices.size();
  const auto& av = a.values();
  std::vector<double> out(indices.size() * row);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw Error("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                  shape_str(a.shape()));
    }
    std::copy_n(av.begin() + static_cast<long>(indices[r] * row), row,
                out.begin() + static_cast<long>(r * row));
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return detail::record(detail::wrap(out_shape, std::move(out)), {&a}, "gather_rows",
                        [a, idx = std::move(idx), row](std::span<const double> g, Tape& tape) {
                          auto ga = tape.grad(a.node());
                          for (std::size_t r = 0; r < idx.size(); ++r)
                            for (std::size_t q = 0; q < row; ++q) ga[idx[r] * row + q] += g[r * row + q];
                        });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a, long axis, bool keepdim = false) {
  const std::size_t ax = detail::norm_axis(axis, a.dim(), "sum");
  const auto sp = detail::split_axis(a.shape(), ax);
  const auto& av = a.values();
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += av[(o * sp.len + l) * sp.inner + i];
  return detail::record(detail::wrap(detail::reduced_shape(a.shape(), ax, keepdim), std::move(out)),
                        {&a}, "sum", [a, sp](std::span<const double> g, Tape& tape) {
                          auto ga = tape.grad(a.node());
                          for (std::size_t o = 0; o < sp.outer; ++o)
                            for (std::size_t l = 0; l < sp.len; ++l)
                              for (std::size_t i = 0; i < sp.inner; ++i)
                                ga[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i];
                        });
}

inline Tensor sum(const Tensor& a) {
  const auto& av = a.values();
  double s = 0.0;
  for (double v : av) s += v;
  return detail::record(detail::wrap({}, {s}), {&a}, "sum",
                        [a](std::span<const double> g, Tape& tape) {
                          auto ga = tape.grad(a.node());
                          for (auto& v : ga) v += g[0];
                        });
}

inline Tensor mean(const Tensor& a, long axis, bool keepdim = false) {
  const std::size_t ax = detail::norm_axis(axis, a.dim(), "mean");
  return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(a.size(ax)));
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

struct MaxResult {
  Tensor values;
  std::vector<std::size_t> argmax;  // position along the reduced axis; ties -> lowest
};

inline MaxResult max(const Tensor& a, long axis, bool keepdim = false) {
  const std::size_t ax = detail::norm_axis(axis, a.dim(), "max");
  const auto sp = detail::split_axis(a.shape(), ax);
  if (sp.len == 0) throw Error("max: empty axis");
  const auto& av = a.values();
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(sp.outer * sp.inner, 0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double best = av[o * sp.len * sp.inner + i];
      std::size_t bi = 0;
      for (std::size_t l = 1; l < sp.len; ++l) {
        double v = av[(o * sp.len + l) * sp.inner + i];
        if (v > best) {
          best = v;
          bi = l;
        }
      }
      out[o * sp.inner + i] = best;
      arg[o * sp.inner + i] = bi;
    }
  Tensor values = detail::record(
      detail::wrap(detail::reduced_shape(a.shape(), ax, keepdim), std::move(out)), {&a}, "max",
      [a, sp, arg](std::span<const double> g, Tape& tape) {
        auto ga = tape.grad(a.node());
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i)
            ga[(o * sp.len + arg[o * sp.inner + i]) * sp.inner + i] += g[o * sp.inner + i];
      });
  return {std::move(values), std::move(arg)};
}

inline Tensor logsumexp(const Tensor& a, long axis, bool keepdim = false) {
  const std::size_t ax = detail::norm_axis(axis, a.dim(), "logsumexp");
  const auto sp = detail::split_axis(a.shape(), ax);
  if (sp.len == 0) throw Error("logsumexp: empty axis");
  const auto& av = a.values();
  std::vector<double> out(sp.outer * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < sp.len; ++l) m = std::max(m, av[(o * sp.len + l) * sp.inner + i]);
      double s = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) s += std::exp(av[(o * sp.len + l) * sp.inner + i] - m);
      out[o * sp.inner + i] = m + std::log(s);
    }
  auto lse = out;
  return detail::record(
      detail::wrap(detail::reduced_shape(a.shape(), ax, keepdim), std::move(out)), {&a}, "logsumexp",
      [a, sp, lse = std::move(lse)](std::span<const double> g, Tape& tape) {
        auto ga = tape.grad(a.node());
        const auto& av = a.values();
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t i = 0; i < sp.inner; ++i)
            for (std::size_t l = 0; l < sp.len; ++l) {
              const std::size_t k = (o * sp.len + l) * sp.inner + i;
              ga[k] += g[o * sp.inner + i] * std::exp(av[k] - lse[o * sp.inner + i]);
            }
      });
}

inline Tensor logsumexp(const Tensor& a) { return logsumexp(reshape(a, {a.numel()}), 0); }

// ---------------------------------------------------------------------------
// Linear algebra

// [m,k]x[k,n] or batched [b,m,k]x[b,k,n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.dim() == 3 && b.dim() == 3;
  if (!(batched || (a.dim() == 2 && b.dim() == 2)) ||
      a.size(a.dim() - 1) != b.size(b.dim() - 2) || (batched && a.size(0) != b.size(0))) {
    throw Error("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t batch = batched ? a.size(0) : 1;
  const std::size_t m = a.size(a.dim() - 2), k = a.size(a.dim() - 1), n = b.size(b.dim() - 1);
  std::vector<double> out(batch * m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t q = 0; q < batch; ++q)
    detail::gemm(av.data() + q * m * k, bv.data() + q * k * n, out.data() + q * m * n, m, k, n, false, false);
  Shape out_shape = batched ? Shape{batch, m, n} : Shape{m, n};
  return detail::record(detail::wrap(out_shape, std::move(out)), {&a, &b}, "matmul",
                        [a, b, batch, m, k, n](std::span<const double> g, Tape& tape) {
                          const auto& av = a.values();
                          const auto& bv = b.values();
                          if (a.tracked()) {
                            auto ga = tape.grad(a.node());
                            for (std::size_t q = 0; q < batch; ++q)
                              detail::gemm(g.data() + q * m * n, bv.data() + q * k * n, ga.data() + q * m * k,
                                           m, n, k, false, true);
                          }
                          if (b.tracked()) {
                            auto gb = tape.grad(b.node());
                            for (std::size_t q = 0; q < batch; ++q)
                              detail::gemm(av.data() + q * m * k, g.data() + q * m * n, gb.data() + q * k * n,
                                           k, m, n, true, false);
                          }
                        });
}

// Solves A X = B for symmetric positive definite A via Cholesky. Accepts
// [k,k]/[k,m] or batched [b,k,k]/[b,k,m]. Only the symmetric part of A is
// read, so the gradient with respect to A is symmetric.
inline Tensor linear_solve(const Tensor& A, const Tensor& B) {
  const bool batched = A.dim() == 3;
  if (!((A.dim() == 2 && B.dim() == 2) || (A.dim() == 3 && B.dim() == 3)) ||
      A.size(A.dim() - 1) != A.size(A.dim() - 2) || A.size(A.dim() - 1) != B.size(B.dim() - 2) ||
      (batched && A.size(0) != B.size(0))) {
    throw Error("linear_solve: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  }
  const std::size_t batch = batched ? A.size(0) : 1;
  const std::size_t k = A.size(A.dim() - 1), m = B.size(B.dim() - 1);
  const auto& av = A.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    if (!std::isfinite(av[i]))
      throw SolveError("linear_solve: non-finite entry in matrix " + std::to_string(i / (k * k)), i / (k * k));
  for (double v : B.values())
    if (!std::isfinite(v)) throw Error("linear_solve: non-finite right-hand side");
  std::vector<double> L(batch * k * k);
  std::vector<double> X(B.values());
  for (std::size_t q = 0; q < batch; ++q) {
    double* l = L.data() + q * k * k;
    const double* a = av.data() + q * k * k;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) l[i * k + j] = 0.5 * (a[i * k + j] + a[j * k + i]);
    if (!detail::cholesky(l, k)) {
      throw SolveError("linear_solve: matrix " + std::to_string(q) + " is not positive definite", q);
    }
    detail::cholesky_solve(l, X.data() + q * k * m, k, m);
  }
  auto x_copy = X;
  return detail::record(
      detail::wrap(B.shape(), std::move(X)), {&A, &B}, "linear_solve",
      [A, B, L = std::move(L), X = std::move(x_copy), batch, k, m](std::span<const double> g, Tape& tape) {
        // dB = A^{-1} g ; dA = -sym(dB X^T)
        std::vector<double> dB(g.begin(), g.end());
        for (std::size_t q = 0; q < batch; ++q) detail::cholesky_solve(L.data() + q * k * k, dB.data() + q * k * m, k, m);
        if (B.tracked()) {
          auto gb = tape.grad(B.node());
          for (std::size_t i = 0; i < dB.size(); ++i) gb[i] += dB[i];
        }
        if (A.tracked()) {
          auto ga = tape.grad(A.node());
          for (std::size_t q = 0; q < batch; ++q) {
            const double* db = dB.data() + q * k * m;
            const double* x = X.data() + q * k * m;
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                double s = 0.0;
                for (std::size_t c = 0; c < m; ++c) s += db[i * m + c] * x[j * m + c] + db[j * m + c] * x[i * m + c];
                ga[q * k * k + i * k + j] -= 0.5 * s;
              }
          }
        }
      });
}

}  // namespace lte
