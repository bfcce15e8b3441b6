#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sf/rng.hpp"

// Dense N-d tensors with reverse-mode automatic differentiation over a
// dynamically built graph. Templated on the scalar type: production code
// runs float, the gradient-check suites instantiate double.
//
// Nodes record their parents and an adjoint closure; creation order is a
// topological order, so backward() walks ids in reverse. All kernels are
// single-threaded with a fixed accumulation order, which makes every
// forward pass bit-deterministic and independent of how callers batch
// their rows.

namespace sf {

using Shape = std::vector<int64_t>;

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& msg) : std::runtime_error(msg) {}
};

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool& checked_mode_flag() {
  thread_local bool checked = false;
  return checked;
}
inline uint64_t next_node_id() {
  thread_local uint64_t id = 0;
  return ++id;
}

[[noreturn]] inline void fail(const std::string& op, const std::string& msg) {
  throw TensorError(op + ": " + msg);
}

inline void require(bool cond, const std::string& op, const std::string& msg) {
  if (!cond) fail(op, msg);
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }
inline void set_grad_enabled(bool on) { detail::grad_enabled_flag() = on; }
inline bool checked_mode() { return detail::checked_mode_flag(); }
inline void set_checked_mode(bool on) { detail::checked_mode_flag() = on; }

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // sized on first accumulation
  bool requires_grad = false;
  uint64_t id = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // accumulates into parents' grads

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, contiguous. The k-accumulation order for every
// output element is fixed and independent of m and n.
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void gemm_nn(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    std::fill(crow, crow + n, T(0));
    const T* arow = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      const T* brow = b + kk * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  for (int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  }
}

// c[m,n] = a[k,m]^T * b[k,n]; accumulates into c (callers zero it first).
template <typename T>
void gemm_tn_acc(int64_t m, int64_t n, int64_t k, const T* a, const T* b, T* c) {
  for (int64_t kk = 0; kk < k; ++kk) {
    const T* arow = a + kk * m;
    const T* brow = b + kk * n;
    for (int64_t i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// N-d counter walking an output shape while tracking offsets into up to two
// (possibly broadcast) operands via per-dim strides. Stride 0 = broadcast.
struct NdCounter {
  Shape shape;
  std::vector<int64_t> idx;
  std::vector<int64_t> stride_a, stride_b;
  int64_t off_a = 0, off_b = 0;

  void reset(const Shape& out) {
    shape = out;
    idx.assign(out.size(), 0);
    off_a = off_b = 0;
  }
  bool advance() {
    for (int64_t d = static_cast<int64_t>(shape.size()) - 1; d >= 0; --d) {
      ++idx[d];
      off_a += stride_a[d];
      off_b += stride_b[d];
      if (idx[d] < shape[d]) return true;
      off_a -= stride_a[d] * shape[d];
      off_b -= stride_b[d] * shape[d];
      idx[d] = 0;
    }
    return false;
  }
};

inline std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 0);
  int64_t acc = 1;
  for (int64_t d = static_cast<int64_t>(s.size()) - 1; d >= 0; --d) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

// Strides of `in` viewed against broadcast target `out` (0 where dim == 1).
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out,
                                              const std::string& op) {
  std::vector<int64_t> st(out.size(), 0);
  auto in_st = contiguous_strides(in);
  const int64_t offset = static_cast<int64_t>(out.size()) - static_cast<int64_t>(in.size());
  require(offset >= 0, op, "cannot broadcast " + shape_str(in) + " to " + shape_str(out));
  for (size_t d = 0; d < in.size(); ++d) {
    const int64_t od = static_cast<int64_t>(d) + offset;
    if (in[d] == out[od]) {
      st[od] = in_st[d];
    } else if (in[d] == 1) {
      st[od] = 0;
    } else {
      fail(op, "cannot broadcast " + shape_str(in) + " to " + shape_str(out));
    }
  }
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const std::string& op) {
  const size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (size_t d = 0; d < nd; ++d) {
    const int64_t av = d < nd - a.size() ? 1 : a[d - (nd - a.size())];
    const int64_t bv = d < nd - b.size() ? 1 : b[d - (nd - b.size())];
    if (av == bv || bv == 1) {
      out[d] = av;
    } else if (av == 1) {
      out[d] = bv;
    } else {
      fail(op, "shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tensor handle
// ---------------------------------------------------------------------------

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<T> data) {
    detail::require(shape_numel(shape) == static_cast<int64_t>(data.size()), "from_data",
                    "data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<Node<T>>();
    t.n_->shape = std::move(shape);
    t.n_->value = std::move(data);
    t.n_->id = detail::next_node_id();
    return t;
  }

  static Tensor zeros(Shape shape) {
    const int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(static_cast<size_t>(n), T(0)));
  }
  static Tensor full(Shape shape, T v) {
    const int64_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<T>(static_cast<size_t>(n), v));
  }
  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }
  static Tensor scalar(T v) { return from_data({}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    const int64_t n = shape_numel(shape);
    std::vector<T> d(static_cast<size_t>(n));
    for (auto& x : d) x = static_cast<T>(rng.normal()) * stddev;
    return from_data(std::move(shape), std::move(d));
  }
  static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
    const int64_t n = shape_numel(shape);
    std::vector<T> d(static_cast<size_t>(n));
    for (auto& x : d) x = static_cast<T>(rng.uniform(lo, hi));
    return from_data(std::move(shape), std::move(d));
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int64_t ndim() const { return static_cast<int64_t>(n_->shape.size()); }
  int64_t dim(int64_t d) const { return n_->shape[static_cast<size_t>(d)]; }
  int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }
  const std::vector<T>& values() const { return n_->value; }
  std::vector<T>& mutable_values() { return n_->value; }
  const T* data() const { return n_->value.data(); }
  T* data() { return n_->value.data(); }

  T item() const {
    detail::require(numel() == 1, "item", "tensor has " + std::to_string(numel()) + " elements");
    return n_->value[0];
  }
  T at(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    auto st = detail::contiguous_strides(n_->shape);
    size_t d = 0;
    for (int64_t i : idx) off += i * st[d++];
    return n_->value[static_cast<size_t>(off)];
  }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    n_->requires_grad = on;
    return *this;
  }
  const std::vector<T>& grad() const {
    const_cast<Node<T>*>(n_.get())->ensure_grad();
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
  }

  Tensor detach() const {
    Tensor t = from_data(n_->shape, n_->value);
    return t;
  }

  // Backpropagates from a scalar loss. Intermediate grads in the traversed
  // subgraph are reset; leaf grads accumulate across calls.
  void backward() const {
    detail::require(numel() == 1,
                    "backward", "loss must be scalar, got shape " + shape_str(n_->shape));
    std::vector<Node<T>*> order;
    std::vector<Node<T>*> stack{n_.get()};
    std::vector<const Node<T>*> seen;
    auto mark = [&seen](Node<T>* p) {
      for (const Node<T>* q : seen)
        if (q == p) return false;
      seen.push_back(p);
      return true;
    };
    // DFS is fine here: graphs are a few hundred nodes. The linear `seen`
    // scan would be quadratic for huge graphs; switch to a hash set if the
    // tape ever grows past ~10k nodes.
    while (!stack.empty()) {
      Node<T>* n = stack.back();
      stack.pop_back();
      if (!mark(n)) continue;
      order.push_back(n);
      for (auto& p : n->parents) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node<T>* a, const Node<T>* b) { return a->id > b->id; });
    for (Node<T>* n : order) {
      if (n->backward_fn) {
        n->grad.assign(n->value.size(), T(0));
      }
    }
    n_->ensure_grad();
    n_->grad[0] += T(1);
    for (Node<T>* n : order) {
      if (n->backward_fn) n->backward_fn(*n);
    }
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

  static Tensor wrap(std::shared_ptr<Node<T>> n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <typename T>
void scan_nan(const char* op, const std::vector<T>& v) {
  if (!checked_mode_flag()) return;
  for (const T& x : v) {
    if (std::isnan(static_cast<double>(x))) fail(op, "NaN produced in checked mode");
  }
}

template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::vector<Tensor<T>> parents,
                  std::function<void(Node<T>&)> backward) {
  scan_nan(op, value);
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->id = next_node_id();
  n->op = op;
  bool needs = false;
  if (grad_enabled_flag()) {
    for (const auto& p : parents)
      if (p.defined() && p.node()->requires_grad) needs = true;
  }
  if (needs) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward_fn = std::move(backward);
  }
  return Tensor<T>::wrap(std::move(n));
}

// Accumulates `src` laid out as `out_shape` into `dst` laid out as
// `in_shape` (the reverse of a broadcast).
template <typename T>
void reduce_into(const Shape& out_shape, const std::vector<T>& src, const Shape& in_shape,
                 std::vector<T>& dst) {
  if (in_shape == out_shape) {
    for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    return;
  }
  NdCounter it;
  it.reset(out_shape);
  it.stride_a = broadcast_strides(in_shape, out_shape, "reduce");
  it.stride_b.assign(out_shape.size(), 0);
  size_t i = 0;
  do {
    dst[static_cast<size_t>(it.off_a)] += src[i++];
  } while (it.advance());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (broadcasting)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename FwdF, typename BackF>
Tensor<T> binary_op(const char* op, const Tensor<T>& a, const Tensor<T>& b, FwdF f, BackF back) {
  const Shape out = broadcast_shape(a.shape(), b.shape(), op);
  const int64_t n = shape_numel(out);
  std::vector<T> v(static_cast<size_t>(n));
  if (a.shape() == b.shape()) {
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = f(pa[i], pb[i]);
  } else {
    NdCounter it;
    it.reset(out);
    it.stride_a = broadcast_strides(a.shape(), out, op);
    it.stride_b = broadcast_strides(b.shape(), out, op);
    const T* pa = a.data();
    const T* pb = b.data();
    size_t i = 0;
    do {
      v[i++] = f(pa[it.off_a], pb[it.off_b]);
    } while (it.advance());
  }
  return make_op<T>(op, out, std::move(v), {a, b}, back);
}

// Computes d(loss)/d(input) elementwise given lambdas producing local
// partials, handling the broadcast reduction.
template <typename T, typename DaF, typename DbF>
void binary_backward(Node<T>& n, DaF da, DbF db) {
  auto& pa = *n.parents[0];
  auto& pb = *n.parents[1];
  const Shape& out = n.shape;
  const bool same = pa.shape == out && pb.shape == out;
  if (same) {
    const size_t cnt = n.value.size();
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (size_t i = 0; i < cnt; ++i) pa.grad[i] += n.grad[i] * da(pa.value[i], pb.value[i], n.value[i]);
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (size_t i = 0; i < cnt; ++i) pb.grad[i] += n.grad[i] * db(pa.value[i], pb.value[i], n.value[i]);
    }
    return;
  }
  NdCounter it;
  it.reset(out);
  it.stride_a = broadcast_strides(pa.shape, out, n.op);
  it.stride_b = broadcast_strides(pb.shape, out, n.op);
  if (pa.requires_grad) pa.ensure_grad();
  if (pb.requires_grad) pb.ensure_grad();
  size_t i = 0;
  do {
    const T g = n.grad[i];
    const T av = pa.value[static_cast<size_t>(it.off_a)];
    const T bv = pb.value[static_cast<size_t>(it.off_b)];
    const T yv = n.value[i];
    if (pa.requires_grad) pa.grad[static_cast<size_t>(it.off_a)] += g * da(av, bv, yv);
    if (pb.requires_grad) pb.grad[static_cast<size_t>(it.off_b)] += g * db(av, bv, yv);
    ++i;
  } while (it.advance());
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](Node<T>& n) {
        detail::binary_backward<T>(
            n, [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](Node<T>& n) {
        detail::binary_backward<T>(
            n, [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](Node<T>& n) {
        detail::binary_backward<T>(
            n, [](T, T b, T) { return b; }, [](T a, T, T) { return a; });
      });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](Node<T>& n) {
        detail::binary_backward<T>(
            n, [](T, T b, T) { return T(1) / b; },
            [](T a, T b, T) { return -a / (b * b); });
      });
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Scalar ops
// ---------------------------------------------------------------------------

namespace detail {

template <typename T, typename FwdF, typename GradF>
Tensor<T> unary_op(const char* op, const Tensor<T>& a, FwdF f, GradF dfd) {
  const int64_t n = a.numel();
  std::vector<T> v(static_cast<size_t>(n));
  const T* p = a.data();
  for (int64_t i = 0; i < n; ++i) v[static_cast<size_t>(i)] = f(p[i]);
  return make_op<T>(op, a.shape(), std::move(v), {a}, [dfd](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (size_t i = 0; i < nd.value.size(); ++i)
      pa.grad[i] += nd.grad[i] * dfd(pa.value[i], nd.value[i]);
  });
}

}  // namespace detail

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary_op<T>("add_scalar", a, [s](T x) { return x + s; },
                             [](T, T) { return T(1); });
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return detail::unary_op<T>("mul_scalar", a, [s](T x) { return x * s; },
                             [s](T, T) { return s; });
}
// s - a
template <typename T>
Tensor<T> rsub_scalar(T s, const Tensor<T>& a) {
  return detail::unary_op<T>("rsub_scalar", a, [s](T x) { return s - x; },
                             [](T, T) { return T(-1); });
}

template <typename T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <typename T> Tensor<T> operator+(T s, const Tensor<T>& a) { return add_scalar(a, s); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T s) { return add_scalar(a, -s); }
template <typename T> Tensor<T> operator-(T s, const Tensor<T>& a) { return rsub_scalar(s, a); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, T s) { return mul_scalar(a, T(1) / s); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return mul_scalar(a, T(-1)); }

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::unary_op<T>("exp", a, [](T x) { return std::exp(x); },
                             [](T, T y) { return y; });
}
template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return detail::unary_op<T>("log", a, [](T x) { return std::log(x); },
                             [](T x, T) { return T(1) / x; });
}
template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  return detail::unary_op<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                             [](T, T y) { return T(0.5) / y; });
}
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::unary_op<T>("abs", a, [](T x) { return std::abs(x); },
                             [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary_op<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                             [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "softplus", a,
      [](T x) {
        if (x > T(20)) return x;
        if (x < T(-20)) return std::exp(x);
        return std::log1p(std::exp(x));
      },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::unary_op<T>(
      "sigmoid", a,
      [](T x) {
        if (x >= T(0)) {
          const T e = std::exp(-x);
          return T(1) / (T(1) + e);
        }
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return detail::unary_op<T>("tanh", a, [](T x) { return std::tanh(x); },
                             [](T, T y) { return T(1) - y * y; });
}
template <typename T>
Tensor<T> sin(const Tensor<T>& a) {
  return detail::unary_op<T>("sin", a, [](T x) { return std::sin(x); },
                             [](T x, T) { return std::cos(x); });
}
template <typename T>
Tensor<T> cos(const Tensor<T>& a) {
  return detail::unary_op<T>("cos", a, [](T x) { return std::cos(x); },
                             [](T x, T) { return -std::sin(x); });
}
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return detail::unary_op<T>(
      "clamp", a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
      [lo, hi](T x, T) { return (x > lo && x < hi) ? T(1) : T(0); });
}
template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::unary_op<T>("square", a, [](T x) { return x * x; },
                             [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {

inline Shape reduced_shape(const Shape& in, const std::vector<int64_t>& axes, bool keepdim) {
  std::vector<bool> red(in.size(), false);
  for (int64_t a : axes) {
    require(a >= 0 && a < static_cast<int64_t>(in.size()), "sum", "axis out of range");
    red[static_cast<size_t>(a)] = true;
  }
  Shape out;
  for (size_t d = 0; d < in.size(); ++d) {
    if (red[d]) {
      if (keepdim) out.push_back(1);
    } else {
      out.push_back(in[d]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> reduce_op(const char* opname, const Tensor<T>& a, std::vector<int64_t> axes,
                    bool keepdim, bool is_mean) {
  if (axes.empty()) {
    for (int64_t d = 0; d < a.ndim(); ++d) axes.push_back(d);
  }
  const Shape keep = reduced_shape(a.shape(), axes, true);
  const Shape out = reduced_shape(a.shape(), axes, keepdim);
  const int64_t out_n = shape_numel(keep);
  int64_t count = a.numel() / std::max<int64_t>(out_n, 1);
  const T scale = is_mean ? T(1) / static_cast<T>(count) : T(1);

  std::vector<T> v(static_cast<size_t>(out_n), T(0));
  NdCounter it;
  it.reset(a.shape());
  it.stride_a = broadcast_strides(keep, a.shape(), opname);
  it.stride_b.assign(a.shape().size(), 0);
  const T* p = a.data();
  size_t i = 0;
  do {
    v[static_cast<size_t>(it.off_a)] += p[i++];
  } while (it.advance());
  if (is_mean) {
    for (auto& x : v) x *= scale;
  }
  Shape in_shape = a.shape();
  return make_op<T>(opname, out, std::move(v), {a},
                    [keep, in_shape, scale, opname](Node<T>& nd) {
                      auto& pa = *nd.parents[0];
                      if (!pa.requires_grad) return;
                      pa.ensure_grad();
                      NdCounter jt;
                      jt.reset(in_shape);
                      jt.stride_a = broadcast_strides(keep, in_shape, opname);
                      jt.stride_b.assign(in_shape.size(), 0);
                      size_t j = 0;
                      do {
                        pa.grad[j++] += nd.grad[static_cast<size_t>(jt.off_a)] * scale;
                      } while (jt.advance());
                    });
}

}  // namespace detail

template <typename T>
Tensor<T> sum(const Tensor<T>& a, std::vector<int64_t> axes = {}, bool keepdim = false) {
  return detail::reduce_op<T>("sum", a, std::move(axes), keepdim, false);
}
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::vector<int64_t> axes = {}, bool keepdim = false) {
  return detail::reduce_op<T>("mean", a, std::move(axes), keepdim, true);
}

// ---------------------------------------------------------------------------
// Softmax over one axis
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int64_t axis) {
  detail::require(axis >= 0 && axis < a.ndim(), "softmax", "axis out of range");
  const Shape& s = a.shape();
  int64_t outer = 1, inner = 1;
  const int64_t len = s[static_cast<size_t>(axis)];
  for (int64_t d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < a.ndim(); ++d) inner *= s[static_cast<size_t>(d)];

  std::vector<T> v(a.values().size());
  const T* p = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T mx = p[base];
      for (int64_t i = 1; i < len; ++i) mx = std::max(mx, p[base + i * inner]);
      T z = T(0);
      for (int64_t i = 0; i < len; ++i) {
        const T e = std::exp(p[base + i * inner] - mx);
        v[static_cast<size_t>(base + i * inner)] = e;
        z += e;
      }
      const T inv = T(1) / z;
      for (int64_t i = 0; i < len; ++i) v[static_cast<size_t>(base + i * inner)] *= inv;
    }
  }
  return detail::make_op<T>("softmax", a.shape(), std::move(v), {a},
                            [outer, inner, len](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              for (int64_t o = 0; o < outer; ++o) {
                                for (int64_t in = 0; in < inner; ++in) {
                                  const int64_t base = o * len * inner + in;
                                  T dot = T(0);
                                  for (int64_t i = 0; i < len; ++i) {
                                    const size_t k = static_cast<size_t>(base + i * inner);
                                    dot += nd.grad[k] * nd.value[k];
                                  }
                                  for (int64_t i = 0; i < len; ++i) {
                                    const size_t k = static_cast<size_t>(base + i * inner);
                                    pa.grad[k] += (nd.grad[k] - dot) * nd.value[k];
                                  }
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Cumulative sum along an axis (optionally exclusive)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> cumsum(const Tensor<T>& a, int64_t axis, bool exclusive = false) {
  detail::require(axis >= 0 && axis < a.ndim(), "cumsum", "axis out of range");
  const Shape& s = a.shape();
  int64_t outer = 1, inner = 1;
  const int64_t len = s[static_cast<size_t>(axis)];
  for (int64_t d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < a.ndim(); ++d) inner *= s[static_cast<size_t>(d)];

  std::vector<T> v(a.values().size());
  const T* p = a.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      T acc = T(0);
      for (int64_t i = 0; i < len; ++i) {
        const size_t k = static_cast<size_t>(base + i * inner);
        if (exclusive) {
          v[k] = acc;
          acc += p[k];
        } else {
          acc += p[k];
          v[k] = acc;
        }
      }
    }
  }
  return detail::make_op<T>("cumsum", a.shape(), std::move(v), {a},
                            [outer, inner, len, exclusive](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              // adjoint: reverse cumulative sum of upstream
                              for (int64_t o = 0; o < outer; ++o) {
                                for (int64_t in = 0; in < inner; ++in) {
                                  const int64_t base = o * len * inner + in;
                                  T acc = T(0);
                                  for (int64_t i = len - 1; i >= 0; --i) {
                                    const size_t k = static_cast<size_t>(base + i * inner);
                                    if (exclusive) {
                                      pa.grad[k] += acc;
                                      acc += nd.grad[k];
                                    } else {
                                      acc += nd.grad[k];
                                      pa.grad[k] += acc;
                                    }
                                  }
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Matmul (2-D)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.ndim() == 2 && b.ndim() == 2, "matmul",
                  "expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  detail::require(a.dim(1) == b.dim(0), "matmul",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> v(static_cast<size_t>(m * n));
  detail::gemm_nn(m, n, k, a.data(), b.data(), v.data());
  return detail::make_op<T>("matmul", {m, n}, std::move(v), {a, b}, [m, n, k](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      std::vector<T> tmp(static_cast<size_t>(m * k));
      detail::gemm_nt(m, k, n, nd.grad.data(), pb.value.data(), tmp.data());
      for (size_t i = 0; i < tmp.size(); ++i) pa.grad[i] += tmp[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      detail::gemm_tn_acc(k, n, m, pa.value.data(), nd.grad.data(), pb.grad.data());
    }
  });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::require(shape_numel(shape) == a.numel(), "reshape",
                  "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  return detail::make_op<T>("reshape", std::move(shape), a.values(), {a}, [](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (size_t i = 0; i < nd.grad.size(); ++i) pa.grad[i] += nd.grad[i];
  });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  detail::require(a.ndim() == 2, "transpose2d", "expects 2-D, got " + shape_str(a.shape()));
  const int64_t m = a.dim(0), n = a.dim(1);
  std::vector<T> v(static_cast<size_t>(m * n));
  const T* p = a.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) v[static_cast<size_t>(j * m + i)] = p[i * n + j];
  return detail::make_op<T>("transpose2d", {n, m}, std::move(v), {a}, [m, n](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) pa.grad[static_cast<size_t>(i * n + j)] += nd.grad[static_cast<size_t>(j * m + i)];
  });
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, Shape shape) {
  const int64_t n = shape_numel(shape);
  std::vector<T> v(static_cast<size_t>(n));
  detail::NdCounter it;
  it.reset(shape);
  it.stride_a = detail::broadcast_strides(a.shape(), shape, "broadcast_to");
  it.stride_b.assign(shape.size(), 0);
  const T* p = a.data();
  size_t i = 0;
  do {
    v[i++] = p[it.off_a];
  } while (it.advance());
  Shape in_shape = a.shape();
  Shape out_shape = shape;
  return detail::make_op<T>("broadcast_to", std::move(shape), std::move(v), {a},
                            [in_shape, out_shape](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              detail::reduce_into<T>(out_shape, nd.grad, in_shape, pa.grad);
                            });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis) {
  detail::require(!parts.empty(), "concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  detail::require(axis >= 0 && axis < static_cast<int64_t>(s0.size()), "concat",
                  "axis out of range");
  Shape out = s0;
  int64_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.ndim() == parts[0].ndim(), "concat", "rank mismatch");
    for (int64_t d = 0; d < p.ndim(); ++d) {
      if (d != axis)
        detail::require(p.dim(d) == s0[static_cast<size_t>(d)], "concat",
                        "shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(s0));
    }
    total += p.dim(axis);
  }
  out[static_cast<size_t>(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= s0[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < static_cast<int64_t>(s0.size()); ++d)
    inner *= s0[static_cast<size_t>(d)];

  std::vector<T> v(static_cast<size_t>(shape_numel(out)));
  std::vector<int64_t> lens;
  int64_t off = 0;
  for (const auto& p : parts) {
    const int64_t len = p.dim(axis);
    lens.push_back(len);
    const T* src = p.data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(v.data() + (o * total + off) * inner, src + o * len * inner,
                  static_cast<size_t>(len * inner) * sizeof(T));
    }
    off += len;
  }
  return detail::make_op<T>("concat", out, std::move(v), parts,
                            [outer, inner, total, lens](Node<T>& nd) {
                              int64_t off2 = 0;
                              for (size_t pi = 0; pi < nd.parents.size(); ++pi) {
                                auto& pa = *nd.parents[pi];
                                const int64_t len = lens[pi];
                                if (pa.requires_grad) {
                                  pa.ensure_grad();
                                  for (int64_t o = 0; o < outer; ++o) {
                                    const T* g = nd.grad.data() + (o * total + off2) * inner;
                                    T* dst = pa.grad.data() + o * len * inner;
                                    for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                                  }
                                }
                                off2 += len;
                              }
                            });
}

// Selects indices along one axis (gather).
template <typename T>
Tensor<T> index_select(const Tensor<T>& a, int64_t axis, std::vector<int64_t> idx) {
  detail::require(axis >= 0 && axis < a.ndim(), "index_select", "axis out of range");
  const Shape& s = a.shape();
  const int64_t len = s[static_cast<size_t>(axis)];
  for (int64_t i : idx)
    detail::require(i >= 0 && i < len, "index_select", "index out of range");
  int64_t outer = 1, inner = 1;
  for (int64_t d = 0; d < axis; ++d) outer *= s[static_cast<size_t>(d)];
  for (int64_t d = axis + 1; d < a.ndim(); ++d) inner *= s[static_cast<size_t>(d)];
  Shape out = s;
  out[static_cast<size_t>(axis)] = static_cast<int64_t>(idx.size());
  std::vector<T> v(static_cast<size_t>(shape_numel(out)));
  const T* p = a.data();
  const int64_t ni = static_cast<int64_t>(idx.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t j = 0; j < ni; ++j) {
      std::memcpy(v.data() + (o * ni + j) * inner, p + (o * len + idx[static_cast<size_t>(j)]) * inner,
                  static_cast<size_t>(inner) * sizeof(T));
    }
  }
  return detail::make_op<T>("index_select", out, std::move(v), {a},
                            [outer, inner, len, ni, idx](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              for (int64_t o = 0; o < outer; ++o) {
                                for (int64_t j = 0; j < ni; ++j) {
                                  const T* g = nd.grad.data() + (o * ni + j) * inner;
                                  T* dst = pa.grad.data() +
                                           (o * len + idx[static_cast<size_t>(j)]) * inner;
                                  for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
                                }
                              }
                            });
}

// Per-row gather along axis 1: x is [R, S, tail...], idx holds R*S2 entries
// in [0, S). Trailing dims are carried whole.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, const std::vector<int64_t>& idx, int64_t s2) {
  detail::require(a.ndim() >= 2, "gather_rows", "needs rank >= 2, got " + shape_str(a.shape()));
  const int64_t rows = a.dim(0);
  const int64_t len = a.dim(1);
  detail::require(static_cast<int64_t>(idx.size()) == rows * s2, "gather_rows",
                  "index count mismatch");
  int64_t inner = 1;
  for (int64_t d = 2; d < a.ndim(); ++d) inner *= a.dim(d);
  Shape out = a.shape();
  out[1] = s2;
  std::vector<T> v(static_cast<size_t>(shape_numel(out)));
  const T* p = a.data();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < s2; ++j) {
      const int64_t src = idx[static_cast<size_t>(r * s2 + j)];
      detail::require(src >= 0 && src < len, "gather_rows", "index out of range");
      std::memcpy(v.data() + (r * s2 + j) * inner, p + (r * len + src) * inner,
                  static_cast<size_t>(inner) * sizeof(T));
    }
  }
  return detail::make_op<T>("gather_rows", out, std::move(v), {a},
                            [rows, len, s2, inner, idx](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              for (int64_t r = 0; r < rows; ++r) {
                                for (int64_t j = 0; j < s2; ++j) {
                                  const int64_t dst = idx[static_cast<size_t>(r * s2 + j)];
                                  const T* g = nd.grad.data() + (r * s2 + j) * inner;
                                  T* d = pa.grad.data() + (r * len + dst) * inner;
                                  for (int64_t i = 0; i < inner; ++i) d[i] += g[i];
                                }
                              }
                            });
}

// Spreads H row-blocks into a zero tensor with `rows` rows: the inverse of
// index_select along axis 0.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& a, const std::vector<int64_t>& row_idx, int64_t rows) {
  detail::require(a.ndim() >= 1, "scatter_rows", "needs rank >= 1");
  detail::require(static_cast<int64_t>(row_idx.size()) == a.dim(0), "scatter_rows",
                  "index count mismatch");
  int64_t inner = 1;
  for (int64_t d = 1; d < a.ndim(); ++d) inner *= a.dim(d);
  Shape out = a.shape();
  out[0] = rows;
  std::vector<T> v(static_cast<size_t>(rows * inner), T(0));
  const T* p = a.data();
  for (size_t j = 0; j < row_idx.size(); ++j) {
    const int64_t r = row_idx[j];
    detail::require(r >= 0 && r < rows, "scatter_rows", "row index out of range");
    std::memcpy(v.data() + r * inner, p + static_cast<int64_t>(j) * inner,
                static_cast<size_t>(inner) * sizeof(T));
  }
  return detail::make_op<T>("scatter_rows", out, std::move(v), {a},
                            [row_idx, inner](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              for (size_t j = 0; j < row_idx.size(); ++j) {
                                const T* g = nd.grad.data() + row_idx[j] * inner;
                                T* d = pa.grad.data() + static_cast<int64_t>(j) * inner;
                                for (int64_t i = 0; i < inner; ++i) d[i] += g[i];
                              }
                            });
}

// ---------------------------------------------------------------------------
// Stable sort-by-key along the last axis of a [R, S] key tensor. The
// permutation is exposed and non-differentiable; values reordered through
// gather_rows keep their gradients.
// ---------------------------------------------------------------------------

template <typename T>
struct SortByKey {
  Tensor<T> keys;                // sorted keys, detached
  std::vector<int64_t> perm;     // row-major [R, S], source index per slot
};

template <typename T>
SortByKey<T> sort_by_key(const Tensor<T>& keys) {
  detail::require(keys.ndim() == 2, "sort_by_key", "expects [R,S] keys, got " +
                                                        shape_str(keys.shape()));
  const int64_t rows = keys.dim(0), len = keys.dim(1);
  std::vector<int64_t> perm(static_cast<size_t>(rows * len));
  std::vector<T> sorted(keys.values().size());
  const T* p = keys.data();
  for (int64_t r = 0; r < rows; ++r) {
    int64_t* pr = perm.data() + r * len;
    std::iota(pr, pr + len, 0);
    const T* krow = p + r * len;
    std::stable_sort(pr, pr + len,
                     [krow](int64_t a, int64_t b) { return krow[a] < krow[b]; });
    for (int64_t i = 0; i < len; ++i) sorted[static_cast<size_t>(r * len + i)] = krow[pr[i]];
  }
  SortByKey<T> out;
  out.keys = Tensor<T>::from_data(keys.shape(), std::move(sorted));
  out.perm = std::move(perm);
  return out;
}

template <typename T>
Tensor<T> apply_sort(const Tensor<T>& values, const SortByKey<T>& s) {
  return gather_rows(values, s.perm, values.dim(1));
}

// ---------------------------------------------------------------------------
// 2-D convolution (stride 1, zero padding), pooling, upsampling.
// Layout: [C, H, W].
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t pad,
            int64_t ho, int64_t wo, T* col) {
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx) {
        T* dst = col + ((c * kh + dy) * kw + dx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy + dy - pad;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * wo, dst + (oy + 1) * wo, T(0));
            continue;
          }
          const T* src = x + (c * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox + dx - pad;
            dst[oy * wo + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, int64_t cin, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t pad, int64_t ho, int64_t wo, T* x) {
  for (int64_t c = 0; c < cin; ++c) {
    for (int64_t dy = 0; dy < kh; ++dy) {
      for (int64_t dx = 0; dx < kw; ++dx) {
        const T* src = col + ((c * kh + dy) * kw + dx) * ho * wo;
        for (int64_t oy = 0; oy < ho; ++oy) {
          const int64_t iy = oy + dy - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (c * h + iy) * w;
          for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t ix = ox + dx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t pad) {
  detail::require(x.ndim() == 3, "conv2d", "input must be [C,H,W], got " + shape_str(x.shape()));
  detail::require(weight.ndim() == 4, "conv2d",
                  "weight must be [Cout,Cin,kh,kw], got " + shape_str(weight.shape()));
  const int64_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  detail::require(weight.dim(1) == cin, "conv2d",
                  "shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(weight.shape()));
  detail::require(bias.numel() == cout, "conv2d", "bias size mismatch");
  const int64_t ho = h + 2 * pad - kh + 1;
  const int64_t wo = w + 2 * pad - kw + 1;
  detail::require(ho >= 1 && wo >= 1, "conv2d", "kernel larger than padded input");

  const int64_t kdim = cin * kh * kw;
  auto col = std::make_shared<std::vector<T>>(static_cast<size_t>(kdim * ho * wo));
  detail::im2col(x.data(), cin, h, w, kh, kw, pad, ho, wo, col->data());

  std::vector<T> v(static_cast<size_t>(cout * ho * wo));
  detail::gemm_nn(cout, ho * wo, kdim, weight.data(), col->data(), v.data());
  const T* b = bias.data();
  for (int64_t c = 0; c < cout; ++c) {
    T* row = v.data() + c * ho * wo;
    for (int64_t i = 0; i < ho * wo; ++i) row[i] += b[c];
  }
  return detail::make_op<T>(
      "conv2d", {cout, ho, wo}, std::move(v), {x, weight, bias},
      [col, cin, h, w, kh, kw, pad, ho, wo, cout, kdim](Node<T>& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        auto& pb = *nd.parents[2];
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (int64_t c = 0; c < cout; ++c) {
            T acc = T(0);
            const T* g = nd.grad.data() + c * ho * wo;
            for (int64_t i = 0; i < ho * wo; ++i) acc += g[i];
            pb.grad[static_cast<size_t>(c)] += acc;
          }
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          std::vector<T> tmp(static_cast<size_t>(cout * kdim));
          detail::gemm_nt(cout, kdim, ho * wo, nd.grad.data(), col->data(), tmp.data());
          for (size_t i = 0; i < tmp.size(); ++i) pw.grad[i] += tmp[i];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          std::vector<T> dcol(static_cast<size_t>(kdim * ho * wo), T(0));
          detail::gemm_tn_acc(kdim, ho * wo, cout, pw.value.data(), nd.grad.data(), dcol.data());
          detail::col2im_acc(dcol.data(), cin, h, w, kh, kw, pad, ho, wo, px.grad.data());
        }
      });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x) {
  detail::require(x.ndim() == 3, "avg_pool2d", "input must be [C,H,W]");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  detail::require(h % 2 == 0 && w % 2 == 0, "avg_pool2d",
                  "spatial dims must be even, got " + shape_str(x.shape()));
  const int64_t ho = h / 2, wo = w / 2;
  std::vector<T> v(static_cast<size_t>(c * ho * wo));
  const T* p = x.data();
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t y = 0; y < ho; ++y) {
      for (int64_t xx = 0; xx < wo; ++xx) {
        const T* p00 = p + (ci * h + 2 * y) * w + 2 * xx;
        v[static_cast<size_t>((ci * ho + y) * wo + xx)] =
            (p00[0] + p00[1] + p00[w] + p00[w + 1]) * T(0.25);
      }
    }
  }
  return detail::make_op<T>("avg_pool2d", {c, ho, wo}, std::move(v), {x},
                            [c, h, w, ho, wo](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              for (int64_t ci = 0; ci < c; ++ci) {
                                for (int64_t y = 0; y < ho; ++y) {
                                  for (int64_t xx = 0; xx < wo; ++xx) {
                                    const T g = nd.grad[static_cast<size_t>((ci * ho + y) * wo + xx)] * T(0.25);
                                    T* d = pa.grad.data() + (ci * h + 2 * y) * w + 2 * xx;
                                    d[0] += g;
                                    d[1] += g;
                                    d[w] += g;
                                    d[w + 1] += g;
                                  }
                                }
                              }
                            });
}

template <typename T>
Tensor<T> upsample2x_nearest(const Tensor<T>& x) {
  detail::require(x.ndim() == 3, "upsample2x", "input must be [C,H,W]");
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<T> v(static_cast<size_t>(c * 4 * h * w));
  const T* p = x.data();
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t y = 0; y < h; ++y) {
      for (int64_t xx = 0; xx < w; ++xx) {
        const T val = p[(ci * h + y) * w + xx];
        T* d = v.data() + (ci * 2 * h + 2 * y) * 2 * w + 2 * xx;
        d[0] = val;
        d[1] = val;
        d[2 * w] = val;
        d[2 * w + 1] = val;
      }
    }
  }
  return detail::make_op<T>("upsample2x", {c, 2 * h, 2 * w}, std::move(v), {x},
                            [c, h, w](Node<T>& nd) {
                              auto& pa = *nd.parents[0];
                              if (!pa.requires_grad) return;
                              pa.ensure_grad();
                              for (int64_t ci = 0; ci < c; ++ci) {
                                for (int64_t y = 0; y < h; ++y) {
                                  for (int64_t xx = 0; xx < w; ++xx) {
                                    const T* g = nd.grad.data() + (ci * 2 * h + 2 * y) * 2 * w + 2 * xx;
                                    pa.grad[static_cast<size_t>((ci * h + y) * w + xx)] +=
                                        g[0] + g[1] + g[2 * w] + g[2 * w + 1];
                                  }
                                }
                              }
                            });
}

// ---------------------------------------------------------------------------
// Bilinear sampling of a [C, H, W] plane at [n, 2] (row, col) grid
// coordinates. Border-clamped; differentiable w.r.t. both the plane and the
// coordinates (coordinate gradients vanish in the clamped region).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& plane, const Tensor<T>& coords) {
  detail::require(plane.ndim() == 3, "bilinear_sample",
                  "plane must be [C,H,W], got " + shape_str(plane.shape()));
  detail::require(coords.ndim() == 2 && coords.dim(1) == 2, "bilinear_sample",
                  "coords must be [n,2], got " + shape_str(coords.shape()));
  const int64_t c = plane.dim(0), h = plane.dim(1), w = plane.dim(2);
  const int64_t n = coords.dim(0);

  struct Tap {
    int64_t r0, c0;
    T fr, fc;
    bool dr_live, dc_live;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(n));
  const T* cp = coords.data();
  for (int64_t i = 0; i < n; ++i) {
    T r = cp[2 * i], cc = cp[2 * i + 1];
    Tap t;
    t.dr_live = r > T(0) && r < T(h - 1);
    t.dc_live = cc > T(0) && cc < T(w - 1);
    r = std::min(std::max(r, T(0)), T(h - 1));
    cc = std::min(std::max(cc, T(0)), T(w - 1));
    t.r0 = std::min(static_cast<int64_t>(r), h >= 2 ? h - 2 : int64_t(0));
    t.c0 = std::min(static_cast<int64_t>(cc), w >= 2 ? w - 2 : int64_t(0));
    t.fr = h >= 2 ? r - static_cast<T>(t.r0) : T(0);
    t.fc = w >= 2 ? cc - static_cast<T>(t.c0) : T(0);
    (*taps)[static_cast<size_t>(i)] = t;
  }

  std::vector<T> v(static_cast<size_t>(n * c));
  const T* pp = plane.data();
  const int64_t r1step = h >= 2 ? w : 0;
  const int64_t c1step = w >= 2 ? 1 : 0;
  for (int64_t i = 0; i < n; ++i) {
    const Tap& t = (*taps)[static_cast<size_t>(i)];
    const T w00 = (T(1) - t.fr) * (T(1) - t.fc);
    const T w01 = (T(1) - t.fr) * t.fc;
    const T w10 = t.fr * (T(1) - t.fc);
    const T w11 = t.fr * t.fc;
    for (int64_t ci = 0; ci < c; ++ci) {
      const T* base = pp + (ci * h + t.r0) * w + t.c0;
      v[static_cast<size_t>(i * c + ci)] =
          w00 * base[0] + w01 * base[c1step] + w10 * base[r1step] + w11 * base[r1step + c1step];
    }
  }
  return detail::make_op<T>(
      "bilinear_sample", {n, c}, std::move(v), {plane, coords},
      [taps, c, h, w, n, r1step, c1step](Node<T>& nd) {
        auto& pp = *nd.parents[0];
        auto& pc = *nd.parents[1];
        const bool want_plane = pp.requires_grad;
        const bool want_coords = pc.requires_grad;
        if (want_plane) pp.ensure_grad();
        if (want_coords) pc.ensure_grad();
        for (int64_t i = 0; i < n; ++i) {
          const Tap& t = (*taps)[static_cast<size_t>(i)];
          const T w00 = (T(1) - t.fr) * (T(1) - t.fc);
          const T w01 = (T(1) - t.fr) * t.fc;
          const T w10 = t.fr * (T(1) - t.fc);
          const T w11 = t.fr * t.fc;
          T dr = T(0), dc = T(0);
          for (int64_t ci = 0; ci < c; ++ci) {
            const T g = nd.grad[static_cast<size_t>(i * c + ci)];
            const int64_t base_off = (ci * h + t.r0) * w + t.c0;
            const T* base = pp.value.data() + base_off;
            if (want_plane) {
              T* gb = pp.grad.data() + base_off;
              gb[0] += g * w00;
              gb[c1step] += g * w01;
              gb[r1step] += g * w10;
              gb[r1step + c1step] += g * w11;
            }
            if (want_coords) {
              const T v00 = base[0], v01 = base[c1step], v10 = base[r1step],
                      v11 = base[r1step + c1step];
              dr += g * ((v10 - v00) * (T(1) - t.fc) + (v11 - v01) * t.fc);
              dc += g * ((v01 - v00) * (T(1) - t.fr) + (v11 - v10) * t.fr);
            }
          }
          if (want_coords) {
            if (t.dr_live) pc.grad[static_cast<size_t>(2 * i)] += dr;
            if (t.dc_live) pc.grad[static_cast<size_t>(2 * i + 1)] += dc;
          }
        }
      });
}

}  // namespace sf
