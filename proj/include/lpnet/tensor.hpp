#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
// Every operation builds a dynamic tape; backward(loss) walks it in reverse
// creation order and accumulates gradients into leaves. Templated on the
// scalar type: double is the reference/gradient-check precision, float is
// the fast training mode. Single-threaded by design so that identical seeds
// give bitwise-identical runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lpnet/rng.hpp"

namespace lpnet {

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline int64_t numel_of(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

// Tape construction can be switched off (inference); ops then run as plain
// array math with no parent tracking.
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = prev; }
};

template <typename T>
class Tensor;

template <typename T>
struct TensorNode {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized lazily, only when requires_grad
  bool requires_grad = false;
  uint64_t seq = 0;  // creation index; children always have larger seq
  std::vector<Tensor<T>> parents;
  std::function<void(TensorNode<T>&)> backward;  // reads grad, feeds parents

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

inline uint64_t next_node_seq() {
  thread_local uint64_t counter = 0;
  return ++counter;
}

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return make_leaf(std::move(shape), {}, requires_grad);
  }

  static Tensor full(std::vector<int> shape, T value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
  }

  static Tensor of(std::vector<int> shape, std::vector<T> values,
                   bool requires_grad = false) {
    check_arg(int64_t(values.size()) == numel_of(shape),
              "tensor data length " + std::to_string(values.size()) +
                  " does not match shape " + shape_str(shape));
    return make_leaf(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor scalar(T v) { return of({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[size_t(i)]; }
  int ndim() const { return int(node_->shape.size()); }
  int64_t numel() const { return int64_t(node_->data.size()); }

  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  void set_requires_grad(bool on) {
    check_arg(node_->parents.empty(), "requires_grad is settable on leaves only");
    node_->requires_grad = on;
  }

  void zero_grad() {
    if (node_->requires_grad) {
      node_->ensure_grad();
      std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }
  }

  T item() const {
    check_arg(numel() == 1, "item() needs a scalar, got " + shape_str(shape()));
    return node_->data[0];
  }

  bool is_leaf() const { return node_->parents.empty(); }

  TensorNode<T>* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return node_; }

  // Runs reverse accumulation from this scalar. Every reachable leaf with
  // requires_grad ends up with d(this)/d(leaf) summed into its grad.
  void backward() const;

 private:
  static Tensor make_leaf(std::vector<int> shape, std::vector<T> values,
                          bool requires_grad) {
    for (int d : shape) check_arg(d > 0, "non-positive extent in " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<T>>();
    t.node_->shape = std::move(shape);
    if (values.empty())
      t.node_->data.assign(size_t(numel_of(t.node_->shape)), T(0));
    else
      t.node_->data = std::move(values);
    t.node_->requires_grad = requires_grad;
    t.node_->seq = next_node_seq();
    if (requires_grad) t.node_->ensure_grad();
    return t;
  }

  template <typename U>
  friend Tensor<U> make_op(std::vector<int> shape, std::vector<U> values,
                           std::vector<Tensor<U>> parents,
                           std::function<void(TensorNode<U>&)> backward);

  std::shared_ptr<TensorNode<T>> node_;
};

// Builds an op-result node. If the tape is off or no parent needs gradients,
// the result is a detached constant.
template <typename T>
Tensor<T> make_op(std::vector<int> shape, std::vector<T> values,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backward) {
  Tensor<T> t;
  t.node_ = std::make_shared<TensorNode<T>>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(values);
  t.node_->seq = next_node_seq();
  bool track = grad_mode();
  if (track) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    track = any;
  }
  if (track) {
    t.node_->requires_grad = true;
    t.node_->parents = std::move(parents);
    t.node_->backward = std::move(backward);
  }
  return t;
}

template <typename T>
void Tensor<T>::backward() const {
  check_arg(numel() == 1, "backward() needs a scalar loss");
  // Reachable subgraph, ordered by descending creation index. Parents are
  // always created before children, so this is a valid reverse topological
  // order and is deterministic.
  std::vector<TensorNode<T>*> order;
  std::vector<TensorNode<T>*> stack{node_.get()};
  std::vector<TensorNode<T>*> seen;
  auto mark = [&](TensorNode<T>* n) {
    // linear probe over a small sorted vector keyed by pointer
    auto it = std::lower_bound(seen.begin(), seen.end(), n);
    if (it != seen.end() && *it == n) return false;
    seen.insert(it, n);
    return true;
  };
  mark(node_.get());
  while (!stack.empty()) {
    TensorNode<T>* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents)
      if (p.requires_grad() && mark(p.node())) stack.push_back(p.node());
  }
  std::sort(order.begin(), order.end(),
            [](const TensorNode<T>* a, const TensorNode<T>* b) { return a->seq > b->seq; });

  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (TensorNode<T>* n : order) {
    if (n->backward && n->requires_grad) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// GEMM, backed by Eigen. C = alpha*op(A)*op(B) + beta*C, all row-major.
// ---------------------------------------------------------------------------

template <typename T>
using EigenRowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Map = Eigen::Map<const EigenRowMat<T>>;
  using MapMut = Eigen::Map<EigenRowMat<T>>;
  Map A(a, trans_a ? k : m, trans_a ? m : k);
  Map B(b, trans_b ? n : k, trans_b ? k : n);
  MapMut C(c, m, n);
  if (beta == T(0)) {
    if (!trans_a && !trans_b)
      C.noalias() = alpha * (A * B);
    else if (trans_a && !trans_b)
      C.noalias() = alpha * (A.transpose() * B);
    else if (!trans_a && trans_b)
      C.noalias() = alpha * (A * B.transpose());
    else
      C.noalias() = alpha * (A.transpose() * B.transpose());
  } else {
    if (beta != T(1)) C *= beta;
    if (!trans_a && !trans_b)
      C.noalias() += alpha * (A * B);
    else if (trans_a && !trans_b)
      C.noalias() += alpha * (A.transpose() * B);
    else if (!trans_a && trans_b)
      C.noalias() += alpha * (A * B.transpose());
    else
      C.noalias() += alpha * (A.transpose() * B.transpose());
  }
}

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename T>
void accumulate(std::vector<T>& dst, const std::vector<T>& src) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_arg(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) mutable {
    if (a.requires_grad()) accumulate(a.grad(), n.grad);
    if (b.requires_grad()) accumulate(b.grad(), n.grad);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  check_arg(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) mutable {
    if (a.requires_grad()) accumulate(a.grad(), n.grad);
    if (b.requires_grad()) {
      auto& g = b.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_arg(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<T> out(a.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  return make_op<T>(a.shape(), std::move(out), {a, b}, [a, b](TensorNode<T>& n) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto& g = b.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * a.data()[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.data());
  for (auto& v : out) v *= s;
  return make_op<T>(a.shape(), std::move(out), {a}, [a, s](TensorNode<T>& n) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v;
  return make_op<T>({1}, {acc}, {a}, [a](TensorNode<T>& n) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (auto& v : g) v += n.grad[0];
    }
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return make_op<T>(a.shape(), std::move(out), {a}, [a](TensorNode<T>& n) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (size_t i = 0; i < g.size(); ++i)
        if (a.data()[i] > T(0)) g[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = T(1) / (T(1) + std::exp(-v));
  auto y = std::make_shared<std::vector<T>>(out);
  return make_op<T>(a.shape(), std::move(out), {a}, [a, y](TensorNode<T>& n) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T s = (*y)[i];
        g[i] += n.grad[i] * s * (T(1) - s);
      }
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = std::tanh(v);
  auto y = std::make_shared<std::vector<T>>(out);
  return make_op<T>(a.shape(), std::move(out), {a}, [a, y](TensorNode<T>& n) mutable {
    if (a.requires_grad()) {
      auto& g = a.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        T t = (*y)[i];
        g[i] += n.grad[i] * (T(1) - t * t);
      }
    }
  });
}

// Row-wise softmax of a 2-D tensor, stabilized by the row max.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& a) {
  check_arg(a.ndim() == 2, "softmax_rows: input must be 2-D, got " + shape_str(a.shape()));
  for (T v : a.data()) check_arg(std::isfinite(double(v)), "softmax_rows: non-finite input");
  int rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.data().size());
  for (int r = 0; r < rows; ++r) {
    const T* x = a.data().data() + int64_t(r) * cols;
    T* y = out.data() + int64_t(r) * cols;
    T mx = x[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, x[c]);
    T denom = T(0);
    for (int c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - mx);
      denom += y[c];
    }
    for (int c = 0; c < cols; ++c) y[c] /= denom;
  }
  auto y_copy = std::make_shared<std::vector<T>>(out);
  return make_op<T>(a.shape(), std::move(out), {a},
                    [a, y_copy, rows, cols](TensorNode<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      auto& g = a.grad();
                      for (int r = 0; r < rows; ++r) {
                        const T* y = y_copy->data() + int64_t(r) * cols;
                        const T* dy = n.grad.data() + int64_t(r) * cols;
                        T dot = T(0);
                        for (int c = 0; c < cols; ++c) dot += dy[c] * y[c];
                        T* gx = g.data() + int64_t(r) * cols;
                        for (int c = 0; c < cols; ++c) gx[c] += y[c] * (dy[c] - dot);
                      }
                    });
}

// log(max(x, floor)); keeps log-likelihood terms finite.
template <typename T>
Tensor<T> log_clamped(const Tensor<T>& a, T floor_value) {
  std::vector<T> out(a.data());
  for (auto& v : out) v = std::log(v < floor_value ? floor_value : v);
  return make_op<T>(a.shape(), std::move(out), {a},
                    [a, floor_value](TensorNode<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      auto& g = a.grad();
                      for (size_t i = 0; i < g.size(); ++i) {
                        T x = a.data()[i];
                        if (x >= floor_value) g[i] += n.grad[i] / x;
                      }
                    });
}

// log(sum_i exp(x_i)) over a list of scalars, max-shifted.
template <typename T>
Tensor<T> logsumexp(const std::vector<Tensor<T>>& xs) {
  check_arg(!xs.empty(), "logsumexp: empty input");
  T mx = xs[0].item();
  for (const auto& t : xs) mx = std::max(mx, t.item());
  T acc = T(0);
  for (const auto& t : xs) acc += std::exp(t.item() - mx);
  T value = mx + std::log(acc);
  std::vector<Tensor<T>> parents(xs.begin(), xs.end());
  return make_op<T>({1}, {value}, std::move(parents),
                    [xs, value](TensorNode<T>& n) mutable {
                      for (auto& x : xs) {
                        if (!x.requires_grad()) continue;
                        x.grad()[0] += n.grad[0] * std::exp(x.item() - value);
                      }
                    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<int> new_shape) {
  check_arg(numel_of(new_shape) == a.numel(),
            "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                shape_str(new_shape));
  std::vector<T> out(a.data());
  return make_op<T>(std::move(new_shape), std::move(out), {a},
                    [a](TensorNode<T>& n) mutable {
                      if (a.requires_grad()) accumulate(a.grad(), n.grad);
                    });
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  check_arg(a.ndim() == 2, "transpose2d: input must be 2-D");
  int rows = a.dim(0), cols = a.dim(1);
  std::vector<T> out(a.data().size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[size_t(c) * rows + r] = a.data()[size_t(r) * cols + c];
  return make_op<T>({cols, rows}, std::move(out), {a},
                    [a, rows, cols](TensorNode<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      auto& g = a.grad();
                      for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < cols; ++c)
                          g[size_t(r) * cols + c] += n.grad[size_t(c) * rows + r];
                    });
}

// Concatenation along axis 0 for tensors shaped [C,...] with equal trailing dims.
template <typename T>
Tensor<T> concat_axis0(const Tensor<T>& a, const Tensor<T>& b) {
  check_arg(a.ndim() == b.ndim(), "concat_axis0: rank mismatch");
  for (int i = 1; i < a.ndim(); ++i)
    check_arg(a.dim(i) == b.dim(i), "concat_axis0: trailing dims differ");
  std::vector<int> shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<T> out;
  out.reserve(a.data().size() + b.data().size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  size_t na = a.data().size();
  return make_op<T>(std::move(shape), std::move(out), {a, b},
                    [a, b, na](TensorNode<T>& n) mutable {
                      if (a.requires_grad())
                        for (size_t i = 0; i < na; ++i) a.grad()[i] += n.grad[i];
                      if (b.requires_grad()) {
                        auto& g = b.grad();
                        for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[na + i];
                      }
                    });
}

// Column slice [c0,c1) of a 2-D tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, int c0, int c1) {
  check_arg(a.ndim() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.dim(1),
            "slice_cols: bad range");
  int rows = a.dim(0), cols = a.dim(1), w = c1 - c0;
  std::vector<T> out(size_t(rows) * w);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < w; ++c)
      out[size_t(r) * w + c] = a.data()[size_t(r) * cols + c0 + c];
  return make_op<T>({rows, w}, std::move(out), {a},
                    [a, rows, cols, w, c0](TensorNode<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      auto& g = a.grad();
                      for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < w; ++c)
                          g[size_t(r) * cols + c0 + c] += n.grad[size_t(r) * w + c];
                    });
}

// Gathers arbitrary flat indices into a new tensor of the given shape.
template <typename T>
Tensor<T> gather(const Tensor<T>& a, std::vector<int64_t> indices,
                 std::vector<int> out_shape) {
  check_arg(numel_of(out_shape) == int64_t(indices.size()),
            "gather: index count does not match output shape");
  std::vector<T> out(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    check_arg(indices[i] >= 0 && indices[i] < a.numel(), "gather: index out of range");
    out[i] = a.data()[size_t(indices[i])];
  }
  auto idx = std::make_shared<std::vector<int64_t>>(std::move(indices));
  return make_op<T>(std::move(out_shape), std::move(out), {a},
                    [a, idx](TensorNode<T>& n) mutable {
                      if (!a.requires_grad()) return;
                      auto& g = a.grad();
                      for (size_t i = 0; i < idx->size(); ++i)
                        g[size_t((*idx)[i])] += n.grad[i];
                    });
}

template <typename T>
Tensor<T> pick(const Tensor<T>& a, int64_t flat_index) {
  return gather(a, std::vector<int64_t>{flat_index}, {1});
}

// Assembles column vectors (each [n] or [1,n] or [n,1]) into an [n,L] matrix.
template <typename T>
Tensor<T> assemble_cols(const std::vector<Tensor<T>>& cols) {
  check_arg(!cols.empty(), "assemble_cols: empty input");
  int n = int(cols[0].numel());
  int L = int(cols.size());
  std::vector<T> out(size_t(n) * L);
  for (int t = 0; t < L; ++t) {
    check_arg(int(cols[size_t(t)].numel()) == n, "assemble_cols: ragged columns");
    for (int r = 0; r < n; ++r) out[size_t(r) * L + t] = cols[size_t(t)].data()[size_t(r)];
  }
  std::vector<Tensor<T>> parents(cols.begin(), cols.end());
  return make_op<T>({n, L}, std::move(out), std::move(parents),
                    [cols, n, L](TensorNode<T>& node) mutable {
                      for (int t = 0; t < L; ++t) {
                        auto& c = cols[size_t(t)];
                        if (!c.requires_grad()) continue;
                        auto& g = c.grad();
                        for (int r = 0; r < n; ++r) g[size_t(r)] += node.grad[size_t(r) * L + t];
                      }
                    });
}

// ---------------------------------------------------------------------------
// Linear layers and convolution
// ---------------------------------------------------------------------------

// y = x * w^T + b, x:[N,Din], w:[Dout,Din], b:[Dout] (optional).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_arg(x.ndim() == 2 && w.ndim() == 2, "linear: x and w must be 2-D");
  check_arg(x.dim(1) == w.dim(1), "linear: inner dimensions disagree, x " +
                                      shape_str(x.shape()) + " vs w " +
                                      shape_str(w.shape()));
  int N = x.dim(0), Din = x.dim(1), Dout = w.dim(0);
  if (b.defined())
    check_arg(b.numel() == Dout, "linear: bias length mismatch");
  std::vector<T> out(size_t(N) * Dout);
  gemm<T>(false, true, N, Dout, Din, T(1), x.data().data(), w.data().data(), T(0),
          out.data());
  if (b.defined())
    for (int r = 0; r < N; ++r)
      for (int c = 0; c < Dout; ++c) out[size_t(r) * Dout + c] += b.data()[size_t(c)];
  std::vector<Tensor<T>> parents = b.defined() ? std::vector<Tensor<T>>{x, w, b}
                                               : std::vector<Tensor<T>>{x, w};
  return make_op<T>({N, Dout}, std::move(out), std::move(parents),
                    [x, w, b, N, Din, Dout](TensorNode<T>& n) mutable {
                      const T* dy = n.grad.data();
                      if (x.requires_grad())
                        gemm<T>(false, false, N, Din, Dout, T(1), dy,
                                w.data().data(), T(1), x.grad().data());
                      if (w.requires_grad())
                        gemm<T>(true, false, Dout, Din, N, T(1), dy,
                                x.data().data(), T(1), w.grad().data());
                      if (b.defined() && b.requires_grad()) {
                        auto& g = b.grad();
                        for (int r = 0; r < N; ++r)
                          for (int c = 0; c < Dout; ++c) g[size_t(c)] += dy[size_t(r) * Dout + c];
                      }
                    });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, Tensor<T>{});
}

namespace detail {

// Unfolds [C,H,W] into the [C*kh*kw, Ho*Wo] patch matrix.
template <typename T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int ph, int pw,
            int sh, int sw, int Ho, int Wo, T* col) {
  const int64_t plane = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        T* dst = col + (int64_t(c) * kh * kw + int64_t(i) * kw + j) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * sh - ph + i;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, T(0));
            dst += Wo;
            continue;
          }
          const T* src_row = x + (int64_t(c) * H + iy) * W;
          int ox = 0;
          int ix = -pw + j;
          for (; ox < Wo && ix < 0; ++ox, ix += sw) *dst++ = T(0);
          for (; ox < Wo && ix < W; ++ox, ix += sw) *dst++ = src_row[ix];
          for (; ox < Wo; ++ox) *dst++ = T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int kh, int kw, int ph,
                int pw, int sh, int sw, int Ho, int Wo, T* x) {
  const int64_t plane = int64_t(Ho) * Wo;
  for (int c = 0; c < C; ++c) {
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const T* src = col + (int64_t(c) * kh * kw + int64_t(i) * kw + j) * plane;
        for (int oy = 0; oy < Ho; ++oy) {
          int iy = oy * sh - ph + i;
          if (iy < 0 || iy >= H) {
            src += Wo;
            continue;
          }
          T* dst_row = x + (int64_t(c) * H + iy) * W;
          int ox = 0;
          int ix = -pw + j;
          for (; ox < Wo && ix < 0; ++ox, ix += sw) ++src;
          for (; ox < Wo && ix < W; ++ox, ix += sw) dst_row[ix] += *src++;
          src += Wo - ox;
        }
      }
    }
  }
}

}  // namespace detail

// 2-D cross-correlation. x:[Cin,H,W], w:[Cout,Cin,kh,kw], b:[Cout] (optional).
// The patch matrix is recomputed in the backward pass instead of cached, which
// keeps the live memory of a full training graph small.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 std::pair<int, int> pad, std::pair<int, int> stride) {
  check_arg(x.ndim() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  check_arg(w.ndim() == 4, "conv2d: weights must be [Cout,Cin,kh,kw]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Cout = w.dim(0), Cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  check_arg(Cin == C, "conv2d: weight input channels " + std::to_string(Cin) +
                          " do not match input channels " + std::to_string(C) +
                          " (input " + shape_str(x.shape()) + ", weights " +
                          shape_str(w.shape()) + ")");
  const int ph = pad.first, pw = pad.second, sh = stride.first, sw = stride.second;
  check_arg(sh >= 1 && sw >= 1, "conv2d: strides must be >= 1");
  check_arg(kh <= H + 2 * ph && kw <= W + 2 * pw, "conv2d: kernel exceeds padded input");
  const int Ho = (H + 2 * ph - kh) / sh + 1;
  const int Wo = (W + 2 * pw - kw) / sw + 1;
  const int K = C * kh * kw;
  const int64_t N = int64_t(Ho) * Wo;
  if (b.defined()) check_arg(b.numel() == Cout, "conv2d: bias length mismatch");

  std::vector<T> col(size_t(K) * N);
  detail::im2col(x.data().data(), C, H, W, kh, kw, ph, pw, sh, sw, Ho, Wo, col.data());
  std::vector<T> out(size_t(Cout) * N);
  gemm<T>(false, false, Cout, int(N), K, T(1), w.data().data(), col.data(), T(0),
          out.data());
  if (b.defined())
    for (int o = 0; o < Cout; ++o) {
      T bias = b.data()[size_t(o)];
      T* row = out.data() + int64_t(o) * N;
      for (int64_t i = 0; i < N; ++i) row[i] += bias;
    }

  std::vector<Tensor<T>> parents = b.defined() ? std::vector<Tensor<T>>{x, w, b}
                                               : std::vector<Tensor<T>>{x, w};
  auto geom = std::make_tuple(C, H, W, kh, kw, ph, pw, sh, sw, Ho, Wo, K, Cout);
  return make_op<T>({Cout, Ho, Wo}, std::move(out), std::move(parents),
                    [x, w, b, geom](TensorNode<T>& n) mutable {
                      auto [C, H, W, kh, kw, ph, pw, sh, sw, Ho, Wo, K, Cout] = geom;
                      const int64_t N = int64_t(Ho) * Wo;
                      const T* dy = n.grad.data();
                      if (w.requires_grad()) {
                        std::vector<T> col(size_t(K) * N);
                        detail::im2col(x.data().data(), C, H, W, kh, kw, ph, pw,
                                       sh, sw, Ho, Wo, col.data());
                        gemm<T>(false, true, Cout, K, int(N), T(1), dy, col.data(),
                                T(1), w.grad().data());
                      }
                      if (x.requires_grad()) {
                        std::vector<T> dcol(size_t(K) * N);
                        gemm<T>(true, false, K, int(N), Cout, T(1),
                                w.data().data(), dy, T(0), dcol.data());
                        detail::col2im_add(dcol.data(), C, H, W, kh, kw, ph, pw,
                                           sh, sw, Ho, Wo, x.grad().data());
                      }
                      if (b.defined() && b.requires_grad()) {
                        auto& g = b.grad();
                        for (int o = 0; o < Cout; ++o) {
                          T acc = T(0);
                          const T* row = dy + int64_t(o) * N;
                          for (int64_t i = 0; i < N; ++i) acc += row[i];
                          g[size_t(o)] += acc;
                        }
                      }
                    });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return conv2d(x, w, b, {0, 0}, {1, 1});
}

// Max pooling over [C,H,W]. Gradient routes to the argmax cell; on ties the
// first element in row-major window order wins.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::pair<int, int> window,
                    std::pair<int, int> stride) {
  check_arg(x.ndim() == 3, "maxpool2d: input must be [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int kh = window.first, kw = window.second;
  const int sh = stride.first, sw = stride.second;
  check_arg(kh >= 1 && kw >= 1 && sh >= 1 && sw >= 1, "maxpool2d: bad window/stride");
  check_arg(kh <= H && kw <= W, "maxpool2d: window larger than input");
  const int Ho = (H - kh) / sh + 1;
  const int Wo = (W - kw) / sw + 1;
  std::vector<T> out(size_t(C) * Ho * Wo);
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  for (int c = 0; c < C; ++c) {
    const T* plane = x.data().data() + int64_t(c) * H * W;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        int64_t best_idx = -1;
        T best = T(0);
        for (int i = 0; i < kh; ++i) {
          const T* row = plane + int64_t(oy * sh + i) * W + ox * sw;
          for (int j = 0; j < kw; ++j) {
            if (best_idx < 0 || row[j] > best) {
              best = row[j];
              best_idx = int64_t(c) * H * W + int64_t(oy * sh + i) * W + ox * sw + j;
            }
          }
        }
        size_t o = size_t(c) * Ho * Wo + size_t(oy) * Wo + ox;
        out[o] = best;
        (*argmax)[o] = best_idx;
      }
    }
  }
  return make_op<T>({C, Ho, Wo}, std::move(out), {x},
                    [x, argmax](TensorNode<T>& n) mutable {
                      if (!x.requires_grad()) return;
                      auto& g = x.grad();
                      for (size_t o = 0; o < argmax->size(); ++o)
                        g[size_t((*argmax)[o])] += n.grad[o];
                    });
}

// ---------------------------------------------------------------------------
// Dropout and losses
// ---------------------------------------------------------------------------

// Inverted dropout: training keeps each element with probability 1-rate and
// scales survivors by 1/(1-rate); eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, uint64_t seed) {
  check_arg(rate >= 0.0 && rate < 1.0, "dropout: rate must lie in [0,1)");
  if (!training || rate == 0.0) {
    std::vector<T> out(x.data());
    return make_op<T>(x.shape(), std::move(out), {x}, [x](TensorNode<T>& n) mutable {
      if (x.requires_grad()) accumulate(x.grad(), n.grad);
    });
  }
  Rng rng(seed);
  const T keep_scale = T(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.data().size());
  std::vector<T> out(x.data().size());
  for (size_t i = 0; i < out.size(); ++i) {
    T m = rng.uniform() < rate ? T(0) : keep_scale;
    (*mask)[i] = m;
    out[i] = x.data()[i] * m;
  }
  return make_op<T>(x.shape(), std::move(out), {x}, [x, mask](TensorNode<T>& n) mutable {
    if (!x.requires_grad()) return;
    auto& g = x.grad();
    for (size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (*mask)[i];
  });
}

// Sum of the Huber-style smooth L1 over all elements; d = pred - target.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target) {
  check_arg(pred.shape() == target.shape(), "smooth_l1: shape mismatch " +
                                                shape_str(pred.shape()) + " vs " +
                                                shape_str(target.shape()));
  T acc = T(0);
  for (size_t i = 0; i < pred.data().size(); ++i) {
    T d = pred.data()[i] - target.data()[i];
    T a = std::abs(d);
    acc += a < T(1) ? T(0.5) * d * d : a - T(0.5);
  }
  return make_op<T>({1}, {acc}, {pred, target}, [pred, target](TensorNode<T>& n) mutable {
    T g0 = n.grad[0];
    for (size_t i = 0; i < pred.data().size(); ++i) {
      T d = pred.data()[i] - target.data()[i];
      T dd = std::abs(d) < T(1) ? d : (d > T(0) ? T(1) : T(-1));
      if (pred.requires_grad()) pred.grad()[i] += g0 * dd;
      if (target.requires_grad()) target.grad()[i] -= g0 * dd;
    }
  });
}

// Mean of -log p[i, label_i] over rows of a [N,2] probability matrix, with the
// picked probability floored at 1e-12.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels) {
  check_arg(probs.ndim() == 2 && probs.dim(1) == 2,
            "binary_cross_entropy: probs must be [N,2]");
  check_arg(int(labels.size()) == probs.dim(0),
            "binary_cross_entropy: label count mismatch");
  const T floor_value = T(1e-12);
  const int N = probs.dim(0);
  T acc = T(0);
  for (int i = 0; i < N; ++i) {
    check_arg(labels[size_t(i)] == 0 || labels[size_t(i)] == 1,
              "binary_cross_entropy: label outside {0,1}");
    T p = probs.data()[size_t(i) * 2 + labels[size_t(i)]];
    acc -= std::log(p < floor_value ? floor_value : p);
  }
  acc /= T(N);
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return make_op<T>({1}, {acc}, {probs},
                    [probs, labels_copy, N, floor_value](TensorNode<T>& n) mutable {
                      if (!probs.requires_grad()) return;
                      auto& g = probs.grad();
                      for (int i = 0; i < N; ++i) {
                        size_t at = size_t(i) * 2 + (*labels_copy)[size_t(i)];
                        T p = probs.data()[at];
                        if (p >= floor_value) g[at] -= n.grad[0] / (p * T(N));
                      }
                    });
}

}  // namespace lpnet
