#pragma once

// Reverse-mode differentiation over dense rank-1/rank-2 tensors.
//
// A Tape records operations in topological order as they are evaluated.
// backward() zeroes every gradient and then accumulates from the root, so it
// can be called repeatedly on the same recording.

#include <cblas.h>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "transgrec/error.hpp"
#include "transgrec/tensor.hpp"

namespace transgrec::nk {

enum class Activation { relu, identity, sigmoid };
enum class Pooling { mean, max };

using Adjacency = std::vector<std::vector<std::uint32_t>>;

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Tensor<T>& grad() const { return tape->grad(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  // Called with the node's output gradient; adds into input gradients.
  using Backward = std::function<void(const Tensor<T>& out_grad, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return {this, nodes_.size() - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
    bool needs = false;
    for (const auto& in : inputs) {
      check_owner(in);
      needs = needs || nodes_[in.id].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : Backward{}, needs});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(Var<T> v) const {
    check_owner(v);
    return nodes_[v.id].value;
  }

  // Empty tensor for nodes that do not require gradients.
  const Tensor<T>& grad(Var<T> v) const {
    check_owner(v);
    return nodes_[v.id].grad;
  }

  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  // Accumulation target for an input, or nullptr when it needs no gradient.
  Tensor<T>* grad_sink(Var<T> v) {
    Node& n = nodes_[v.id];
    return n.requires_grad ? &n.grad : nullptr;
  }

  void backward(Var<T> root) {
    check_owner(root);
    if (nodes_[root.id].value.size() != 1) {
      throw ShapeError("backward root must be a scalar, got " +
                       shape_str(nodes_[root.id].value.shape()));
    }
    for (std::size_t i = 0; i <= root.id; ++i) {
      Node& n = nodes_[i];
      if (n.requires_grad) {
        n.grad = Tensor<T>(n.value.shape());
      }
    }
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.requires_grad && n.backward) n.backward(n.grad, *this);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

  // Branch decisions of non-smooth ops (relu sign, max argmax, clamp region).
  // Finite-difference checks compare these to detect kink crossings.
  // Off by default; training tapes skip the bookkeeping.
  void set_tracing(bool on) noexcept { tracing_ = on; }
  bool tracing() const noexcept { return tracing_; }
  void note_branch(std::uint32_t b) {
    if (tracing_) trace_.push_back(b);
  }
  std::vector<std::uint32_t>& branch_trace() noexcept { return trace_; }
  const std::vector<std::uint32_t>& branch_trace() const noexcept { return trace_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
  };

  void check_owner(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) {
      throw std::logic_error("variable does not belong to this tape");
    }
  }

  std::deque<Node> nodes_;
  std::vector<std::uint32_t> trace_;
  bool tracing_ = false;
};

namespace detail {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

template <typename T>
void require_rank(const Tensor<T>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>* sink, const Tensor<T>& g) {
  if (!sink) return;
  auto dst = sink->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Dense kernels accumulate into C. float and double go through BLAS.
template <typename T>
void gemm(bool trans_a, bool trans_b, const T* a, const T* b, T* c, std::size_t m, std::size_t k,
          std::size_t n) {
  const auto M = static_cast<blasint>(m), N = static_cast<blasint>(n), K = static_cast<blasint>(k);
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  const blasint lda = trans_a ? M : K;
  const blasint ldb = trans_b ? K : N;
  if (m == 0 || n == 0 || k == 0) return;
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, M, N, K, 1.0f, a, lda, b, ldb, 1.0f, c, N);
  } else {
    static_assert(std::is_same_v<T, double>, "dense kernels support float and double");
    cblas_dgemm(CblasRowMajor, ta, tb, M, N, K, 1.0, a, lda, b, ldb, 1.0, c, N);
  }
}

// C (m x n) += A (m x k) * B (k x n)
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm(false, false, a, b, c, m, k, n);
}

// C (m x n) += A (m x k) * B^T, B is (n x k)
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm(false, true, a, b, c, m, k, n);
}

// C (k x n) += A^T * B, A is (m x k), B is (m x n)
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  gemm(true, false, a, b, c, k, m, n);
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> scalar(T v) {
  return Tensor<T>({1}, std::vector<T>{v});
}

}  // namespace detail

/// A (m x k) times B (k x n), or A (m x k) times vector b (k) giving a vector (m).
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_rank(av, 2, "matmul");
  const std::size_t m = av.rows(), k = av.cols();
  if (bv.rows() != k) {
    throw ShapeError("matmul: inner extents differ " + shape_str(av.shape()) + " * " +
                     shape_str(bv.shape()));
  }
  const std::size_t n = bv.cols();
  Tensor<T> out(bv.rank() == 1 ? Shape{m} : Shape{m, n});
  detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      // dA = G * B^T
      detail::gemm_nt(g.data().data(), t.value(b).data().data(), ga->data().data(), m, n, k);
    }
    if (Tensor<T>* gb = t.grad_sink(b)) {
      // dB = A^T * G
      detail::gemm_tn(t.value(a).data().data(), g.data().data(), gb->data().data(), m, k, n);
    }
  });
}

/// Rows of A (n x k) mapped through W (m x k): returns A * W^T (n x m).
/// Equivalent to applying W to every row vector of A.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> w) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& wv = w.value();
  detail::require_rank(av, 2, "matmul_nt");
  detail::require_rank(wv, 2, "matmul_nt");
  const std::size_t n = av.rows(), k = av.cols(), m = wv.rows();
  if (wv.cols() != k) {
    throw ShapeError("matmul_nt: inner extents differ " + shape_str(av.shape()) + " * " +
                     shape_str(wv.shape()) + "^T");
  }
  Tensor<T> out({n, m});
  detail::gemm_nt(av.data().data(), wv.data().data(), out.data().data(), n, k, m);
  return a.tape->record(std::move(out), {a, w}, [a, w, n, k, m](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      detail::gemm_nn(g.data().data(), t.value(w).data().data(), ga->data().data(), n, m, k);
    }
    if (Tensor<T>* gw = t.grad_sink(w)) {
      detail::gemm_tn(g.data().data(), t.value(a).data().data(), gw->data().data(), n, m, k);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_same_shape(av, bv, "add");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    detail::accumulate(t.grad_sink(a), g);
    detail::accumulate(t.grad_sink(b), g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_same_shape(av, bv, "sub");
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    detail::accumulate(t.grad_sink(a), g);
    if (Tensor<T>* gb = t.grad_sink(b)) {
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= c;
  return a.tape->record(std::move(out), {a}, [a, c](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += c * g[i];
    }
  });
}

template <typename T>
Var<T> add_scalar(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += c;
  return a.tape->record(std::move(out), {a}, [a](const Tensor<T>& g, Tape<T>& t) {
    detail::accumulate(t.grad_sink(a), g);
  });
}

template <typename T>
Var<T> relu(Var<T> a) {
  Tensor<T> out = a.value();
  Tape<T>& trace = *a.tape;
  for (auto& v : out.data()) {
    trace.note_branch(v > T(0));
    if (!(v > T(0))) v = T(0);
  }
  return a.tape->record(std::move(out), {a}, [a](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& x = t.value(a);
      for (std::size_t i = 0; i < ga->size(); ++i) {
        if (x[i] > T(0)) (*ga)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = detail::sigmoid_scalar(v);
  Tape<T>* tape = a.tape;
  std::size_t self = tape->size();
  return tape->record(std::move(out), {a}, [a, self](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& s = t.value(Var<T>{&t, self});
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i] * s[i] * (T(1) - s[i]);
    }
  });
}

/// Natural log; every input element must be strictly positive.
template <typename T>
Var<T> log(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) {
    if (!(v > T(0))) {
      throw DomainError("log of non-positive value " + std::to_string(static_cast<double>(v)));
    }
    v = std::log(v);
  }
  return a.tape->record(std::move(out), {a}, [a](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& x = t.value(a);
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[i] / x[i];
    }
  });
}

/// Elementwise clamp to [lo, hi]; gradient passes only inside the interval.
template <typename T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  Tensor<T> out = a.value();
  Tape<T>& trace = *a.tape;
  for (auto& v : out.data()) {
    const std::uint32_t region = v < lo ? 0u : (v > hi ? 2u : 1u);
    trace.note_branch(region);
    v = std::clamp(v, lo, hi);
  }
  return a.tape->record(std::move(out), {a}, [a, lo, hi](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& x = t.value(a);
      for (std::size_t i = 0; i < ga->size(); ++i) {
        if (x[i] >= lo && x[i] <= hi) (*ga)[i] += g[i];
      }
    }
  });
}

template <typename T>
Var<T> activate(Var<T> a, Activation act) {
  switch (act) {
    case Activation::relu:
      return relu(a);
    case Activation::sigmoid:
      return sigmoid(a);
    case Activation::identity:
      return a;
  }
  return a;
}

template <typename T>
Var<T> sum(Var<T> a) {
  T acc = T(0);
  for (T v : a.value().data()) acc += v;
  return a.tape->record(detail::scalar(acc), {a}, [a](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      for (auto& v : ga->data()) v += g[0];
    }
  });
}

template <typename T>
Var<T> inner_product(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_same_shape(av, bv, "inner_product");
  detail::require_rank(av, 1, "inner_product");
  T acc = T(0);
  for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  return a.tape->record(detail::scalar(acc), {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& y = t.value(b);
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0] * y[i];
    }
    if (Tensor<T>* gb = t.grad_sink(b)) {
      const Tensor<T>& x = t.value(a);
      for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += g[0] * x[i];
    }
  });
}

/// Per-row inner products of two n x d matrices; returns a vector of length n.
template <typename T>
Var<T> rowwise_dot(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  detail::require_same_shape(av, bv, "rowwise_dot");
  detail::require_rank(av, 2, "rowwise_dot");
  const std::size_t n = av.rows(), d = av.cols();
  Tensor<T> out({n});
  for (std::size_t r = 0; r < n; ++r) {
    T acc = T(0);
    for (std::size_t c = 0; c < d; ++c) acc += av(r, c) * bv(r, c);
    out[r] = acc;
  }
  return a.tape->record(std::move(out), {a, b}, [a, b, n, d](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& y = t.value(b);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*ga)(r, c) += g[r] * y(r, c);
    }
    if (Tensor<T>* gb = t.grad_sink(b)) {
      const Tensor<T>& x = t.value(a);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < d; ++c) (*gb)(r, c) += g[r] * x(r, c);
    }
  });
}

/// Squared Frobenius norm (sum of squares of all elements).
template <typename T>
Var<T> frobenius_sq(Var<T> a) {
  T acc = T(0);
  for (T v : a.value().data()) acc += v * v;
  return a.tape->record(detail::scalar(acc), {a}, [a](const Tensor<T>& g, Tape<T>& t) {
    if (Tensor<T>* ga = t.grad_sink(a)) {
      const Tensor<T>& x = t.value(a);
      for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += T(2) * g[0] * x[i];
    }
  });
}

/// Selected rows of A; indices may repeat.
template <typename T>
Var<T> gather_rows(Var<T> a, std::vector<std::uint32_t> indices) {
  const Tensor<T>& av = a.value();
  detail::require_rank(av, 2, "gather_rows");
  const std::size_t d = av.cols();
  Tensor<T> out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= av.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range " +
                       std::to_string(av.rows()));
    }
    auto src = av.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return a.tape->record(std::move(out), {a},
                        [a, idx = std::move(indices), d](const Tensor<T>& g, Tape<T>& t) {
                          if (Tensor<T>* ga = t.grad_sink(a)) {
                            for (std::size_t r = 0; r < idx.size(); ++r) {
                              auto dst = ga->row(idx[r]);
                              auto src = g.row(r);
                              for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                            }
                          }
                        });
}

/// Concatenate rank-2 tensors with equal row counts along columns.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t n = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_rank(p.value(), 2, "concat_cols");
    if (p.value().rows() != n) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor<T> out({n, total});
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = parts[k].value().row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + off);
      off += widths[k];
    }
  }
  return parts.front().tape->record(
      std::move(out), parts, [parts, widths, n](const Tensor<T>& g, Tape<T>& t) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (Tensor<T>* gp = t.grad_sink(parts[k])) {
            for (std::size_t r = 0; r < n; ++r) {
              auto src = g.row(r);
              auto dst = gp->row(r);
              for (std::size_t c = 0; c < widths[k]; ++c) dst[c] += src[off + c];
            }
          }
          off += widths[k];
        }
      });
}

/// Value copy that blocks gradient flow.
template <typename T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value());
}

namespace detail {

template <typename T>
Var<T> pool_vectors(const std::vector<Var<T>>& xs, Pooling mode) {
  if (xs.empty()) throw ShapeError("pool: empty input list");
  const std::size_t d = xs.front().value().size();
  for (const auto& x : xs) {
    require_rank(x.value(), 1, "pool");
    if (x.value().size() != d) throw ShapeError("pool: vectors differ in length");
  }
  Tensor<T> out({d});
  std::vector<std::uint32_t> arg(d, 0);
  if (mode == Pooling::mean) {
    for (const auto& x : xs)
      for (std::size_t c = 0; c < d; ++c) out[c] += x.value()[c];
    for (auto& v : out.data()) v /= static_cast<T>(xs.size());
  } else {
    Tape<T>& trace = *xs.front().tape;
    for (std::size_t c = 0; c < d; ++c) {
      std::uint32_t best = 0;
      for (std::uint32_t k = 1; k < xs.size(); ++k) {
        if (xs[k].value()[c] > xs[best].value()[c]) best = k;
      }
      arg[c] = best;
      out[c] = xs[best].value()[c];
      trace.note_branch(best);
    }
  }
  return xs.front().tape->record(
      std::move(out), xs, [xs, mode, arg, d](const Tensor<T>& g, Tape<T>& t) {
        if (mode == Pooling::mean) {
          const T w = T(1) / static_cast<T>(xs.size());
          for (const auto& x : xs) {
            if (Tensor<T>* gx = t.grad_sink(x))
              for (std::size_t c = 0; c < d; ++c) (*gx)[c] += w * g[c];
          }
        } else {
          for (std::size_t c = 0; c < d; ++c) {
            if (Tensor<T>* gx = t.grad_sink(xs[arg[c]])) (*gx)[c] += g[c];
          }
        }
      });
}

}  // namespace detail

template <typename T>
Var<T> mean_pool(const std::vector<Var<T>>& xs) {
  return detail::pool_vectors(xs, Pooling::mean);
}

/// Elementwise max; ties route the gradient to the lowest list position.
template <typename T>
Var<T> max_pool(const std::vector<Var<T>>& xs) {
  return detail::pool_vectors(xs, Pooling::max);
}

/// Row t of the result pools the rows of `src` listed in adjacency[t].
/// An empty neighbor list pools to the zero vector. `adjacency` must outlive
/// the tape's backward pass.
template <typename T>
Var<T> neighbor_pool(Var<T> src, const Adjacency& adjacency, Pooling mode) {
  const Tensor<T>& sv = src.value();
  detail::require_rank(sv, 2, "neighbor_pool");
  const std::size_t d = sv.cols();
  const std::size_t targets = adjacency.size();
  Tensor<T> out({targets, d});
  std::vector<std::uint32_t> arg;
  if (mode == Pooling::max) arg.assign(targets * d, 0);
  Tape<T>& trace = *src.tape;
  for (std::size_t t = 0; t < targets; ++t) {
    const auto& nb = adjacency[t];
    if (nb.empty()) continue;
    auto dst = out.row(t);
    for (auto j : nb) {
      if (j >= sv.rows()) throw ShapeError("neighbor_pool: neighbor index out of range");
    }
    if (mode == Pooling::mean) {
      for (auto j : nb) {
        auto s = sv.row(j);
        for (std::size_t c = 0; c < d; ++c) dst[c] += s[c];
      }
      const T inv = T(1) / static_cast<T>(nb.size());
      for (auto& v : dst) v *= inv;
    } else {
      for (std::size_t c = 0; c < d; ++c) {
        std::uint32_t best = nb[0];
        for (std::size_t k = 1; k < nb.size(); ++k) {
          if (sv(nb[k], c) > sv(best, c)) best = nb[k];
        }
        arg[t * d + c] = best;
        dst[c] = sv(best, c);
        trace.note_branch(best);
      }
    }
  }
  const Adjacency* adj = &adjacency;
  return src.tape->record(
      std::move(out), {src},
      [src, adj, mode, arg = std::move(arg), d](const Tensor<T>& g, Tape<T>& t) {
        Tensor<T>* gs = t.grad_sink(src);
        if (!gs) return;
        for (std::size_t r = 0; r < adj->size(); ++r) {
          const auto& nb = (*adj)[r];
          if (nb.empty()) continue;
          auto gr = g.row(r);
          if (mode == Pooling::mean) {
            const T inv = T(1) / static_cast<T>(nb.size());
            for (auto j : nb) {
              auto dst = gs->row(j);
              for (std::size_t c = 0; c < d; ++c) dst[c] += inv * gr[c];
            }
          } else {
            for (std::size_t c = 0; c < d; ++c) (*gs)(arg[r * d + c], c) += gr[c];
          }
        }
      });
}

}  // namespace transgrec::nk
