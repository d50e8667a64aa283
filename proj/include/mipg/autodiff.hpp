#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mipg/errors.hpp"
#include "mipg/tensor.hpp"

namespace mipg {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  /// Adjoint after Tape::backward(); empty for values that do not depend on a leaf.
  std::span<const double> grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/**
 * Reverse-mode recording of one forward pass. Nodes are appended in
 * execution order and backward() replays their adjoint rules in exact
 * reverse order. A tape belongs to a single thread.
 */
class Tape {
 public:
  using Adjoint = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Owned value that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// References `value` without copying; never receives a gradient. `value` must outlive the tape.
  Var input(const Tensor& value) {
    Node n;
    n.ref = &value;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// References `value` and tracks its adjoint, readable via grad() after backward().
  Var leaf(const Tensor& value) {
    Node n;
    n.ref = &value;
    n.tracked = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  /// Like leaf(), and backward() also adds the adjoint into value.grad() when requires_grad is set.
  Var variable(Tensor& value) {
    Var v = leaf(value);
    if (value.requires_grad()) nodes_.back().sink = &value;
    return v;
  }

  /// Records an op result. `rule` runs during backward only when `tracked`.
  Var push(Tensor value, bool tracked, Adjoint rule) {
    if (!value.all_finite()) throw NumericalError("non-finite value produced on tape");
    Node n;
    n.owned = std::move(value);
    n.tracked = tracked;
    if (tracked) n.rule = std::move(rule);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].ref ? *nodes_[id].ref : nodes_[id].owned; }
  bool tracked(std::size_t id) const { return nodes_[id].tracked; }
  std::vector<double>& adj(std::size_t id) { return nodes_[id].adj; }
  std::span<const double> grad(std::size_t id) const { return nodes_[id].adj; }
  std::size_t size() const { return nodes_.size(); }

  /// Replays adjoints from a scalar loss. Adjoints are recomputed from
  /// scratch on every call; sink gradients accumulate until the caller zeros them.
  void backward(Var loss) {
    if (&loss.tape() != this) throw ContractError("backward: loss recorded on a different tape");
    if (value(loss.id()).numel() != 1)
      throw ContractError("backward: loss must be scalar, got shape " + shape_string(value(loss.id()).shape()));
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& n = nodes_[i];
      if (n.tracked && i <= loss.id())
        n.adj.assign(value(i).numel(), 0.0);
      else
        n.adj.clear();
    }
    if (!nodes_[loss.id()].tracked) return;
    nodes_[loss.id()].adj[0] = 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.rule) n.rule(*this, i);
    }
    for (std::size_t i = 0; i <= loss.id(); ++i) {
      auto& n = nodes_[i];
      if (!n.sink) continue;
      auto g = n.sink->grad();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.adj[k];
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ref = nullptr;
    Tensor* sink = nullptr;
    bool tracked = false;
    Adjoint rule;
    std::vector<double> adj;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline std::span<const double> Var::grad() const { return tape_->grad(id_); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands on different tapes");
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  require_same_tape(a, b, op);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

inline void require_rank(const Var& a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
}

inline bool any_tracked(std::initializer_list<Var> vs) {
  for (const auto& v : vs)
    if (v.tape().tracked(v.id())) return true;
  return false;
}

template <class Fwd, class Bwd>
Var unary(Var a, Fwd fwd, Bwd dydx) {
  Tensor out(a.shape());
  const auto x = a.value().values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), any_tracked({a}), [ia, dydx](Tape& t, std::size_t self) {
    if (!t.tracked(ia)) return;
    const auto& go = t.adj(self);
    const auto xv = t.value(ia).values();
    const auto yv = t.value(self).values();
    auto& ga = t.adj(ia);
    for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * dydx(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---- elementwise ----------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto x = a.value().values(), y = b.value().values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    for (std::size_t id : {ia, ib}) {
      if (!t.tracked(id)) continue;
      auto& g = t.adj(id);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const auto x = a.value().values(), y = b.value().values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    if (t.tracked(ia)) {
      auto& g = t.adj(ia);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (t.tracked(ib)) {
      auto& g = t.adj(ib);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] -= go[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const auto x = a.value().values(), y = b.value().values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, b}), [ia, ib](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    const auto xv = t.value(ia).values(), yv = t.value(ib).values();
    if (t.tracked(ia)) {
      auto& g = t.adj(ia);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * yv[i];
    }
    if (t.tracked(ib)) {
      auto& g = t.adj(ib);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i] * xv[i];
    }
  });
}

/// alpha * a + beta
inline Var affine(Var a, double alpha, double beta) {
  return detail::unary(
      a, [alpha, beta](double x) { return alpha * x + beta; }, [alpha](double, double) { return alpha; });
}

inline Var scale(Var a, double alpha) { return affine(a, alpha, 0.0); }

inline Var tanh(Var a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var log(Var a) {
  for (double v : a.value().values())
    if (!(v > 0.0)) throw DomainError("log: argument must be positive");
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---- reductions and selection ----------------------------------------------

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().push(Tensor({1}, std::vector<double>{s}), detail::any_tracked({a}),
                       [ia](Tape& t, std::size_t self) {
                         const double go = t.adj(self)[0];
                         for (double& g : t.adj(ia)) g += go;
                       });
}

/// Scalar element `index` of a (flat indexing).
inline Var pick(Var a, std::size_t index) {
  if (index >= a.numel())
    throw DimensionError("pick: index " + std::to_string(index) + " outside " + shape_string(a.shape()));
  const std::size_t ia = a.id();
  return a.tape().push(Tensor({1}, std::vector<double>{a.value()[index]}), detail::any_tracked({a}),
                       [ia, index](Tape& t, std::size_t self) { t.adj(ia)[index] += t.adj(self)[0]; });
}

/// Contiguous range [offset, offset + length) of a vector.
inline Var slice(Var a, std::size_t offset, std::size_t length) {
  detail::require_rank(a, 1, "slice");
  if (length == 0 || offset + length > a.numel())
    throw DimensionError("slice: range [" + std::to_string(offset) + ", " + std::to_string(offset + length) +
                         ") outside " + shape_string(a.shape()));
  const auto x = a.value().values().subspan(offset, length);
  const std::size_t ia = a.id();
  return a.tape().push(Tensor({length}, std::vector<double>(x.begin(), x.end())), detail::any_tracked({a}),
                       [ia, offset](Tape& t, std::size_t self) {
                         const auto& go = t.adj(self);
                         auto& g = t.adj(ia);
                         for (std::size_t i = 0; i < go.size(); ++i) g[offset + i] += go[i];
                       });
}

/// Row r of a matrix as a vector (embedding lookup).
inline Var row(Var m, std::size_t r) {
  detail::require_rank(m, 2, "row");
  const Tensor& mv = m.value();
  if (r >= mv.rows())
    throw DimensionError("row: index " + std::to_string(r) + " outside " + shape_string(mv.shape()));
  const auto x = mv.row(r);
  const std::size_t im = m.id(), c = mv.cols();
  return m.tape().push(Tensor({c}, std::vector<double>(x.begin(), x.end())), detail::any_tracked({m}),
                       [im, r, c](Tape& t, std::size_t self) {
                         const auto& go = t.adj(self);
                         auto& g = t.adj(im);
                         for (std::size_t i = 0; i < c; ++i) g[r * c + i] += go[i];
                       });
}

/// Column-wise mean of a matrix's rows.
inline Var mean_rows(Var m) {
  detail::require_rank(m, 2, "mean_rows");
  const Tensor& mv = m.value();
  const std::size_t r = mv.rows(), c = mv.cols();
  Tensor out({c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += mv.at(i, j);
  for (std::size_t j = 0; j < c; ++j) out[j] /= static_cast<double>(r);
  const std::size_t im = m.id();
  return m.tape().push(std::move(out), detail::any_tracked({m}), [im, r, c](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    auto& g = t.adj(im);
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += go[j] * inv;
  });
}

// ---- softmax ----------------------------------------------------------------

namespace detail {

/// Softmax over `support` positions of x; zero elsewhere. Max-subtracted.
inline Var softmax_over(Var a, std::vector<std::size_t> support) {
  const auto x = a.value().values();
  Tensor out(a.shape());
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i : support) hi = std::max(hi, x[i]);
  double z = 0.0;
  for (std::size_t i : support) z += (out[i] = std::exp(x[i] - hi));
  for (std::size_t i : support) out[i] /= z;
  const std::size_t ia = a.id();
  return a.tape().push(std::move(out), any_tracked({a}), [ia, support = std::move(support)](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    const auto y = t.value(self).values();
    double dot = 0.0;
    for (std::size_t i : support) dot += go[i] * y[i];
    auto& g = t.adj(ia);
    for (std::size_t i : support) g[i] += y[i] * (go[i] - dot);
  });
}

}  // namespace detail

inline Var softmax(Var logits) {
  detail::require_rank(logits, 1, "softmax");
  std::vector<std::size_t> all(logits.numel());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return detail::softmax_over(logits, std::move(all));
}

/// Softmax restricted to `support` (distinct indices); exactly 0 outside it.
inline Var masked_softmax(Var logits, std::vector<std::size_t> support) {
  detail::require_rank(logits, 1, "masked_softmax");
  if (support.empty()) throw DomainError("masked_softmax: empty support");
  for (std::size_t i : support)
    if (i >= logits.numel()) throw DimensionError("masked_softmax: support index outside logits");
  return detail::softmax_over(logits, std::move(support));
}

// ---- structure ----------------------------------------------------------------

/**
 * Juxtaposition along axis 0. Vectors concatenate end to end; matrices stack
 * their rows and must agree on the column count.
 */
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw DomainError("concat: no parts");
  const Var& first = parts.front();
  const std::size_t rank = first.value().rank();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    detail::require_same_tape(first, p, "concat");
    if (p.value().rank() != rank || (rank == 2 && p.value().cols() != first.value().cols()))
      throw DimensionError("concat: incompatible parts " + shape_string(first.shape()) + " and " +
                           shape_string(p.shape()));
    rows += p.shape()[0];
  }
  if (rank != 1 && rank != 2) throw DimensionError("concat: unsupported rank");
  Shape shape = first.shape();
  shape[0] = rows;
  std::vector<double> data;
  data.reserve(shape_numel(shape));
  bool tracked = false;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // (id, numel)
  for (const auto& p : parts) {
    const auto v = p.value().values();
    data.insert(data.end(), v.begin(), v.end());
    tracked = tracked || p.tape().tracked(p.id());
    spans.emplace_back(p.id(), v.size());
  }
  return first.tape().push(Tensor(std::move(shape), std::move(data)), tracked,
                           [spans = std::move(spans)](Tape& t, std::size_t self) {
                             const auto& go = t.adj(self);
                             std::size_t off = 0;
                             for (auto [id, n] : spans) {
                               if (t.tracked(id)) {
                                 auto& g = t.adj(id);
                                 for (std::size_t i = 0; i < n; ++i) g[i] += go[off + i];
                               }
                               off += n;
                             }
                           });
}

/// Equal-length vectors as the rows of a matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw DomainError("stack_rows: no rows");
  for (const auto& r : rows) detail::require_rank(r, 1, "stack_rows");
  std::vector<double> data;
  const std::size_t c = rows.front().numel();
  bool tracked = false;
  std::vector<std::size_t> ids;
  for (const auto& r : rows) {
    detail::require_same_shape(rows.front(), r, "stack_rows");
    const auto v = r.value().values();
    data.insert(data.end(), v.begin(), v.end());
    tracked = tracked || r.tape().tracked(r.id());
    ids.push_back(r.id());
  }
  return rows.front().tape().push(Tensor({rows.size(), c}, std::move(data)), tracked,
                                  [ids = std::move(ids), c](Tape& t, std::size_t self) {
                                    const auto& go = t.adj(self);
                                    for (std::size_t k = 0; k < ids.size(); ++k) {
                                      if (!t.tracked(ids[k])) continue;
                                      auto& g = t.adj(ids[k]);
                                      for (std::size_t i = 0; i < c; ++i) g[i] += go[k * c + i];
                                    }
                                  });
}

// ---- linear algebra -----------------------------------------------------------

/// a[m×k] · b[k×n]
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul");
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows())
    throw DimensionError("matmul: inner extents differ " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A.at(i, p);
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) += aip * B.at(p, j);
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, b}), [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (t.tracked(ia)) {
      auto& g = t.adj(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * B.at(p, j);
          g[i * k + p] += s;
        }
    }
    if (t.tracked(ib)) {
      auto& g = t.adj(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A.at(i, p);
          for (std::size_t j = 0; j < n; ++j) g[p * n + j] += aip * go[i * n + j];
        }
    }
  });
}

/// a[m×k] · b[n×k]ᵀ, used to project every key row at once.
inline Var matmul_t(Var a, Var b) {
  detail::require_same_tape(a, b, "matmul_t");
  detail::require_rank(a, 2, "matmul_t");
  detail::require_rank(b, 2, "matmul_t");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.cols())
    throw DimensionError("matmul_t: inner extents differ " + shape_string(A.shape()) + " vs " +
                         shape_string(B.shape()) + "ᵀ");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      const auto ar = A.row(i), br = B.row(j);
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out.at(i, j) = s;
    }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, b}), [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const bool ta = t.tracked(ia), tb = t.tracked(ib);
    std::vector<double>* ga = ta ? &t.adj(ia) : nullptr;
    std::vector<double>* gb = tb ? &t.adj(ib) : nullptr;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = go[i * n + j];
        if (gij == 0.0) continue;
        if (ga)
          for (std::size_t p = 0; p < k; ++p) (*ga)[i * k + p] += gij * B.at(j, p);
        if (gb)
          for (std::size_t p = 0; p < k; ++p) (*gb)[j * k + p] += gij * A.at(i, p);
      }
  });
}

/// A[m×k] · x[k]
inline Var matvec(Var a, Var x) {
  detail::require_same_tape(a, x, "matvec");
  detail::require_rank(a, 2, "matvec");
  detail::require_rank(x, 1, "matvec");
  const Tensor& A = a.value();
  const Tensor& X = x.value();
  if (A.cols() != X.numel())
    throw DimensionError("matvec: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(X.shape()));
  const std::size_t m = A.rows(), k = A.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const auto r = A.row(i);
    for (std::size_t p = 0; p < k; ++p) s += r[p] * X[p];
    out[i] = s;
  }
  const std::size_t ia = a.id(), ix = x.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, x}), [ia, ix, m, k](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    const Tensor& A = t.value(ia);
    const Tensor& X = t.value(ix);
    if (t.tracked(ia)) {
      auto& g = t.adj(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = go[i];
        if (gi == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) g[i * k + p] += gi * X[p];
      }
    }
    if (t.tracked(ix)) {
      auto& g = t.adj(ix);
      for (std::size_t i = 0; i < m; ++i) {
        const double gi = go[i];
        const auto r = A.row(i);
        for (std::size_t p = 0; p < k; ++p) g[p] += gi * r[p];
      }
    }
  });
}

/// A[m×n]ᵀ · x[m]; a weighted sum of A's rows.
inline Var tmatvec(Var a, Var x) {
  detail::require_same_tape(a, x, "tmatvec");
  detail::require_rank(a, 2, "tmatvec");
  detail::require_rank(x, 1, "tmatvec");
  const Tensor& A = a.value();
  const Tensor& X = x.value();
  if (A.rows() != X.numel())
    throw DimensionError("tmatvec: shape mismatch " + shape_string(A.shape()) + "ᵀ vs " + shape_string(X.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = X[i];
    const auto r = A.row(i);
    for (std::size_t j = 0; j < n; ++j) out[j] += xi * r[j];
  }
  const std::size_t ia = a.id(), ix = x.id();
  return a.tape().push(std::move(out), detail::any_tracked({a, x}), [ia, ix, m, n](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    const Tensor& A = t.value(ia);
    const Tensor& X = t.value(ix);
    if (t.tracked(ia)) {
      auto& g = t.adj(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += X[i] * go[j];
    }
    if (t.tracked(ix)) {
      auto& g = t.adj(ix);
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        const auto r = A.row(i);
        for (std::size_t j = 0; j < n; ++j) s += r[j] * go[j];
        g[i] += s;
      }
    }
  });
}

/// M[n×d] + v[d] added to every row.
inline Var add_rowwise(Var m, Var v) {
  detail::require_same_tape(m, v, "add_rowwise");
  detail::require_rank(m, 2, "add_rowwise");
  detail::require_rank(v, 1, "add_rowwise");
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.cols() != V.numel())
    throw DimensionError("add_rowwise: shape mismatch " + shape_string(M.shape()) + " vs " + shape_string(V.shape()));
  const std::size_t r = M.rows(), c = M.cols();
  Tensor out(M.shape());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) = M.at(i, j) + V[j];
  const std::size_t im = m.id(), iv = v.id();
  return m.tape().push(std::move(out), detail::any_tracked({m, v}), [im, iv, r, c](Tape& t, std::size_t self) {
    const auto& go = t.adj(self);
    if (t.tracked(im)) {
      auto& g = t.adj(im);
      for (std::size_t i = 0; i < go.size(); ++i) g[i] += go[i];
    }
    if (t.tracked(iv)) {
      auto& g = t.adj(iv);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += go[i * c + j];
    }
  });
}

}  // namespace mipg
