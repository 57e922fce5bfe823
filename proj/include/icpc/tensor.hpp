#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "icpc/check.hpp"

namespace icpc {

using Real = double;

inline int shape_size(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Reverse-mode autodiff tensor. Each op builds a node holding the forward
// value and a closure that scatters the node's gradient into its parents.
// Graphs are rebuilt per evaluation (define-by-run); parameters are leaves
// that persist across steps, everything else is freed with the graph.
class Tensor {
 public:
  struct Node {
    std::vector<int> shape;
    std::vector<Real> val;
    std::vector<Real> grad;
    std::vector<Tensor> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
    bool needs_grad = false;
  };

  Tensor() = default;

  static Tensor leaf(std::vector<int> shape, std::vector<Real> vals, bool needs_grad = false) {
    check(static_cast<int>(vals.size()) == shape_size(shape),
          "tensor: value count " + std::to_string(vals.size()) + " does not match shape " +
              shape_str(shape));
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    t.n_->val = std::move(vals);
    t.n_->grad.assign(t.n_->val.size(), 0.0);
    t.n_->needs_grad = needs_grad;
    return t;
  }

  static Tensor zeros(std::vector<int> shape, bool needs_grad = false) {
    int n = shape_size(shape);
    return leaf(std::move(shape), std::vector<Real>(static_cast<size_t>(n), 0.0), needs_grad);
  }

  static Tensor full(std::vector<int> shape, Real v, bool needs_grad = false) {
    int n = shape_size(shape);
    return leaf(std::move(shape), std::vector<Real>(static_cast<size_t>(n), v), needs_grad);
  }

  static Tensor scalar(Real v) { return leaf({}, {v}); }

  // Internal node with forward value to be filled by the op.
  static Tensor op(std::vector<int> shape, std::vector<Tensor> parents) {
    Tensor t;
    t.n_ = std::make_shared<Node>();
    t.n_->shape = std::move(shape);
    size_t n = static_cast<size_t>(shape_size(t.n_->shape));
    t.n_->val.assign(n, 0.0);
    t.n_->grad.assign(n, 0.0);
    bool ng = false;
    for (const Tensor& p : parents) ng = ng || p.needs_grad();
    t.n_->needs_grad = ng;
    if (ng) t.n_->parents = std::move(parents);
    return t;
  }

  bool defined() const { return n_ != nullptr; }
  const std::vector<int>& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(n_->val.size()); }
  std::vector<Real>& val() { return n_->val; }
  const std::vector<Real>& val() const { return n_->val; }
  std::vector<Real>& grad() { return n_->grad; }
  const std::vector<Real>& grad() const { return n_->grad; }
  bool needs_grad() const { return n_->needs_grad; }
  Node* node() const { return n_.get(); }

  Real item() const {
    check(size() == 1, "item(): tensor is not scalar, shape " + shape_str(shape()));
    return n_->val[0];
  }

  void set_backprop(std::function<void(Node&)> fn) {
    if (n_->needs_grad) n_->backprop = std::move(fn);
  }

  void zero_grad() { std::fill(n_->grad.begin(), n_->grad.end(), 0.0); }

 private:
  std::shared_ptr<Node> n_;
};

// Runs reverse-mode accumulation from a scalar root. Gradients accumulate
// into every reachable node's .grad (callers zero parameter grads between
// steps; graph nodes are freshly zeroed on construction).
inline void backward(const Tensor& root) {
  check(root.size() == 1, "backward(): root must be scalar");
  if (!root.needs_grad()) return;

  std::vector<Tensor::Node*> order;
  std::unordered_set<Tensor::Node*> seen;
  struct Frame {
    Tensor::Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root.node(), 0});
  seen.insert(root.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Tensor::Node* p = f.n->parents[f.next_parent++].node();
      if (p->needs_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  root.node()->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop(**it);
  }
}

// ---------------------------------------------------------------------------
// elementwise & scalar ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(),
        "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::op(a.shape(), {a, b});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  out.set_backprop([a, b](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.needs_grad()) {
      auto& g = b.node()->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(),
        "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::op(a.shape(), {a, b});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  out.set_backprop([a, b](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.needs_grad()) {
      auto& g = b.node()->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
    }
  });
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(),
        "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = Tensor::op(a.shape(), {a, b});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  out.set_backprop([a, b](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      const auto& bv2 = b.val();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bv2[i];
    }
    if (b.needs_grad()) {
      auto& g = b.node()->grad;
      const auto& av2 = a.val();
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * av2[i];
    }
  });
  return out;
}

inline Tensor scale(const Tensor& a, Real c) {
  Tensor out = Tensor::op(a.shape(), {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  out.set_backprop([a, c](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c;
  });
  return out;
}

// Multiply by a scalar tensor (e.g. a trainable trade-off parameter).
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
  check(s.size() == 1, "scale_by: scalar tensor expected");
  Tensor out = Tensor::op(a.shape(), {a, s});
  Real c = s.val()[0];
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  out.set_backprop([a, s](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      Real c2 = s.val()[0];
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c2;
    }
    if (s.needs_grad()) {
      Real acc = 0.0;
      const auto& av2 = a.val();
      for (size_t i = 0; i < av2.size(); ++i) acc += o.grad[i] * av2[i];
      s.node()->grad[0] += acc;
    }
  });
  return out;
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor tanh_t(const Tensor& a) {
  Tensor out = Tensor::op(a.shape(), {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::tanh(av[i]);
  out.set_backprop([a](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * (1.0 - o.val[i] * o.val[i]);
  });
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = Tensor::op(a.shape(), {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
  out.set_backprop([a](Tensor::Node& o) {
    auto& g = a.node()->grad;
    const auto& av2 = a.val();
    for (size_t i = 0; i < g.size(); ++i)
      if (av2[i] > 0.0) g[i] += o.grad[i];
  });
  return out;
}

inline Tensor exp_t(const Tensor& a) {
  Tensor out = Tensor::op(a.shape(), {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  out.set_backprop([a](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.val[i];
  });
  return out;
}

// Elementwise power; inputs must be strictly positive for non-integer p.
inline Tensor pow_t(const Tensor& a, Real p) {
  Tensor out = Tensor::op(a.shape(), {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::pow(av[i], p);
  out.set_backprop([a, p](Tensor::Node& o) {
    auto& g = a.node()->grad;
    const auto& av2 = a.val();
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * p * std::pow(av2[i], p - 1.0);
  });
  return out;
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2, "matmul: 2-D tensors expected");
  check(a.dim(1) == b.dim(0), "matmul: inner dims " + std::to_string(a.dim(1)) + " vs " +
                                  std::to_string(b.dim(0)) + " differ");
  int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = Tensor::op({m, n}, {a, b});
  const Real* av = a.val().data();
  const Real* bv = b.val().data();
  Real* ov = out.val().data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      Real x = av[i * k + p];
      if (x == 0.0) continue;
      const Real* br = bv + p * n;
      Real* orow = ov + i * n;
      for (int j = 0; j < n; ++j) orow[j] += x * br[j];
    }
  }
  out.set_backprop([a, b, m, k, n](Tensor::Node& o) {
    const Real* g = o.grad.data();
    if (a.needs_grad()) {
      Real* ga = a.node()->grad.data();
      const Real* bv2 = b.val().data();
      for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
          Real acc = 0.0;
          const Real* br = bv2 + p * n;
          const Real* grow = g + i * n;
          for (int j = 0; j < n; ++j) acc += grow[j] * br[j];
          ga[i * k + p] += acc;
        }
    }
    if (b.needs_grad()) {
      Real* gb = b.node()->grad.data();
      const Real* av2 = a.val().data();
      for (int i = 0; i < m; ++i) {
        const Real* grow = g + i * n;
        for (int p = 0; p < k; ++p) {
          Real x = av2[i * k + p];
          if (x == 0.0) continue;
          Real* gbr = gb + p * n;
          for (int j = 0; j < n; ++j) gbr[j] += x * grow[j];
        }
      }
    }
  });
  return out;
}

inline Tensor transpose2d(const Tensor& a) {
  check(a.ndim() == 2, "transpose2d: 2-D tensor expected");
  int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::op({n, m}, {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[static_cast<size_t>(j) * m + i] = av[static_cast<size_t>(i) * n + j];
  out.set_backprop([a, m, n](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        g[static_cast<size_t>(i) * n + j] += o.grad[static_cast<size_t>(j) * m + i];
  });
  return out;
}

// Dot product of two same-size tensors, any rank.
inline Tensor dot(const Tensor& a, const Tensor& b) {
  check(a.size() == b.size(), "dot: size mismatch");
  Tensor out = Tensor::op({}, {a, b});
  const auto &av = a.val(), &bv = b.val();
  Real acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
  out.val()[0] = acc;
  out.set_backprop([a, b](Tensor::Node& o) {
    Real g = o.grad[0];
    if (a.needs_grad()) {
      auto& ga = a.node()->grad;
      const auto& bv2 = b.val();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g * bv2[i];
    }
    if (b.needs_grad()) {
      auto& gb = b.node()->grad;
      const auto& av2 = a.val();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += g * av2[i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, std::vector<int> shape) {
  check(shape_size(shape) == a.size(), "reshape: size mismatch " + shape_str(a.shape()) +
                                           " -> " + shape_str(shape));
  Tensor out = Tensor::op(std::move(shape), {a});
  out.val() = a.val();
  out.set_backprop([a](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
  return out;
}

// Concatenate along the last axis; all leading axes must match.
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  check(a.ndim() == b.ndim() && a.ndim() >= 1, "concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.ndim(); ++i)
    check(a.dim(i) == b.dim(i), "concat_last: leading dims differ");
  int ca = a.dim(a.ndim() - 1), cb = b.dim(b.ndim() - 1);
  int rows = a.size() / ca;
  std::vector<int> shape = a.shape();
  shape.back() = ca + cb;
  Tensor out = Tensor::op(shape, {a, b});
  const auto &av = a.val(), &bv = b.val();
  auto& ov = out.val();
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < ca; ++j) ov[static_cast<size_t>(r) * (ca + cb) + j] = av[static_cast<size_t>(r) * ca + j];
    for (int j = 0; j < cb; ++j) ov[static_cast<size_t>(r) * (ca + cb) + ca + j] = bv[static_cast<size_t>(r) * cb + j];
  }
  out.set_backprop([a, b, ca, cb, rows](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < ca; ++j)
          g[static_cast<size_t>(r) * ca + j] += o.grad[static_cast<size_t>(r) * (ca + cb) + j];
    }
    if (b.needs_grad()) {
      auto& g = b.node()->grad;
      for (int r = 0; r < rows; ++r)
        for (int j = 0; j < cb; ++j)
          g[static_cast<size_t>(r) * cb + j] += o.grad[static_cast<size_t>(r) * (ca + cb) + ca + j];
    }
  });
  return out;
}

// Slice [c0, c1) of the last axis.
inline Tensor slice_last(const Tensor& a, int c0, int c1) {
  int c = a.dim(a.ndim() - 1);
  check(0 <= c0 && c0 < c1 && c1 <= c, "slice_last: bad range");
  int rows = a.size() / c;
  int w = c1 - c0;
  std::vector<int> shape = a.shape();
  shape.back() = w;
  Tensor out = Tensor::op(shape, {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < w; ++j)
      ov[static_cast<size_t>(r) * w + j] = av[static_cast<size_t>(r) * c + c0 + j];
  out.set_backprop([a, c0, w, c, rows](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < w; ++j)
        g[static_cast<size_t>(r) * c + c0 + j] += o.grad[static_cast<size_t>(r) * w + j];
  });
  return out;
}

// Concatenate 2-D tensors along rows.
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
  check(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(1),
        "concat_rows: column widths differ");
  int ma = a.dim(0), mb = b.dim(0), n = a.dim(1);
  Tensor out = Tensor::op({ma + mb, n}, {a, b});
  auto& ov = out.val();
  std::copy(a.val().begin(), a.val().end(), ov.begin());
  std::copy(b.val().begin(), b.val().end(), ov.begin() + static_cast<long>(ma) * n);
  out.set_backprop([a, b, ma, n](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (b.needs_grad()) {
      auto& g = b.node()->grad;
      size_t off = static_cast<size_t>(ma) * n;
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[off + i];
    }
  });
  return out;
}

// Gather rows of a 2-D tensor; duplicate indices accumulate on backward.
inline Tensor gather_rows(const Tensor& a, std::vector<int> idx) {
  check(a.ndim() == 2, "gather_rows: 2-D tensor expected");
  int m = a.dim(0), n = a.dim(1);
  for (int i : idx) check(0 <= i && i < m, "gather_rows: index out of range");
  int r = static_cast<int>(idx.size());
  Tensor out = Tensor::op({r, n}, {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (int i = 0; i < r; ++i)
    std::copy(av.begin() + static_cast<long>(idx[static_cast<size_t>(i)]) * n,
              av.begin() + static_cast<long>(idx[static_cast<size_t>(i)] + 1) * n,
              ov.begin() + static_cast<long>(i) * n);
  out.set_backprop([a, idx = std::move(idx), n](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (size_t i = 0; i < idx.size(); ++i) {
      size_t src = i * static_cast<size_t>(n);
      size_t dst = static_cast<size_t>(idx[i]) * n;
      for (int j = 0; j < n; ++j) g[dst + j] += o.grad[src + j];
    }
  });
  return out;
}

inline Tensor row(const Tensor& a, int i) { return gather_rows(a, {i}); }

// Stack scalar tensors into a vector.
inline Tensor concat_scalars(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "concat_scalars: empty input");
  int n = static_cast<int>(xs.size());
  Tensor out = Tensor::op({n}, xs);
  for (int i = 0; i < n; ++i) {
    check(xs[static_cast<size_t>(i)].size() == 1, "concat_scalars: scalar tensors expected");
    out.val()[static_cast<size_t>(i)] = xs[static_cast<size_t>(i)].val()[0];
  }
  out.set_backprop([xs](Tensor::Node& o) {
    for (size_t i = 0; i < xs.size(); ++i)
      if (xs[i].needs_grad()) xs[i].node()->grad[0] += o.grad[i];
  });
  return out;
}

// Stack 1-D tensors of equal length into a matrix.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  check(!rows.empty(), "stack_rows: empty input");
  int n = rows[0].size();
  int m = static_cast<int>(rows.size());
  Tensor out = Tensor::op({m, n}, rows);
  auto& ov = out.val();
  for (int i = 0; i < m; ++i) {
    check(rows[static_cast<size_t>(i)].size() == n, "stack_rows: row length mismatch");
    std::copy(rows[static_cast<size_t>(i)].val().begin(), rows[static_cast<size_t>(i)].val().end(),
              ov.begin() + static_cast<long>(i) * n);
  }
  out.set_backprop([rows, n](Tensor::Node& o) {
    for (size_t i = 0; i < rows.size(); ++i) {
      if (!rows[i].needs_grad()) continue;
      auto& g = rows[i].node()->grad;
      size_t off = i * static_cast<size_t>(n);
      for (int j = 0; j < n; ++j) g[static_cast<size_t>(j)] += o.grad[off + j];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// reductions & row ops
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::op({}, {a});
  Real acc = 0.0;
  for (Real v : a.val()) acc += v;
  out.val()[0] = acc;
  out.set_backprop([a](Tensor::Node& o) {
    auto& g = a.node()->grad;
    Real gg = o.grad[0];
    for (size_t i = 0; i < g.size(); ++i) g[i] += gg;
  });
  return out;
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / a.size()); }

inline Tensor row_sums(const Tensor& a) {
  check(a.ndim() == 2, "row_sums: 2-D tensor expected");
  int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::op({m}, {a});
  const auto& av = a.val();
  for (int i = 0; i < m; ++i) {
    Real acc = 0.0;
    for (int j = 0; j < n; ++j) acc += av[static_cast<size_t>(i) * n + j];
    out.val()[static_cast<size_t>(i)] = acc;
  }
  out.set_backprop([a, m, n](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) g[static_cast<size_t>(i) * n + j] += o.grad[static_cast<size_t>(i)];
  });
  return out;
}

// Adds a length-n vector to every row of an [m,n] tensor.
inline Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  check(a.ndim() == 2 && v.ndim() == 1 && a.dim(1) == v.dim(0), "add_rowvec: shape mismatch");
  int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::op({m, n}, {a, v});
  const auto &av = a.val(), &vv = v.val();
  auto& ov = out.val();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<size_t>(i) * n + j] = av[static_cast<size_t>(i) * n + j] + vv[static_cast<size_t>(j)];
  out.set_backprop([a, v, m, n](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (v.needs_grad()) {
      auto& g = v.node()->grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) g[static_cast<size_t>(j)] += o.grad[static_cast<size_t>(i) * n + j];
    }
  });
  return out;
}

// Scales row i of an [m,n] tensor by s[i].
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
  check(a.ndim() == 2 && s.ndim() == 1 && a.dim(0) == s.dim(0), "scale_rows: shape mismatch");
  int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::op({m, n}, {a, s});
  const auto &av = a.val(), &sv = s.val();
  auto& ov = out.val();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<size_t>(i) * n + j] = av[static_cast<size_t>(i) * n + j] * sv[static_cast<size_t>(i)];
  out.set_backprop([a, s, m, n](Tensor::Node& o) {
    if (a.needs_grad()) {
      auto& g = a.node()->grad;
      const auto& sv2 = s.val();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          g[static_cast<size_t>(i) * n + j] += o.grad[static_cast<size_t>(i) * n + j] * sv2[static_cast<size_t>(i)];
    }
    if (s.needs_grad()) {
      auto& g = s.node()->grad;
      const auto& av2 = a.val();
      for (int i = 0; i < m; ++i) {
        Real acc = 0.0;
        for (int j = 0; j < n; ++j)
          acc += o.grad[static_cast<size_t>(i) * n + j] * av2[static_cast<size_t>(i) * n + j];
        g[static_cast<size_t>(i)] += acc;
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// softmax family
// ---------------------------------------------------------------------------

inline Tensor softmax_rows(const Tensor& a) {
  check(a.ndim() == 2, "softmax_rows: 2-D tensor expected");
  int m = a.dim(0), n = a.dim(1);
  Tensor out = Tensor::op({m, n}, {a});
  const auto& av = a.val();
  auto& ov = out.val();
  for (int i = 0; i < m; ++i) {
    const Real* r = av.data() + static_cast<size_t>(i) * n;
    Real* orow = ov.data() + static_cast<size_t>(i) * n;
    Real mx = r[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, r[j]);
    Real z = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(r[j] - mx);
      z += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= z;
  }
  out.set_backprop([a, m, n](Tensor::Node& o) {
    auto& g = a.node()->grad;
    for (int i = 0; i < m; ++i) {
      const Real* y = o.val.data() + static_cast<size_t>(i) * n;
      const Real* gy = o.grad.data() + static_cast<size_t>(i) * n;
      Real d = 0.0;
      for (int j = 0; j < n; ++j) d += gy[j] * y[j];
      Real* gx = g.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - d);
    }
  });
  return out;
}

// Stabilized log-sum-exp over all entries of a 1-D tensor.
inline Tensor logsumexp_all(const Tensor& a) {
  check(a.size() >= 1, "logsumexp_all: empty tensor");
  Tensor out = Tensor::op({}, {a});
  const auto& av = a.val();
  Real mx = av[0];
  for (Real v : av) mx = std::max(mx, v);
  Real z = 0.0;
  for (Real v : av) z += std::exp(v - mx);
  out.val()[0] = mx + std::log(z);
  out.set_backprop([a](Tensor::Node& o) {
    auto& g = a.node()->grad;
    const auto& av2 = a.val();
    Real y = o.val[0], gg = o.grad[0];
    for (size_t i = 0; i < g.size(); ++i) g[i] += gg * std::exp(av2[i] - y);
  });
  return out;
}

// Mean softmax cross-entropy over rows, skipping rows labeled `ignore`.
// Throws if every row is ignored.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& labels,
                                 int ignore_label) {
  check(logits.ndim() == 2, "cross_entropy_rows: 2-D logits expected");
  int m = logits.dim(0), n = logits.dim(1);
  check(static_cast<int>(labels.size()) == m, "cross_entropy_rows: label count mismatch");
  int valid = 0;
  for (int l : labels)
    if (l != ignore_label) {
      check(0 <= l && l < n, "cross_entropy_rows: label " + std::to_string(l) + " out of range");
      ++valid;
    }
  check(valid > 0, "cross_entropy_rows: all pixels ignored");
  Tensor out = Tensor::op({}, {logits});
  const auto& lv = logits.val();
  Real acc = 0.0;
  for (int i = 0; i < m; ++i) {
    if (labels[static_cast<size_t>(i)] == ignore_label) continue;
    const Real* r = lv.data() + static_cast<size_t>(i) * n;
    Real mx = r[0];
    for (int j = 1; j < n; ++j) mx = std::max(mx, r[j]);
    Real z = 0.0;
    for (int j = 0; j < n; ++j) z += std::exp(r[j] - mx);
    acc += (mx + std::log(z)) - r[labels[static_cast<size_t>(i)]];
  }
  out.val()[0] = acc / valid;
  out.set_backprop([logits, labels, ignore_label, m, n, valid](Tensor::Node& o) {
    auto& g = logits.node()->grad;
    const auto& lv2 = logits.val();
    Real gg = o.grad[0] / valid;
    for (int i = 0; i < m; ++i) {
      int lab = labels[static_cast<size_t>(i)];
      if (lab == ignore_label) continue;
      const Real* r = lv2.data() + static_cast<size_t>(i) * n;
      Real mx = r[0];
      for (int j = 1; j < n; ++j) mx = std::max(mx, r[j]);
      Real z = 0.0;
      for (int j = 0; j < n; ++j) z += std::exp(r[j] - mx);
      Real* gr = g.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        Real p = std::exp(r[j] - mx) / z;
        gr[j] += gg * (p - (j == lab ? 1.0 : 0.0));
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// spatial ops (tensors laid out [H, W, C], channels contiguous)
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  check(x.ndim() == 3, "conv2d: input must be [H,W,C]");
  check(w.ndim() == 4, "conv2d: weight must be [kh,kw,Cin,Cout]");
  int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  check(w.dim(2) == ci, "conv2d: channel mismatch " + std::to_string(w.dim(2)) + " vs " +
                            std::to_string(ci));
  check(!b.defined() || (b.ndim() == 1 && b.dim(0) == co), "conv2d: bad bias shape");
  int oh = (h + 2 * pad - kh) / stride + 1;
  int ow = (wd + 2 * pad - kw) / stride + 1;
  check(oh >= 1 && ow >= 1, "conv2d: output would be empty");
  std::vector<Tensor> parents = {x, w};
  if (b.defined()) parents.push_back(b);
  Tensor out = Tensor::op({oh, ow, co}, parents);
  const Real* xv = x.val().data();
  const Real* wv = w.val().data();
  Real* ov = out.val().data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      Real* orow = ov + (static_cast<size_t>(oy) * ow + ox) * co;
      if (b.defined()) {
        const Real* bv = b.val().data();
        for (int c = 0; c < co; ++c) orow[c] = bv[c];
      }
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= wd) continue;
          const Real* xp = xv + (static_cast<size_t>(iy) * wd + ix) * ci;
          const Real* wp = wv + ((static_cast<size_t>(ky) * kw + kx) * ci) * co;
          for (int c = 0; c < ci; ++c) {
            Real xc = xp[c];
            if (xc == 0.0) continue;
            const Real* wr = wp + static_cast<size_t>(c) * co;
            for (int d = 0; d < co; ++d) orow[d] += xc * wr[d];
          }
        }
      }
    }
  }
  out.set_backprop([x, w, b, stride, pad, h, wd, ci, kh, kw, co, oh, ow](Tensor::Node& o) {
    const Real* g = o.grad.data();
    Real* gx = x.needs_grad() ? x.node()->grad.data() : nullptr;
    Real* gw = w.needs_grad() ? w.node()->grad.data() : nullptr;
    const Real* xv2 = x.val().data();
    const Real* wv2 = w.val().data();
    if (b.defined() && b.needs_grad()) {
      Real* gb = b.node()->grad.data();
      for (int i = 0; i < oh * ow; ++i) {
        const Real* grow = g + static_cast<size_t>(i) * co;
        for (int c = 0; c < co; ++c) gb[c] += grow[c];
      }
    }
    if (!gx && !gw) return;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const Real* grow = g + (static_cast<size_t>(oy) * ow + ox) * co;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= wd) continue;
            size_t xoff = (static_cast<size_t>(iy) * wd + ix) * ci;
            size_t woff = (static_cast<size_t>(ky) * kw + kx) * ci * co;
            for (int c = 0; c < ci; ++c) {
              const Real* wr = wv2 + woff + static_cast<size_t>(c) * co;
              Real xc = xv2[xoff + c];
              Real accx = 0.0;
              if (gw) {
                Real* gwr = gw + woff + static_cast<size_t>(c) * co;
                for (int d = 0; d < co; ++d) {
                  Real gd = grow[d];
                  accx += gd * wr[d];
                  gwr[d] += gd * xc;
                }
              } else {
                for (int d = 0; d < co; ++d) accx += grow[d] * wr[d];
              }
              if (gx) gx[xoff + c] += accx;
            }
          }
        }
      }
    }
  });
  return out;
}

// Depthwise transposed convolution, kernel 2, stride 2: exact 2x upsampling.
// Weight layout [C,2,2]; no bias (the kernels themselves are learned).
inline Tensor deconv2x_depthwise(const Tensor& x, const Tensor& w) {
  check(x.ndim() == 3, "deconv2x: input must be [H,W,C]");
  int h = x.dim(0), wd = x.dim(1), c = x.dim(2);
  check(w.ndim() == 3 && w.dim(0) == c && w.dim(1) == 2 && w.dim(2) == 2,
        "deconv2x: weight must be [C,2,2] with C=" + std::to_string(c) + ", got " +
            shape_str(w.shape()));
  Tensor out = Tensor::op({2 * h, 2 * wd, c}, {x, w});
  const Real* xv = x.val().data();
  const Real* wv = w.val().data();
  Real* ov = out.val().data();
  int ow = 2 * wd;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < wd; ++xx) {
      const Real* xp = xv + (static_cast<size_t>(y) * wd + xx) * c;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          Real* op = ov + (static_cast<size_t>(2 * y + dy) * ow + (2 * xx + dx)) * c;
          for (int k = 0; k < c; ++k) op[k] = xp[k] * wv[static_cast<size_t>(k) * 4 + dy * 2 + dx];
        }
    }
  out.set_backprop([x, w, h, wd, c, ow](Tensor::Node& o) {
    const Real* g = o.grad.data();
    const Real* xv2 = x.val().data();
    const Real* wv2 = w.val().data();
    Real* gx = x.needs_grad() ? x.node()->grad.data() : nullptr;
    Real* gw = w.needs_grad() ? w.node()->grad.data() : nullptr;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < wd; ++xx) {
        size_t xoff = (static_cast<size_t>(y) * wd + xx) * c;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const Real* gp = g + (static_cast<size_t>(2 * y + dy) * ow + (2 * xx + dx)) * c;
            for (int k = 0; k < c; ++k) {
              if (gx) gx[xoff + k] += gp[k] * wv2[static_cast<size_t>(k) * 4 + dy * 2 + dx];
              if (gw) gw[static_cast<size_t>(k) * 4 + dy * 2 + dx] += gp[k] * xv2[xoff + k];
            }
          }
      }
  });
  return out;
}

inline Tensor upsample_nearest(const Tensor& x, int factor) {
  check(x.ndim() == 3 && factor >= 1, "upsample_nearest: bad input");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int oh = h * factor, ow = w * factor;
  Tensor out = Tensor::op({oh, ow, c}, {x});
  const Real* xv = x.val().data();
  Real* ov = out.val().data();
  for (int y = 0; y < oh; ++y) {
    int sy = y / factor;
    for (int xx = 0; xx < ow; ++xx) {
      int sx = xx / factor;
      const Real* xp = xv + (static_cast<size_t>(sy) * w + sx) * c;
      Real* op = ov + (static_cast<size_t>(y) * ow + xx) * c;
      for (int k = 0; k < c; ++k) op[k] = xp[k];
    }
  }
  out.set_backprop([x, factor, h, w, c, oh, ow](Tensor::Node& o) {
    Real* gx = x.node()->grad.data();
    const Real* g = o.grad.data();
    for (int y = 0; y < oh; ++y) {
      int sy = y / factor;
      for (int xx = 0; xx < ow; ++xx) {
        int sx = xx / factor;
        Real* gp = gx + (static_cast<size_t>(sy) * w + sx) * c;
        const Real* go = g + (static_cast<size_t>(y) * ow + xx) * c;
        for (int k = 0; k < c; ++k) gp[k] += go[k];
      }
    }
  });
  return out;
}

// Bilinear upsampling with half-pixel centers (align_corners = false).
inline Tensor upsample_bilinear(const Tensor& x, int factor) {
  check(x.ndim() == 3 && factor >= 1, "upsample_bilinear: bad input");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int oh = h * factor, ow = w * factor;
  // Precompute the 1-D interpolation taps once per axis.
  struct Tap {
    int i0, i1;
    Real w0, w1;
  };
  auto make_taps = [](int out_n, int in_n, int f) {
    std::vector<Tap> taps(static_cast<size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
      Real src = (o + 0.5) / f - 0.5;
      int i0 = static_cast<int>(std::floor(src));
      Real t = src - i0;
      int i1 = i0 + 1;
      i0 = std::clamp(i0, 0, in_n - 1);
      i1 = std::clamp(i1, 0, in_n - 1);
      taps[static_cast<size_t>(o)] = {i0, i1, 1.0 - t, t};
    }
    return taps;
  };
  std::vector<Tap> ty = make_taps(oh, h, factor);
  std::vector<Tap> tx = make_taps(ow, w, factor);
  Tensor out = Tensor::op({oh, ow, c}, {x});
  const Real* xv = x.val().data();
  Real* ov = out.val().data();
  for (int y = 0; y < oh; ++y) {
    const Tap& ay = ty[static_cast<size_t>(y)];
    for (int xx = 0; xx < ow; ++xx) {
      const Tap& ax = tx[static_cast<size_t>(xx)];
      const Real* p00 = xv + (static_cast<size_t>(ay.i0) * w + ax.i0) * c;
      const Real* p01 = xv + (static_cast<size_t>(ay.i0) * w + ax.i1) * c;
      const Real* p10 = xv + (static_cast<size_t>(ay.i1) * w + ax.i0) * c;
      const Real* p11 = xv + (static_cast<size_t>(ay.i1) * w + ax.i1) * c;
      Real* op = ov + (static_cast<size_t>(y) * ow + xx) * c;
      for (int k = 0; k < c; ++k)
        op[k] = ay.w0 * (ax.w0 * p00[k] + ax.w1 * p01[k]) +
                ay.w1 * (ax.w0 * p10[k] + ax.w1 * p11[k]);
    }
  }
  out.set_backprop([x, ty = std::move(ty), tx = std::move(tx), w, c, oh, ow](Tensor::Node& o) {
    Real* gx = x.node()->grad.data();
    const Real* g = o.grad.data();
    for (int y = 0; y < oh; ++y) {
      const Tap& ay = ty[static_cast<size_t>(y)];
      for (int xx = 0; xx < ow; ++xx) {
        const Tap& ax = tx[static_cast<size_t>(xx)];
        const Real* go = g + (static_cast<size_t>(y) * ow + xx) * c;
        Real* g00 = gx + (static_cast<size_t>(ay.i0) * w + ax.i0) * c;
        Real* g01 = gx + (static_cast<size_t>(ay.i0) * w + ax.i1) * c;
        Real* g10 = gx + (static_cast<size_t>(ay.i1) * w + ax.i0) * c;
        Real* g11 = gx + (static_cast<size_t>(ay.i1) * w + ax.i1) * c;
        for (int k = 0; k < c; ++k) {
          Real gk = go[k];
          g00[k] += gk * ay.w0 * ax.w0;
          g01[k] += gk * ay.w0 * ax.w1;
          g10[k] += gk * ay.w1 * ax.w0;
          g11[k] += gk * ay.w1 * ax.w1;
        }
      }
    }
  });
  return out;
}

// Mean over the spatial dims of an [H,W,C] tensor.
inline Tensor mean_spatial(const Tensor& x) {
  check(x.ndim() == 3, "mean_spatial: [H,W,C] tensor expected");
  int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  int n = h * w;
  Tensor out = Tensor::op({c}, {x});
  const Real* xv = x.val().data();
  Real* ov = out.val().data();
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) ov[k] += xv[static_cast<size_t>(i) * c + k];
  for (int k = 0; k < c; ++k) ov[k] /= n;
  out.set_backprop([x, n, c](Tensor::Node& o) {
    Real* gx = x.node()->grad.data();
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) gx[static_cast<size_t>(i) * c + k] += o.grad[static_cast<size_t>(k)] / n;
  });
  return out;
}

// ---------------------------------------------------------------------------
// composed helpers
// ---------------------------------------------------------------------------

// Rowwise L2 normalization. Throws on a zero-norm row (there is no sensible
// direction to normalize to, and cosine scores downstream would be undefined).
inline Tensor l2_normalize_rows(const Tensor& a) {
  check(a.ndim() == 2, "l2_normalize_rows: 2-D tensor expected");
  Tensor sq = mul(a, a);
  Tensor ss = row_sums(sq);
  for (Real v : ss.val()) check(v > 0.0, "l2_normalize_rows: zero-norm vector");
  Tensor inv = pow_t(ss, -0.5);
  return scale_rows(a, inv);
}

}  // namespace icpc
