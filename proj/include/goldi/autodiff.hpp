#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "goldi/common.hpp"

namespace goldi::ad {

// Row partition of a stacked sequence matrix: block b owns rows
// [offset[b], offset[b+1]).
struct Blocks {
  std::vector<Index> offset{0};

  static Blocks uniform(Index count, Index len) {
    Blocks b;
    b.offset.resize(static_cast<size_t>(count) + 1);
    for (Index i = 0; i <= count; ++i) b.offset[static_cast<size_t>(i)] = i * len;
    return b;
  }
  void push(Index len) { offset.push_back(offset.back() + len); }
  Index count() const { return static_cast<Index>(offset.size()) - 1; }
  Index total() const { return offset.back(); }
  Index lo(Index b) const { return offset[static_cast<size_t>(b)]; }
  Index len(Index b) const {
    return offset[static_cast<size_t>(b) + 1] - offset[static_cast<size_t>(b)];
  }
};

template <typename S>
class Graph;

template <typename S>
struct Var {
  Graph<S>* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Mat<S>& value() const { return g->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
};

// Reverse-mode tape over dense Eigen matrices. Nodes are appended in
// topological order during the forward pass; backward() walks the tape in
// reverse, invoking each node's vector-Jacobian product with the node's own
// index so it can read its upstream gradient.
template <typename S>
class Graph {
 public:
  using Vjp = std::function<void(Graph&, int)>;

  struct Node {
    Mat<S> value;
    Mat<S> grad;  // empty until first accumulation
    bool needs_grad = false;
    Vjp vjp;  // empty for leaves and constants
  };

  Var<S> constant(Mat<S> v) { return push(std::move(v), false, {}); }

  Var<S> leaf(Mat<S> v) { return push(std::move(v), true, {}); }

  Var<S> scalar_const(S v) {
    Mat<S> m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  Var<S> push(Mat<S> value, bool needs_grad, Vjp vjp) {
    nodes_.push_back(Node{std::move(value), Mat<S>(), needs_grad, std::move(vjp)});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<S>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // Gradient of the last backward() root w.r.t. `v`; zeros if never touched.
  Mat<S> grad(Var<S> v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    if (n.grad.size() == 0) return Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  bool has_grad(Var<S> v) const {
    return nodes_[static_cast<size_t>(v.id)].grad.size() != 0;
  }

  const Mat<S>& upstream(int id) const {
    return nodes_[static_cast<size_t>(id)].grad;
  }

  // Accumulate into the gradient buffer of node `id` (no-op for constants).
  template <typename Expr>
  void accum(int id, const Expr& e) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = e;
    } else {
      n.grad += e;
    }
  }

  // Ensure a zeroed gradient buffer exists (for in-place scatter accumulation).
  Mat<S>& grad_buffer(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<S> root) {
    require(root.valid() && root.g == this, "backward: root not on this graph");
    Node& r = nodes_[static_cast<size_t>(root.id)];
    require(r.value.rows() == 1 && r.value.cols() == 1,
            "backward: root must be a 1x1 scalar");
    if (r.grad.size() == 0) r.grad = Mat<S>::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.grad.size() != 0 && n.vjp) n.vjp(*this, i);
    }
  }

  void clear_grads() {
    for (auto& n : nodes_) n.grad.resize(0, 0);
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

template <typename S>
bool any_needs(const Graph<S>& g, std::initializer_list<int> ids) {
  for (int id : ids)
    if (g.needs_grad(id)) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// arithmetic

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  int ia = a.id, ib = b.id;
  return g.push(a.value() + b.value(), detail::any_needs(g, {ia, ib}),
                [ia, ib](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  gr.accum(ia, gy);
                  gr.accum(ib, gy);
                });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  int ia = a.id, ib = b.id;
  return g.push(a.value() - b.value(), detail::any_needs(g, {ia, ib}),
                [ia, ib](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  gr.accum(ia, gy);
                  gr.accum(ib, -gy);
                });
}

template <typename S>
Var<S> neg(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  return g.push(-a.value(), g.needs_grad(ia), [ia](Graph<S>& gr, int self) {
    gr.accum(ia, -gr.upstream(self));
  });
}

// Hadamard product.
template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  int ia = a.id, ib = b.id;
  return g.push(a.value().cwiseProduct(b.value()), detail::any_needs(g, {ia, ib}),
                [ia, ib](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  gr.accum(ia, gy.cwiseProduct(gr.value(ib)));
                  gr.accum(ib, gy.cwiseProduct(gr.value(ia)));
                });
}

// Elementwise product with a compile-time constant matrix (no grad to c).
template <typename S>
Var<S> mul_const(Var<S> a, Mat<S> c) {
  Graph<S>& g = *a.g;
  require(a.rows() == c.rows() && a.cols() == c.cols(), "mul_const: shape mismatch");
  int ia = a.id;
  auto cp = std::make_shared<Mat<S>>(std::move(c));
  return g.push(a.value().cwiseProduct(*cp), g.needs_grad(ia),
                [ia, cp](Graph<S>& gr, int self) {
                  gr.accum(ia, gr.upstream(self).cwiseProduct(*cp));
                });
}

template <typename S>
Var<S> smul(Var<S> a, S c) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  return g.push(a.value() * c, g.needs_grad(ia), [ia, c](Graph<S>& gr, int self) {
    gr.accum(ia, gr.upstream(self) * c);
  });
}

template <typename S>
Var<S> sadd(Var<S> a, S c) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  return g.push((a.value().array() + c).matrix(), g.needs_grad(ia),
                [ia](Graph<S>& gr, int self) { gr.accum(ia, gr.upstream(self)); });
}

// Broadcast multiply by a learnable 1x1 scalar.
template <typename S>
Var<S> vs_mul(Var<S> a, Var<S> s) {
  Graph<S>& g = *a.g;
  require(s.rows() == 1 && s.cols() == 1, "vs_mul: scalar must be 1x1");
  int ia = a.id, is = s.id;
  return g.push(a.value() * s.scalar(), detail::any_needs(g, {ia, is}),
                [ia, is](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  gr.accum(ia, gy * gr.value(is)(0, 0));
                  Mat<S> gs(1, 1);
                  gs(0, 0) = gy.cwiseProduct(gr.value(ia)).sum();
                  gr.accum(is, gs);
                });
}

// Broadcast add of a learnable 1x1 scalar.
template <typename S>
Var<S> vs_add(Var<S> a, Var<S> s) {
  Graph<S>& g = *a.g;
  require(s.rows() == 1 && s.cols() == 1, "vs_add: scalar must be 1x1");
  int ia = a.id, is = s.id;
  return g.push((a.value().array() + s.scalar()).matrix(),
                detail::any_needs(g, {ia, is}), [ia, is](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  gr.accum(ia, gy);
                  Mat<S> gs(1, 1);
                  gs(0, 0) = gy.sum();
                  gr.accum(is, gs);
                });
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b, bool ta = false, bool tb = false) {
  Graph<S>& g = *a.g;
  Index ar = ta ? a.cols() : a.rows(), ac = ta ? a.rows() : a.cols();
  Index br = tb ? b.cols() : b.rows(), bc = tb ? b.rows() : b.cols();
  require(ac == br, "matmul: inner dimension mismatch");
  (void)ar;
  (void)bc;
  Mat<S> y;
  if (!ta && !tb)
    y = a.value() * b.value();
  else if (ta && !tb)
    y = a.value().transpose() * b.value();
  else if (!ta && tb)
    y = a.value() * b.value().transpose();
  else
    y = a.value().transpose() * b.value().transpose();
  int ia = a.id, ib = b.id;
  return g.push(std::move(y), detail::any_needs(g, {ia, ib}),
                [ia, ib, ta, tb](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  const Mat<S>& av = gr.value(ia);
                  const Mat<S>& bv = gr.value(ib);
                  if (gr.needs_grad(ia)) {
                    Mat<S> da;
                    if (!ta && !tb)
                      da = gy * bv.transpose();
                    else if (ta && !tb)
                      da = bv * gy.transpose();
                    else if (!ta && tb)
                      da = gy * bv;
                    else
                      da = bv.transpose() * gy.transpose();
                    gr.accum(ia, da);
                  }
                  if (gr.needs_grad(ib)) {
                    Mat<S> db;
                    if (!ta && !tb)
                      db = av.transpose() * gy;
                    else if (ta && !tb)
                      db = av * gy;
                    else if (!ta && tb)
                      db = gy.transpose() * av;
                    else
                      db = gy.transpose() * av.transpose();
                    gr.accum(ib, db);
                  }
                });
}

// y = x + 1_R * b, b is [1 x D].
template <typename S>
Var<S> add_rowvec(Var<S> x, Var<S> b) {
  Graph<S>& g = *x.g;
  require(b.rows() == 1 && b.cols() == x.cols(), "add_rowvec: bias must be 1xD");
  int ix = x.id, ib = b.id;
  Mat<S> y = x.value();
  y.rowwise() += Eigen::RowVector<S, Eigen::Dynamic>(b.value().row(0));
  return g.push(std::move(y), detail::any_needs(g, {ix, ib}),
                [ix, ib](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  gr.accum(ix, gy);
                  gr.accum(ib, gy.colwise().sum());
                });
}

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <typename S>
Var<S> exp_(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> y = a.value().array().exp().matrix();
  return g.push(std::move(y), g.needs_grad(ia), [ia](Graph<S>& gr, int self) {
    gr.accum(ia, gr.upstream(self).cwiseProduct(gr.value(self)));
  });
}

// log(max(x, eps)); flat (zero gradient) below the clamp.
template <typename S>
Var<S> log_clamped(Var<S> a, S eps) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> y = a.value().array().max(eps).log().matrix();
  return g.push(std::move(y), g.needs_grad(ia), [ia, eps](Graph<S>& gr, int self) {
    const Mat<S>& x = gr.value(ia);
    Mat<S> d = (x.array() > eps).template cast<S>() / x.array().max(eps);
    gr.accum(ia, gr.upstream(self).cwiseProduct(d));
  });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> y = a.value();
  for (Index i = 0; i < y.rows(); ++i)
    for (Index j = 0; j < y.cols(); ++j) {
      S x = y(i, j);
      // stable in both tails
      y(i, j) = x >= 0 ? S(1) / (S(1) + std::exp(-x))
                       : std::exp(x) / (S(1) + std::exp(x));
    }
  return g.push(std::move(y), g.needs_grad(ia), [ia](Graph<S>& gr, int self) {
    const Mat<S>& s = gr.value(self);
    gr.accum(ia, gr.upstream(self).cwiseProduct(
                     (s.array() * (S(1) - s.array())).matrix()));
  });
}

template <typename S>
Var<S> gelu(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  const S inv_sqrt2 = S(0.7071067811865475244);
  Mat<S> y = a.value();
  for (Index i = 0; i < y.size(); ++i) {
    S x = y.data()[i];
    y.data()[i] = x * S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
  }
  return g.push(std::move(y), g.needs_grad(ia), [ia, inv_sqrt2](Graph<S>& gr, int self) {
    const Mat<S>& x = gr.value(ia);
    const S inv_sqrt2pi = S(0.3989422804014326779);
    Mat<S> d = x;
    for (Index i = 0; i < d.size(); ++i) {
      S v = x.data()[i];
      S phi = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
      S pdf = inv_sqrt2pi * std::exp(S(-0.5) * v * v);
      d.data()[i] = phi + v * pdf;
    }
    gr.accum(ia, gr.upstream(self).cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// row-structured ops

template <typename S>
Var<S> softmax_rows(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> y = a.value();
  for (Index i = 0; i < y.rows(); ++i) {
    S m = y.row(i).maxCoeff();
    y.row(i) = (y.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  return g.push(std::move(y), g.needs_grad(ia), [ia](Graph<S>& gr, int self) {
    const Mat<S>& p = gr.value(self);
    const Mat<S>& gy = gr.upstream(self);
    Mat<S> d(p.rows(), p.cols());
    for (Index i = 0; i < p.rows(); ++i) {
      S dot = gy.row(i).dot(p.row(i));
      d.row(i) = p.row(i).cwiseProduct((gy.row(i).array() - dot).matrix());
    }
    gr.accum(ia, d);
  });
}

template <typename S>
Var<S> layer_norm_rows(Var<S> x, Var<S> gamma, Var<S> beta, S eps = S(1e-5)) {
  Graph<S>& g = *x.g;
  const Index D = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == D, "layer_norm: gamma must be 1xD");
  require(beta.rows() == 1 && beta.cols() == D, "layer_norm: beta must be 1xD");
  int ix = x.id, ig = gamma.id, ib = beta.id;
  const Mat<S>& xv = x.value();
  auto xhat = std::make_shared<Mat<S>>(xv.rows(), D);
  auto inv_std = std::make_shared<Vec<S>>(xv.rows());
  Mat<S> y(xv.rows(), D);
  for (Index i = 0; i < xv.rows(); ++i) {
    S mean = xv.row(i).mean();
    S var = (xv.row(i).array() - mean).square().mean();
    S is = S(1) / std::sqrt(var + eps);
    (*inv_std)(i) = is;
    xhat->row(i) = (xv.row(i).array() - mean).matrix() * is;
    y.row(i) = xhat->row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  }
  return g.push(std::move(y), detail::any_needs(g, {ix, ig, ib}),
                [ix, ig, ib, xhat, inv_std](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  const Index D = gy.cols();
                  gr.accum(ib, gy.colwise().sum());
                  gr.accum(ig, gy.cwiseProduct(*xhat).colwise().sum());
                  if (!gr.needs_grad(ix)) return;
                  const Mat<S>& gm = gr.value(ig);
                  Mat<S> dx(gy.rows(), D);
                  for (Index i = 0; i < gy.rows(); ++i) {
                    auto dxhat = gy.row(i).cwiseProduct(gm.row(0));
                    S m1 = dxhat.mean();
                    S m2 = dxhat.cwiseProduct(xhat->row(i)).mean();
                    dx.row(i) = ((dxhat.array() - m1) - xhat->row(i).array() * m2)
                                    .matrix() *
                                (*inv_std)(i);
                  }
                  gr.accum(ix, dx);
                });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  Mat<S> y(1, 1);
  y(0, 0) = a.value().sum();
  return g.push(std::move(y), g.needs_grad(ia), [ia](Graph<S>& gr, int self) {
    S gy = gr.upstream(self)(0, 0);
    const Mat<S>& x = gr.value(ia);
    gr.accum(ia, Mat<S>::Constant(x.rows(), x.cols(), gy));
  });
}

template <typename S>
Var<S> mean_all(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  S n = static_cast<S>(a.value().size());
  Mat<S> y(1, 1);
  y(0, 0) = a.value().sum() / n;
  return g.push(std::move(y), g.needs_grad(ia), [ia, n](Graph<S>& gr, int self) {
    S gy = gr.upstream(self)(0, 0) / n;
    const Mat<S>& x = gr.value(ia);
    gr.accum(ia, Mat<S>::Constant(x.rows(), x.cols(), gy));
  });
}

// Column mean over rows -> [1 x D].
template <typename S>
Var<S> mean_rows(Var<S> a) {
  Graph<S>& g = *a.g;
  int ia = a.id;
  S n = static_cast<S>(a.rows());
  Mat<S> y = a.value().colwise().mean();
  return g.push(std::move(y), g.needs_grad(ia), [ia, n](Graph<S>& gr, int self) {
    const Mat<S>& gy = gr.upstream(self);
    const Mat<S>& x = gr.value(ia);
    Mat<S> d(x.rows(), x.cols());
    d = (Mat<S>::Ones(x.rows(), 1) * gy) / n;
    gr.accum(ia, d);
  });
}

// Per-block row mean: block b of `blocks` collapses to output row b.
template <typename S>
Var<S> block_row_mean(Var<S> a, Blocks blocks) {
  Graph<S>& g = *a.g;
  require(blocks.total() == a.rows(), "block_row_mean: partition mismatch");
  int ia = a.id;
  Mat<S> y(blocks.count(), a.cols());
  for (Index b = 0; b < blocks.count(); ++b)
    y.row(b) = a.value().middleRows(blocks.lo(b), blocks.len(b)).colwise().mean();
  auto bl = std::make_shared<Blocks>(std::move(blocks));
  return g.push(std::move(y), g.needs_grad(ia), [ia, bl](Graph<S>& gr, int self) {
    const Mat<S>& gy = gr.upstream(self);
    Mat<S> d(gr.value(ia).rows(), gy.cols());
    for (Index b = 0; b < bl->count(); ++b) {
      S inv = S(1) / static_cast<S>(bl->len(b));
      d.middleRows(bl->lo(b), bl->len(b)) =
          Mat<S>::Ones(bl->len(b), 1) * (gy.row(b) * inv);
    }
    gr.accum(ia, d);
  });
}

// y.row(i) = x.row(idx[i]). Also serves as embedding lookup and row tiling.
template <typename S>
Var<S> gather_rows(Var<S> x, std::vector<Index> idx) {
  Graph<S>& g = *x.g;
  int ix = x.id;
  Mat<S> y(static_cast<Index>(idx.size()), x.cols());
  for (size_t i = 0; i < idx.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < x.rows(), "gather_rows: index out of range");
    y.row(static_cast<Index>(i)) = x.value().row(idx[i]);
  }
  auto ip = std::make_shared<std::vector<Index>>(std::move(idx));
  return g.push(std::move(y), g.needs_grad(ix), [ix, ip](Graph<S>& gr, int self) {
    const Mat<S>& gy = gr.upstream(self);
    Mat<S>& gx = gr.grad_buffer(ix);
    for (size_t i = 0; i < ip->size(); ++i)
      gx.row((*ip)[i]) += gy.row(static_cast<Index>(i));
  });
}

template <typename S>
Var<S> slice_rows(Var<S> x, Index lo, Index n) {
  std::vector<Index> idx(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = lo + i;
  return gather_rows(x, std::move(idx));
}

template <typename S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_rows: empty input");
  Graph<S>& g = *parts[0].g;
  Index rows = 0;
  const Index cols = parts[0].cols();
  bool nd = false;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
    nd = nd || g.needs_grad(p.id);
  }
  Mat<S> y(rows, cols);
  std::vector<int> ids;
  std::vector<Index> offs;
  Index at = 0;
  for (const auto& p : parts) {
    y.middleRows(at, p.rows()) = p.value();
    ids.push_back(p.id);
    offs.push_back(at);
    at += p.rows();
  }
  auto idsp = std::make_shared<std::vector<int>>(std::move(ids));
  auto offp = std::make_shared<std::vector<Index>>(std::move(offs));
  return g.push(std::move(y), nd, [idsp, offp](Graph<S>& gr, int self) {
    const Mat<S>& gy = gr.upstream(self);
    for (size_t i = 0; i < idsp->size(); ++i) {
      Index r = gr.value((*idsp)[i]).rows();
      gr.accum((*idsp)[i], gy.middleRows((*offp)[i], r));
    }
  });
}

template <typename S>
Var<S> l2_normalize_rows(Var<S> x, S eps = S(1e-12)) {
  Graph<S>& g = *x.g;
  int ix = x.id;
  const Mat<S>& xv = x.value();
  auto norms = std::make_shared<Vec<S>>(xv.rows());
  Mat<S> y(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    S n = std::max(xv.row(i).norm(), eps);
    (*norms)(i) = n;
    y.row(i) = xv.row(i) / n;
  }
  return g.push(std::move(y), g.needs_grad(ix), [ix, norms](Graph<S>& gr, int self) {
    const Mat<S>& gy = gr.upstream(self);
    const Mat<S>& y = gr.value(self);
    Mat<S> d(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      S dot = gy.row(i).dot(y.row(i));
      d.row(i) = (gy.row(i) - y.row(i) * dot) / (*norms)(i);
    }
    gr.accum(ix, d);
  });
}

// Per-row dot product -> [R x 1].
template <typename S>
Var<S> rowwise_dot(Var<S> a, Var<S> b) {
  Graph<S>& g = *a.g;
  require(a.rows() == b.rows() && a.cols() == b.cols(), "rowwise_dot: shape mismatch");
  int ia = a.id, ib = b.id;
  Mat<S> y(a.rows(), 1);
  for (Index i = 0; i < a.rows(); ++i) y(i, 0) = a.value().row(i).dot(b.value().row(i));
  return g.push(std::move(y), detail::any_needs(g, {ia, ib}),
                [ia, ib](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  const Mat<S>& av = gr.value(ia);
                  const Mat<S>& bv = gr.value(ib);
                  if (gr.needs_grad(ia)) {
                    Mat<S> da = bv;
                    for (Index i = 0; i < da.rows(); ++i) da.row(i) *= gy(i, 0);
                    gr.accum(ia, da);
                  }
                  if (gr.needs_grad(ib)) {
                    Mat<S> db = av;
                    for (Index i = 0; i < db.rows(); ++i) db.row(i) *= gy(i, 0);
                    gr.accum(ib, db);
                  }
                });
}

// Detached copy: value flows, gradient does not.
template <typename S>
Var<S> detach(Var<S> x) {
  return x.g->constant(x.value());
}

}  // namespace goldi::ad
