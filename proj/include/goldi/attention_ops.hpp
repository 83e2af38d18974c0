#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "goldi/autodiff.hpp"

namespace goldi::ad {

// One (query span, key/value span) pairing for grouped pooling.
struct PoolGroup {
  Index qlo, qn;  // query rows
  Index klo, kn;  // key/value rows
};

namespace detail {

// Softmax in place over each row of a dense block.
template <typename S>
void softmax_rows_inplace(Eigen::Ref<Mat<S>> m) {
  for (Index i = 0; i < m.rows(); ++i) {
    S mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

}  // namespace detail

// Multi-head scaled dot-product attention over block-partitioned sequences.
// q, k, v are stacked [rows x D]; block b of qblocks attends to block b of
// kvblocks. `causal` requires matching block lengths. Softmax matrices are
// retained for the backward pass.
template <typename S>
Var<S> multihead_attention(Var<S> q, Var<S> k, Var<S> v, Blocks qblocks,
                           Blocks kvblocks, int heads, bool causal) {
  Graph<S>& g = *q.g;
  const Index D = q.cols();
  require(k.cols() == D && v.cols() == D, "attention: width mismatch");
  require(D % heads == 0, "attention: heads must divide width");
  require(qblocks.count() == kvblocks.count(), "attention: block count mismatch");
  require(qblocks.total() == q.rows() && kvblocks.total() == k.rows(),
          "attention: partition mismatch");
  require(k.rows() == v.rows(), "attention: key/value row mismatch");
  const Index hd = D / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  const Index nb = qblocks.count();

  // attn[b * heads + h] is the softmax matrix of block b, head h
  auto attn = std::make_shared<std::vector<Mat<S>>>(static_cast<size_t>(nb * heads));
  Mat<S> out(q.rows(), D);
  const Mat<S>& qv = q.value();
  const Mat<S>& kv = k.value();
  const Mat<S>& vv = v.value();
  auto qb = std::make_shared<Blocks>(std::move(qblocks));
  auto kb = std::make_shared<Blocks>(std::move(kvblocks));

  parallel_for(nb, [&](Index lo, Index hi) {
    for (Index b = lo; b < hi; ++b) {
      Index ql = qb->lo(b), qn = qb->len(b);
      Index kl = kb->lo(b), kn = kb->len(b);
      for (int h = 0; h < heads; ++h) {
        auto Q = qv.block(ql, h * hd, qn, hd);
        auto K = kv.block(kl, h * hd, kn, hd);
        auto V = vv.block(kl, h * hd, kn, hd);
        Mat<S> s = (Q * K.transpose()) * scale;
        if (causal) {
          require(qn == kn, "attention: causal requires square blocks");
          for (Index r = 0; r < qn; ++r)
            for (Index c = r + 1; c < kn; ++c) s(r, c) = S(-1e30);
        }
        detail::softmax_rows_inplace<S>(s);
        out.block(ql, h * hd, qn, hd) = s * V;
        (*attn)[static_cast<size_t>(b * heads + h)] = std::move(s);
      }
    }
  });

  int iq = q.id, ik = k.id, iv = v.id;
  return g.push(std::move(out), detail::any_needs(g, {iq, ik, iv}),
                [iq, ik, iv, qb, kb, heads, hd, scale, attn](Graph<S>& gr, int self) {
                  const Mat<S>& gy = gr.upstream(self);
                  const Mat<S>& qv = gr.value(iq);
                  const Mat<S>& kv = gr.value(ik);
                  const Mat<S>& vv = gr.value(iv);
                  Mat<S>& dq = gr.grad_buffer(iq);
                  Mat<S>& dk = gr.grad_buffer(ik);
                  Mat<S>& dv = gr.grad_buffer(iv);
                  // Block b of q maps 1:1 to block b of k/v, so writes of
                  // distinct blocks touch disjoint rows.
                  parallel_for(qb->count(), [&](Index lo, Index hi) {
                    for (Index b = lo; b < hi; ++b) {
                      Index ql = qb->lo(b), qn = qb->len(b);
                      Index kl = kb->lo(b), kn = kb->len(b);
                      for (int h = 0; h < heads; ++h) {
                        const Mat<S>& A = (*attn)[static_cast<size_t>(b * heads + h)];
                        auto Q = qv.block(ql, h * hd, qn, hd);
                        auto K = kv.block(kl, h * hd, kn, hd);
                        auto V = vv.block(kl, h * hd, kn, hd);
                        auto GO = gy.block(ql, h * hd, qn, hd);
                        dv.block(kl, h * hd, kn, hd) += A.transpose() * GO;
                        Mat<S> dA = GO * V.transpose();
                        Mat<S> dS(qn, kn);
                        for (Index r = 0; r < qn; ++r) {
                          S dot = dA.row(r).dot(A.row(r));
                          dS.row(r) =
                              A.row(r).cwiseProduct((dA.row(r).array() - dot).matrix());
                        }
                        dq.block(ql, h * hd, qn, hd) += (dS * K) * scale;
                        dk.block(kl, h * hd, kn, hd) += (dS.transpose() * Q) * scale;
                      }
                    }
                  });
                });
}

// Single-head cross-attention pooling of value tokens by per-group queries.
// Group i pools keys/values rows [klo, klo+kn) with queries [qlo, qlo+qn).
// With `sink`, an implicit all-zero key/value entry joins the softmax and
// absorbs attention mass without contributing to the output.
template <typename S>
Var<S> pool_attend(Var<S> queries, Var<S> keys, Var<S> values,
                   std::vector<PoolGroup> groups, bool sink) {
  Graph<S>& g = *queries.g;
  const Index D = queries.cols();
  require(keys.cols() == D && values.cols() == D, "pool: width mismatch");
  require(keys.rows() == values.rows(), "pool: key/value row mismatch");
  const S scale = S(1) / std::sqrt(static_cast<S>(D));

  auto gr_ = std::make_shared<std::vector<PoolGroup>>(std::move(groups));
  // kv spans may be shared between groups; only parallelize the backward
  // scatter when they are pairwise disjoint.
  bool disjoint = true;
  {
    std::vector<std::pair<Index, Index>> spans;
    for (const auto& p : *gr_) spans.emplace_back(p.klo, p.klo + p.kn);
    std::sort(spans.begin(), spans.end());
    for (size_t i = 1; i < spans.size(); ++i)
      if (spans[i].first < spans[i - 1].second) {
        disjoint = false;
        break;
      }
  }

  auto attn = std::make_shared<std::vector<Mat<S>>>(gr_->size());
  Mat<S> out(queries.rows(), D);
  const Mat<S>& qv = queries.value();
  const Mat<S>& kv = keys.value();
  const Mat<S>& vv = values.value();

  parallel_for(static_cast<Index>(gr_->size()), [&](Index lo, Index hi) {
    for (Index gi = lo; gi < hi; ++gi) {
      const PoolGroup& p = (*gr_)[static_cast<size_t>(gi)];
      require(p.kn > 0 || sink, "pool: empty key set without sink");
      auto Q = qv.middleRows(p.qlo, p.qn);
      auto K = kv.middleRows(p.klo, p.kn);
      auto V = vv.middleRows(p.klo, p.kn);
      Mat<S> s(p.qn, p.kn + (sink ? 1 : 0));
      s.leftCols(p.kn) = (Q * K.transpose()) * scale;
      if (sink) s.col(p.kn).setZero();
      detail::softmax_rows_inplace<S>(s);
      out.middleRows(p.qlo, p.qn) = s.leftCols(p.kn) * V;
      (*attn)[static_cast<size_t>(gi)] = std::move(s);
    }
  });

  int iq = queries.id, ik = keys.id, iv = values.id;
  return g.push(
      std::move(out), detail::any_needs(g, {iq, ik, iv}),
      [iq, ik, iv, gr_, attn, scale, sink, disjoint](Graph<S>& gr, int self) {
        const Mat<S>& gy = gr.upstream(self);
        const Mat<S>& qv = gr.value(iq);
        const Mat<S>& kv = gr.value(ik);
        const Mat<S>& vv = gr.value(iv);
        Mat<S>& dq = gr.grad_buffer(iq);
        Mat<S>& dk = gr.grad_buffer(ik);
        Mat<S>& dv = gr.grad_buffer(iv);
        auto work = [&](Index lo, Index hi) {
          for (Index gi = lo; gi < hi; ++gi) {
            const PoolGroup& p = (*gr_)[static_cast<size_t>(gi)];
            const Mat<S>& A = (*attn)[static_cast<size_t>(gi)];
            auto Q = qv.middleRows(p.qlo, p.qn);
            auto K = kv.middleRows(p.klo, p.kn);
            auto V = vv.middleRows(p.klo, p.kn);
            auto GO = gy.middleRows(p.qlo, p.qn);
            dv.middleRows(p.klo, p.kn) += A.leftCols(p.kn).transpose() * GO;
            Mat<S> dA = Mat<S>::Zero(p.qn, A.cols());
            dA.leftCols(p.kn) = GO * V.transpose();
            Mat<S> dS(p.qn, A.cols());
            for (Index r = 0; r < p.qn; ++r) {
              S dot = dA.row(r).dot(A.row(r));
              dS.row(r) = A.row(r).cwiseProduct((dA.row(r).array() - dot).matrix());
            }
            dq.middleRows(p.qlo, p.qn) += (dS.leftCols(p.kn) * K) * scale;
            dk.middleRows(p.klo, p.kn) += (dS.leftCols(p.kn).transpose() * Q) * scale;
          }
        };
        if (disjoint)
          parallel_for(static_cast<Index>(gr_->size()), work);
        else
          work(0, static_cast<Index>(gr_->size()));
      });
}

// Plain (non-taped) pooling returning the attention weights; used for
// heatmaps and closed-form checks. Output attn is [qn x (kn + sink)].
template <typename S>
void pool_attend_plain(const Mat<S>& queries, const Mat<S>& keys,
                       const Mat<S>& values, bool sink, Mat<S>& pooled,
                       Mat<S>& attn) {
  const Index D = queries.cols();
  require(keys.rows() > 0 || sink, "pool: empty key set without sink");
  const S scale = S(1) / std::sqrt(static_cast<S>(D));
  attn.resize(queries.rows(), keys.rows() + (sink ? 1 : 0));
  attn.leftCols(keys.rows()) = (queries * keys.transpose()) * scale;
  if (sink) attn.col(keys.rows()).setZero();
  detail::softmax_rows_inplace<S>(attn);
  pooled = attn.leftCols(keys.rows()) * values;
}

// Mean negative log-likelihood of `targets[r]` under softmax(logits.row(r)),
// averaged over rows listed in `rows`. Softmax probabilities of the scored
// rows are retained for the backward pass.
template <typename S>
Var<S> masked_nll(Var<S> logits, std::vector<Index> targets, std::vector<Index> rows) {
  Graph<S>& g = *logits.g;
  require(!rows.empty(), "masked_nll: empty mask");
  const Mat<S>& lv = logits.value();
  auto probs = std::make_shared<Mat<S>>(static_cast<Index>(rows.size()), lv.cols());
  S total = S(0);
  for (size_t i = 0; i < rows.size(); ++i) {
    Index r = rows[i];
    require(r >= 0 && r < lv.rows(), "masked_nll: row out of range");
    require(targets[i] >= 0 && targets[i] < lv.cols(), "masked_nll: target out of range");
    S mx = lv.row(r).maxCoeff();
    Vec<S> e = (lv.row(r).array() - mx).exp();
    S z = e.sum();
    probs->row(static_cast<Index>(i)) = (e / z).transpose();
    total += -(lv(r, targets[i]) - mx - std::log(z));
  }
  Mat<S> y(1, 1);
  const S inv_n = S(1) / static_cast<S>(rows.size());
  y(0, 0) = total * inv_n;
  int il = logits.id;
  auto tp = std::make_shared<std::vector<Index>>(std::move(targets));
  auto rp = std::make_shared<std::vector<Index>>(std::move(rows));
  return g.push(std::move(y), g.needs_grad(il),
                [il, tp, rp, probs, inv_n](Graph<S>& gr, int self) {
                  S gy = gr.upstream(self)(0, 0) * inv_n;
                  Mat<S>& dl = gr.grad_buffer(il);
                  for (size_t i = 0; i < rp->size(); ++i) {
                    Index r = (*rp)[i];
                    dl.row(r) += probs->row(static_cast<Index>(i)) * gy;
                    dl(r, (*tp)[i]) -= gy;
                  }
                });
}

}  // namespace goldi::ad
