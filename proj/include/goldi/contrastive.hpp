#pragma once

#include <string>
#include <vector>

#include "goldi/annotations.hpp"
#include "goldi/attention_ops.hpp"
#include "goldi/model.hpp"
#include "goldi/tokenizer.hpp"

namespace goldi::train {

// +1 iff caption (j, k) belongs to image i.
inline int pair_label(int i, int j, int k) {
  (void)k;
  return j == i ? +1 : -1;
}

// Per-pair sigmoid loss 1 / (1 + exp(y * (t*sim - b))): ~0 for a correct
// positive at a large margin, ~1 for a confidently wrong pair, exactly 0.5 at
// zero margin. Stable in both tails.
template <typename S>
S sigmoid_pair_loss(S sim, int y, S t, S b) {
  S x = static_cast<S>(y) * (t * sim - b);
  return x >= 0 ? std::exp(-x) / (S(1) + std::exp(-x)) : S(1) / (S(1) + std::exp(x));
}

// The sentence pool: three short captions (one sentence each) plus the
// sentences of the three long captions, deduplicated.
inline std::vector<std::string> caption_sentence_pool(const data::AnnotationSet& ann) {
  std::vector<std::string> pool = ann.captions_short;
  for (const auto& cap : ann.captions_long) {
    size_t start = 0;
    while (start < cap.size()) {
      size_t dot = cap.find(" .", start);
      if (dot == std::string::npos) break;
      pool.push_back(cap.substr(start, dot - start + 2));
      start = dot + 3;  // skip " . "
    }
  }
  std::vector<std::string> out;
  for (const auto& s : pool) {
    bool dup = false;
    for (const auto& t : out) dup = dup || t == s;
    if (!dup && !s.empty()) out.push_back(s);
  }
  return out;
}

// K positives per image, each a concatenation of 1-3 distinct pool sentences,
// greedily truncated so every positive tokenizes within the context length.
inline std::vector<std::string> sample_positive_captions(
    const data::AnnotationSet& ann, int K, int context, const text::Lexicon& lex,
    Rng& rng) {
  std::vector<std::string> pool = caption_sentence_pool(ann);
  require(!pool.empty(), "sample_positive_captions: empty caption pool");
  std::vector<std::string> out;
  for (int k = 0; k < K; ++k) {
    int want = 1 + static_cast<int>(rng.uniform(3));
    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform(i + 1)]);
    std::string cap;
    int taken = 0;
    int tokens = 0;
    for (size_t idx : order) {
      if (taken >= want) break;
      int len = static_cast<int>(text::tokenize(pool[idx], lex).ids.size()) - 1;
      if (tokens + len + 1 > context) continue;  // reserve EOS
      cap += (cap.empty() ? "" : " ") + pool[idx];
      tokens += len;
      ++taken;
    }
    require(taken >= 1, "sample_positive_captions: no sentence fits the context");
    out.push_back(cap);
  }
  return out;
}

// Caption layout for one step: K positives per image (row-major i*K + k) and
// one downsampled conditioning caption per (anchor, negative image) pair.
struct PairBatch {
  int B = 0;
  int K = 0;
  std::vector<std::string> caption_strings;      // B*K
  std::vector<text::TokenSequence> captions;     // B*K
  std::vector<int> neg_caption;                  // B*B; entry i*B+j in [0,K)
};

inline PairBatch build_pair_batch(const std::vector<const data::AnnotationSet*>& anns,
                                  int K, int context, const text::Lexicon& lex,
                                  std::uint64_t seed, std::uint64_t step) {
  PairBatch pb;
  pb.B = static_cast<int>(anns.size());
  pb.K = K;
  for (int i = 0; i < pb.B; ++i) {
    Rng rng = rng_stream(seed, "captions", step, static_cast<std::uint64_t>(i));
    auto caps = sample_positive_captions(*anns[static_cast<size_t>(i)], K, context,
                                         lex, rng);
    for (auto& c : caps) {
      pb.captions.push_back(text::tokenize(c, lex));
      pb.caption_strings.push_back(std::move(c));
    }
  }
  pb.neg_caption.resize(static_cast<size_t>(pb.B) * pb.B, 0);
  for (int i = 0; i < pb.B; ++i) {
    Rng rng = rng_stream(seed, "negatives", step, static_cast<std::uint64_t>(i));
    for (int j = 0; j < pb.B; ++j)
      pb.neg_caption[static_cast<size_t>(i) * pb.B + j] =
          static_cast<int>(rng.uniform(static_cast<std::uint64_t>(K)));
  }
  return pb;
}

template <typename S>
struct RetrievalLoss {
  ad::Var<S> total;    // L_ret = L_ta + L_tc
  ad::Var<S> ta;       // mean over B * (B*K) pairs
  ad::Var<S> tc;       // mean over B * (K + B - 1) retained pairs
};

// Two-term sigmoid retrieval loss. v_ta: [B x dim]; keys/values: [B*N x dim];
// t_eos: [B*K x dim] in PairBatch order. The text-agnostic term scores every
// (image, caption) pair; the text-conditioned term scores all K positives
// plus one downsampled negative caption per other image.
template <typename S>
RetrievalLoss<S> retrieval_loss(ad::Var<S> v_ta, ad::Var<S> keys, ad::Var<S> values,
                                Index patch_tokens, ad::Var<S> t_eos,
                                const PairBatch& pb, ad::Var<S> t_log, ad::Var<S> bias,
                                bool sink) {
  using namespace ad;
  const int B = pb.B, K = pb.K;
  require(v_ta.rows() == B, "retrieval_loss: v_ta batch mismatch");
  require(t_eos.rows() == static_cast<Index>(B) * K,
          "retrieval_loss: caption embedding count mismatch");
  require(keys.rows() == static_cast<Index>(B) * patch_tokens,
          "retrieval_loss: key rows mismatch");
  auto t = exp_(t_log);

  auto t_hat = l2_normalize_rows(t_eos);
  auto v_hat = l2_normalize_rows(v_ta);

  // text-agnostic: one [B x B*K] similarity matrix
  auto sim_ta = matmul(v_hat, t_hat, false, true);
  Mat<S> y_ta = Mat<S>::Constant(B, static_cast<Index>(B) * K, S(-1));
  for (int i = 0; i < B; ++i)
    for (int k = 0; k < K; ++k) y_ta(i, static_cast<Index>(i) * K + k) = S(1);
  auto logits_ta = vs_add(vs_mul(sim_ta, t), neg(bias));
  auto loss_ta = mean_all(sigmoid(neg(mul_const(logits_ta, std::move(y_ta)))));

  // text-conditioned: grouped pooling, one group per anchor image
  std::vector<Index> query_rows;
  std::vector<PoolGroup> groups;
  const Index per_anchor = K + B - 1;
  Mat<S> y_tc(static_cast<Index>(B) * per_anchor, 1);
  for (int i = 0; i < B; ++i) {
    Index qlo = static_cast<Index>(query_rows.size());
    for (int k = 0; k < K; ++k) {
      query_rows.push_back(static_cast<Index>(i) * K + k);
      y_tc(qlo + k, 0) = S(1);
    }
    Index at = qlo + K;
    for (int j = 0; j < B; ++j) {
      if (j == i) continue;
      int k = pb.neg_caption[static_cast<size_t>(i) * B + j];
      require(k >= 0 && k < K, "retrieval_loss: missing conditioning caption");
      query_rows.push_back(static_cast<Index>(j) * K + k);
      y_tc(at++, 0) = S(-1);
    }
    groups.push_back(PoolGroup{qlo, per_anchor, static_cast<Index>(i) * patch_tokens,
                               patch_tokens});
  }
  auto queries = gather_rows(t_eos, query_rows);
  auto pooled = pool_attend(queries, keys, values, std::move(groups), sink);
  auto sim_tc = rowwise_dot(l2_normalize_rows(pooled),
                            gather_rows(t_hat, std::move(query_rows)));
  auto logits_tc = vs_add(vs_mul(sim_tc, t), neg(bias));
  auto loss_tc = mean_all(sigmoid(neg(mul_const(logits_tc, std::move(y_tc)))));

  RetrievalLoss<S> out;
  out.ta = loss_ta;
  out.tc = loss_tc;
  out.total = add(loss_ta, loss_tc);
  return out;
}

}  // namespace goldi::train
