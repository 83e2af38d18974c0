#pragma once

#include <string>
#include <vector>

#include "goldi/attention_ops.hpp"
#include "goldi/autodiff.hpp"
#include "goldi/image.hpp"
#include "goldi/params.hpp"
#include "goldi/tokenizer.hpp"

namespace goldi::model {

struct ModelConfig {
  int dim = 64;  // shared embedding width (dim_v == dim_t after projection)
  int vision_layers = 2;
  int vision_heads = 4;
  int text_layers = 2;
  int text_heads = 4;
  int decoder_layers = 2;
  int decoder_heads = 4;
  int mlp_ratio = 4;
  int patch = 8;
  int image_size = 64;  // global view resolution
  int context = 32;
  int vocab = 0;
  int coord_bins = 64;
  bool attention_sink = true;
  // SigLIP-style contrastive scalars, stored as t' = log t; overridable.
  double t_init = 10.0;
  double b_init = -10.0;
  int distill_dim = 1024;  // P
  double dropout = 0.0;
  double init_std = 0.02;

  int patches_per_side() const { return image_size / patch; }
  int max_vision_tokens() const {
    return patches_per_side() * patches_per_side() + 1;  // +1 for CLS
  }
};

namespace detail {

template <typename S>
Mat<S> randn(Index r, Index c, Rng& rng, double std_dev) {
  Mat<S> m(r, c);
  for (Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<S>(rng.normal() * std_dev);
  return m;
}

template <typename S>
void add_attn(ParamStore<S>& ps, const std::string& prefix, int dim, Rng& rng,
              double sd) {
  for (const char* w : {"Wq", "Wk", "Wv", "Wo"})
    ps.add(prefix + "/" + w, randn<S>(dim, dim, rng, sd));
  for (const char* b : {"bq", "bk", "bv", "bo"})
    ps.add(prefix + "/" + b, Mat<S>::Zero(1, dim));
}

template <typename S>
void add_ln(ParamStore<S>& ps, const std::string& prefix, int dim) {
  ps.add(prefix + "/gamma", Mat<S>::Ones(1, dim));
  ps.add(prefix + "/beta", Mat<S>::Zero(1, dim));
}

template <typename S>
void add_mlp(ParamStore<S>& ps, const std::string& prefix, int dim, int hidden,
             Rng& rng, double sd) {
  ps.add(prefix + "/W1", randn<S>(dim, hidden, rng, sd));
  ps.add(prefix + "/b1", Mat<S>::Zero(1, hidden));
  ps.add(prefix + "/W2", randn<S>(hidden, dim, rng, sd));
  ps.add(prefix + "/b2", Mat<S>::Zero(1, dim));
}

}  // namespace detail

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names = {"ret", "cap", "ref",
                                                 "grd", "vqa", "sd"};
  return names;
}

// All learnable state of the student.
template <typename S>
struct ModelState {
  ModelConfig cfg;
  ParamStore<S> params;
};

template <typename S>
ModelState<S> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  require(cfg.vocab > 0, "init_model: vocab size unset");
  require(cfg.dim % cfg.vision_heads == 0 && cfg.dim % cfg.text_heads == 0 &&
              cfg.dim % cfg.decoder_heads == 0,
          "init_model: heads must divide dim");
  require(cfg.image_size % cfg.patch == 0,
          "init_model: image size not divisible by patch size");
  ModelState<S> st;
  st.cfg = cfg;
  Rng rng = rng_stream(seed, "init");
  const int dim = cfg.dim;
  const int hidden = dim * cfg.mlp_ratio;
  const double sd = cfg.init_std;
  auto& ps = st.params;

  ps.add("vision/patch_embed/W",
         detail::randn<S>(cfg.patch * cfg.patch * 3, dim, rng, sd));
  ps.add("vision/patch_embed/b", Mat<S>::Zero(1, dim));
  ps.add("vision/cls", detail::randn<S>(1, dim, rng, sd));
  ps.add("vision/pos", detail::randn<S>(cfg.max_vision_tokens(), dim, rng, sd));
  for (int l = 0; l < cfg.vision_layers; ++l) {
    std::string p = "vision/l" + std::to_string(l);
    detail::add_ln(ps, p + "/ln1", dim);
    detail::add_attn(ps, p + "/attn", dim, rng, sd);
    detail::add_ln(ps, p + "/ln2", dim);
    detail::add_mlp(ps, p + "/mlp", dim, hidden, rng, sd);
  }
  detail::add_ln(ps, "vision/ln_f", dim);

  ps.add("text/embed", detail::randn<S>(cfg.vocab, dim, rng, sd));
  ps.add("text/pos", detail::randn<S>(cfg.context, dim, rng, sd));
  for (int l = 0; l < cfg.text_layers; ++l) {
    std::string p = "text/l" + std::to_string(l);
    detail::add_ln(ps, p + "/ln1", dim);
    detail::add_attn(ps, p + "/attn", dim, rng, sd);
    detail::add_ln(ps, p + "/ln2", dim);
    detail::add_mlp(ps, p + "/mlp", dim, hidden, rng, sd);
  }
  detail::add_ln(ps, "text/ln_f", dim);
  ps.add("text/proj/W", detail::randn<S>(dim, dim, rng, sd));

  ps.add("proj/key/W", detail::randn<S>(dim, dim, rng, sd));
  ps.add("proj/key/b", Mat<S>::Zero(1, dim));
  ps.add("proj/value/W", detail::randn<S>(dim, dim, rng, sd));
  ps.add("proj/value/b", Mat<S>::Zero(1, dim));

  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string p = "dec/l" + std::to_string(l);
    detail::add_ln(ps, p + "/ln1", dim);
    detail::add_attn(ps, p + "/attn", dim, rng, sd);
    detail::add_ln(ps, p + "/lnx", dim);
    detail::add_attn(ps, p + "/xattn", dim, rng, sd);
    detail::add_ln(ps, p + "/ln2", dim);
    detail::add_mlp(ps, p + "/mlp", dim, hidden, rng, sd);
  }
  detail::add_ln(ps, "dec/ln_f", dim);
  ps.add("dec/out/W", detail::randn<S>(dim, cfg.vocab, rng, sd));
  ps.add("dec/out/b", Mat<S>::Zero(1, cfg.vocab));

  ps.add("distill/Ws", detail::randn<S>(dim, cfg.distill_dim, rng, sd));

  Mat<S> t_log(1, 1), b0(1, 1);
  t_log(0, 0) = static_cast<S>(std::log(cfg.t_init));
  b0(0, 0) = static_cast<S>(cfg.b_init);
  ps.add("contrast/t_log", t_log, /*decay=*/false);
  ps.add("contrast/b", b0, /*decay=*/false);

  for (const auto& t : task_names())
    ps.add("balance/s_" + t, Mat<S>::Zero(1, 1), /*decay=*/false);

  return st;
}

// Parameter name prefixes the teacher mirrors (vision encoder, key/value
// projections, distillation head).
inline const std::vector<std::string>& teacher_prefixes() {
  static const std::vector<std::string> p = {"vision/", "proj/key/", "proj/value/",
                                             "distill/"};
  return p;
}

// ---------------------------------------------------------------------------
// forward building blocks

namespace detail {

// Pre-LN transformer sublayers: x += Attn(LN(x)); x += MLP(LN(x)).
template <typename S>
ad::Var<S> encoder_layer(const Binding<S>& b, const std::string& p, ad::Var<S> x,
                         const ad::Blocks& blocks, int heads, bool causal,
                         Rng* drop_rng, double dropout) {
  using namespace ad;
  auto dropped = [&](Var<S> v) {
    if (drop_rng == nullptr || dropout <= 0.0) return v;
    Mat<S> mask(v.rows(), v.cols());
    const S keep = static_cast<S>(1.0 - dropout);
    for (Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = drop_rng->uniform_real() < dropout ? S(0) : S(1) / keep;
    return mul_const(v, std::move(mask));
  };

  auto h = layer_norm_rows(x, b(p + "/ln1/gamma"), b(p + "/ln1/beta"));
  auto q = add_rowvec(matmul(h, b(p + "/attn/Wq")), b(p + "/attn/bq"));
  auto k = add_rowvec(matmul(h, b(p + "/attn/Wk")), b(p + "/attn/bk"));
  auto v = add_rowvec(matmul(h, b(p + "/attn/Wv")), b(p + "/attn/bv"));
  auto attn = multihead_attention(q, k, v, blocks, blocks, heads, causal);
  auto o = add_rowvec(matmul(attn, b(p + "/attn/Wo")), b(p + "/attn/bo"));
  x = add(x, dropped(o));

  auto h2 = layer_norm_rows(x, b(p + "/ln2/gamma"), b(p + "/ln2/beta"));
  auto m = gelu(add_rowvec(matmul(h2, b(p + "/mlp/W1")), b(p + "/mlp/b1")));
  auto m2 = add_rowvec(matmul(m, b(p + "/mlp/W2")), b(p + "/mlp/b2"));
  return add(x, dropped(m2));
}

template <typename S>
Mat<S> patchify(const std::vector<const data::Image*>& images, int patch) {
  const int h = images[0]->h, w = images[0]->w;
  const int py = h / patch, px = w / patch;
  const Index n = static_cast<Index>(images.size()) * py * px;
  Mat<S> out(n, patch * patch * 3);
  Index row = 0;
  for (const auto* im : images) {
    for (int gy = 0; gy < py; ++gy)
      for (int gx = 0; gx < px; ++gx) {
        Index col = 0;
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x) {
            const float* pix = im->at(gy * patch + y, gx * patch + x);
            out(row, col++) = static_cast<S>(pix[0]);
            out(row, col++) = static_cast<S>(pix[1]);
            out(row, col++) = static_cast<S>(pix[2]);
          }
        ++row;
      }
  }
  return out;
}

}  // namespace detail

// Output of a batched vision forward: CLS rows are [B x dim] in hidden space,
// patch rows are stacked [B*N x dim].
template <typename S>
struct VisionOut {
  ad::Var<S> cls;
  ad::Var<S> patches;
  Index batch = 0;
  Index tokens = 0;  // patches per image
};

// All images in one call must share a resolution divisible by the patch size.
template <typename S>
VisionOut<S> encode_image(const Binding<S>& b, const ModelConfig& cfg,
                          const std::vector<const data::Image*>& images,
                          Rng* drop_rng = nullptr) {
  using namespace ad;
  require(!images.empty(), "encode_image: empty batch");
  const int h = images[0]->h, w = images[0]->w;
  for (const auto* im : images)
    require(im->h == h && im->w == w, "encode_image: mixed resolutions in batch");
  require(h % cfg.patch == 0 && w % cfg.patch == 0,
          "encode_image: input " + std::to_string(h) + "x" + std::to_string(w) +
              " not divisible by patch size " + std::to_string(cfg.patch));
  const Index B = static_cast<Index>(images.size());
  const Index N = static_cast<Index>((h / cfg.patch) * (w / cfg.patch));
  require(N + 1 <= cfg.max_vision_tokens(),
          "encode_image: view has more tokens than the position table");

  Graph<S>& g = *b("vision/cls").g;
  auto patches = g.constant(detail::patchify<S>(images, cfg.patch));
  auto tok = add_rowvec(matmul(patches, b("vision/patch_embed/W")),
                        b("vision/patch_embed/b"));

  // interleave CLS: each image block is [cls, p_0, ..., p_{N-1}]
  std::vector<Index> cls_idx(static_cast<size_t>(B), 0);
  auto cls_rows = gather_rows(b("vision/cls"), cls_idx);
  std::vector<Index> order;
  order.reserve(static_cast<size_t>(B * (N + 1)));
  // rows of concat(cls_rows, tok): cls i at row i, patch rows at B + i*N + j
  for (Index i = 0; i < B; ++i) {
    order.push_back(i);
    for (Index j = 0; j < N; ++j) order.push_back(B + i * N + j);
  }
  auto x = gather_rows(concat_rows<S>({cls_rows, tok}), order);

  std::vector<Index> pos_idx;
  pos_idx.reserve(order.size());
  for (Index i = 0; i < B; ++i)
    for (Index j = 0; j < N + 1; ++j) pos_idx.push_back(j);
  x = add(x, gather_rows(b("vision/pos"), pos_idx));

  Blocks blocks = Blocks::uniform(B, N + 1);
  for (int l = 0; l < cfg.vision_layers; ++l)
    x = detail::encoder_layer(b, "vision/l" + std::to_string(l), x, blocks,
                              cfg.vision_heads, false, drop_rng, cfg.dropout);
  x = layer_norm_rows(x, b("vision/ln_f/gamma"), b("vision/ln_f/beta"));

  VisionOut<S> out;
  out.batch = B;
  out.tokens = N;
  std::vector<Index> cls_sel, patch_sel;
  for (Index i = 0; i < B; ++i) {
    cls_sel.push_back(i * (N + 1));
    for (Index j = 1; j <= N; ++j) patch_sel.push_back(i * (N + 1) + j);
  }
  out.cls = gather_rows(x, cls_sel);
  out.patches = gather_rows(x, patch_sel);
  return out;
}

template <typename S>
struct TextOut {
  ad::Var<S> states;  // [sum_len x dim], post final-LN and projection
  ad::Var<S> t_eos;   // [B x dim]
  ad::Blocks blocks;
};

template <typename S>
TextOut<S> encode_text(const Binding<S>& b, const ModelConfig& cfg,
                       const std::vector<text::TokenSequence>& seqs,
                       Rng* drop_rng = nullptr, int eos_id = 1) {
  using namespace ad;
  require(!seqs.empty(), "encode_text: empty batch");
  Graph<S>& g = *b("text/embed").g;

  std::vector<Index> ids, pos_idx, eos_rows;
  Blocks blocks;
  for (const auto& seq : seqs) {
    require(seq.length() > 0 && seq.length() <= cfg.context,
            "encode_text: sequence length " + std::to_string(seq.length()) +
                " outside context " + std::to_string(cfg.context));
    int eos_count = 0;
    for (int id : seq.ids) {
      require(id >= 0 && id < cfg.vocab, "encode_text: token id out of range");
      eos_count += id == eos_id;
    }
    require(eos_count == 1 && seq.ids[static_cast<size_t>(seq.eos_pos)] == eos_id,
            "encode_text: sequence must contain exactly one EOS");
    eos_rows.push_back(blocks.total() + seq.eos_pos);
    for (int p = 0; p < seq.length(); ++p) {
      ids.push_back(seq.ids[static_cast<size_t>(p)]);
      pos_idx.push_back(p);
    }
    blocks.push(seq.length());
  }

  auto x = add(gather_rows(b("text/embed"), ids), gather_rows(b("text/pos"), pos_idx));
  for (int l = 0; l < cfg.text_layers; ++l)
    x = detail::encoder_layer(b, "text/l" + std::to_string(l), x, blocks,
                              cfg.text_heads, /*causal=*/true, drop_rng, cfg.dropout);
  x = layer_norm_rows(x, b("text/ln_f/gamma"), b("text/ln_f/beta"));
  x = matmul(x, b("text/proj/W"));

  TextOut<S> out;
  out.states = x;
  out.t_eos = gather_rows(x, eos_rows);
  out.blocks = std::move(blocks);
  return out;
}

// Key/value projections of patch tokens; v_ta is the key projection of CLS.
template <typename S>
struct ProjectedVision {
  ad::Var<S> keys;    // [B*N x dim]
  ad::Var<S> values;  // [B*N x dim]
  ad::Var<S> v_ta;    // [B x dim]
  Index batch = 0;
  Index tokens = 0;
};

template <typename S>
ProjectedVision<S> project_vision(const Binding<S>& b, const VisionOut<S>& vis) {
  using namespace ad;
  ProjectedVision<S> out;
  out.keys = add_rowvec(matmul(vis.patches, b("proj/key/W")), b("proj/key/b"));
  out.values = add_rowvec(matmul(vis.patches, b("proj/value/W")), b("proj/value/b"));
  out.v_ta = add_rowvec(matmul(vis.cls, b("proj/key/W")), b("proj/key/b"));
  out.batch = vis.batch;
  out.tokens = vis.tokens;
  return out;
}

// Plain-matrix cross-attention pooling for a single image: text query rows
// against that image's keys/values. Returns the pooled vectors and the
// attention rows ([N] or [N+1] with the sink column last).
template <typename S>
std::pair<Mat<S>, Mat<S>> cross_attention_pool(const Mat<S>& t_eos,
                                               const Mat<S>& keys,
                                               const Mat<S>& values, bool sink) {
  require(t_eos.allFinite() && keys.allFinite() && values.allFinite(),
          "cross_attention_pool: non-finite input");
  Mat<S> pooled, attn;
  ad::pool_attend_plain(t_eos, keys, values, sink, pooled, attn);
  return {pooled, attn};
}

}  // namespace goldi::model
