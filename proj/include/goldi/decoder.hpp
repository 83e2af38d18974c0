#pragma once

#include <map>
#include <string>
#include <vector>

#include "goldi/model.hpp"
#include "goldi/scene.hpp"
#include "goldi/tokenizer.hpp"

namespace goldi::train {

enum class TaskKind : int { cap = 0, ref = 1, grd = 2, vqa = 3 };
constexpr int kNumTaskKinds = 4;

inline const char* task_kind_name(TaskKind k) {
  static const char* names[] = {"cap", "ref", "grd", "vqa"};
  return names[static_cast<int>(k)];
}

struct DecoderTask {
  TaskKind kind = TaskKind::cap;
  std::string text;    // caption (cap), region phrase (grd), referred phrase (ref),
                       // question (vqa)
  std::string answer;  // vqa only
  data::PixelBox box{0, 0, 0, 0};  // grd/ref only
};

// Map a pixel coordinate in [0, size] to a bin token index in [0, bins).
inline int quantize_coord(int coord, int image_size, int bins) {
  require(coord >= 0 && coord <= image_size,
          "quantize_coord: coordinate " + std::to_string(coord) +
              " outside bins for image size " + std::to_string(image_size));
  if (coord == image_size) return bins - 1;
  return coord * bins / image_size;
}

inline std::string format_box(const data::PixelBox& b, int image_size, int bins) {
  auto q = [&](int c) { return std::to_string(quantize_coord(c, image_size, bins)); };
  return "[ " + q(b.x1) + " " + q(b.y1) + " " + q(b.x2) + " " + q(b.y2) + " ]";
}

struct FormattedTask {
  std::string prompt;  // loss-masked prefix
  std::string target;  // supervised continuation

  std::string full() const { return prompt + " " + target; }
};

inline FormattedTask format_task(const DecoderTask& task, int image_size, int bins) {
  FormattedTask f;
  switch (task.kind) {
    case TaskKind::cap:
      f.prompt = "CAP caption is";
      f.target = task.text;
      break;
    case TaskKind::grd:
      f.prompt = "OBGR " + format_box(task.box, image_size, bins) +
                 " grounded caption is";
      f.target = task.text;
      break;
    case TaskKind::ref:
      f.prompt = "REF " + task.text + " box is";
      f.target = format_box(task.box, image_size, bins);
      break;
    case TaskKind::vqa:
      f.prompt = "VQA " + task.text + " answer is";
      f.target = task.answer;
      break;
  }
  return f;
}

inline std::string format_prompt(const DecoderTask& task, int image_size, int bins) {
  return format_task(task, image_size, bins).full();
}

// One decoder training sequence: full token string plus the prompt length
// that the loss mask excludes.
struct DecoderSeq {
  TaskKind kind;
  text::TokenSequence tokens;  // prompt + target + EOS
  int prompt_len = 0;
};

inline DecoderSeq make_decoder_seq(const DecoderTask& task, int image_size, int bins,
                                   const text::Lexicon& lex) {
  FormattedTask f = format_task(task, image_size, bins);
  DecoderSeq seq;
  seq.kind = task.kind;
  seq.tokens = text::tokenize(f.full(), lex);
  seq.prompt_len = static_cast<int>(text::tokenize(f.prompt, lex).ids.size()) - 1;
  return seq;
}

// Decoder forward: causal self-attention over text-encoder states interleaved
// with cross-attention over each image's key tokens. Text block i attends to
// key rows [i*tokens, (i+1)*tokens).
template <typename S>
ad::Var<S> decoder_forward(const model::Binding<S>& b, const model::ModelConfig& cfg,
                           ad::Var<S> text_states, const ad::Blocks& text_blocks,
                           ad::Var<S> image_keys, Index tokens_per_image,
                           Rng* drop_rng = nullptr) {
  using namespace ad;
  require(image_keys.cols() == text_states.cols(),
          "decoder_forward: visual key width " + std::to_string(image_keys.cols()) +
              " != decoder width " + std::to_string(text_states.cols()));
  require(image_keys.rows() == text_blocks.count() * tokens_per_image,
          "decoder_forward: key rows do not match batch");

  Blocks kv_blocks = Blocks::uniform(text_blocks.count(), tokens_per_image);
  auto dropped = [&](Var<S> v) {
    if (drop_rng == nullptr || cfg.dropout <= 0.0) return v;
    Mat<S> mask(v.rows(), v.cols());
    const S keep = static_cast<S>(1.0 - cfg.dropout);
    for (Index i = 0; i < mask.size(); ++i)
      mask.data()[i] = drop_rng->uniform_real() < cfg.dropout ? S(0) : S(1) / keep;
    return mul_const(v, std::move(mask));
  };

  auto x = text_states;
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    std::string p = "dec/l" + std::to_string(l);
    auto h = layer_norm_rows(x, b(p + "/ln1/gamma"), b(p + "/ln1/beta"));
    auto q = add_rowvec(matmul(h, b(p + "/attn/Wq")), b(p + "/attn/bq"));
    auto k = add_rowvec(matmul(h, b(p + "/attn/Wk")), b(p + "/attn/bk"));
    auto v = add_rowvec(matmul(h, b(p + "/attn/Wv")), b(p + "/attn/bv"));
    auto self_o = multihead_attention(q, k, v, text_blocks, text_blocks,
                                      cfg.decoder_heads, /*causal=*/true);
    x = add(x, dropped(add_rowvec(matmul(self_o, b(p + "/attn/Wo")),
                                  b(p + "/attn/bo"))));

    auto hx = layer_norm_rows(x, b(p + "/lnx/gamma"), b(p + "/lnx/beta"));
    auto qx = add_rowvec(matmul(hx, b(p + "/xattn/Wq")), b(p + "/xattn/bq"));
    auto kx = add_rowvec(matmul(image_keys, b(p + "/xattn/Wk")), b(p + "/xattn/bk"));
    auto vx = add_rowvec(matmul(image_keys, b(p + "/xattn/Wv")), b(p + "/xattn/bv"));
    auto cross_o = multihead_attention(qx, kx, vx, text_blocks, kv_blocks,
                                       cfg.decoder_heads, /*causal=*/false);
    x = add(x, dropped(add_rowvec(matmul(cross_o, b(p + "/xattn/Wo")),
                                  b(p + "/xattn/bo"))));

    auto h2 = layer_norm_rows(x, b(p + "/ln2/gamma"), b(p + "/ln2/beta"));
    auto m = gelu(add_rowvec(matmul(h2, b(p + "/mlp/W1")), b(p + "/mlp/b1")));
    x = add(x, dropped(add_rowvec(matmul(m, b(p + "/mlp/W2")), b(p + "/mlp/b2"))));
  }
  x = layer_norm_rows(x, b("dec/ln_f/gamma"), b("dec/ln_f/beta"));
  return add_rowvec(matmul(x, b("dec/out/W")), b("dec/out/b"));
}

// Mean NLL over target positions, one scalar per task kind present. Position
// p scores the prediction of token p+1; prompt and padding rows are excluded.
template <typename S>
std::map<TaskKind, ad::Var<S>> decoder_nll(ad::Var<S> logits,
                                           const ad::Blocks& text_blocks,
                                           const std::vector<DecoderSeq>& seqs) {
  require(static_cast<Index>(seqs.size()) == text_blocks.count(),
          "decoder_nll: sequence count mismatch");
  std::map<TaskKind, std::vector<Index>> rows, targets;
  for (size_t i = 0; i < seqs.size(); ++i) {
    const DecoderSeq& s = seqs[i];
    const Index lo = text_blocks.lo(static_cast<Index>(i));
    const int len = s.tokens.length();
    require(s.prompt_len >= 1 && s.prompt_len < len,
            "decoder_nll: mask empty for a sequence");
    for (int p = s.prompt_len - 1; p < len - 1; ++p) {
      rows[s.kind].push_back(lo + p);
      targets[s.kind].push_back(s.tokens.ids[static_cast<size_t>(p) + 1]);
    }
  }
  std::map<TaskKind, ad::Var<S>> out;
  for (auto& [kind, r] : rows)
    out[kind] = ad::masked_nll(logits, std::move(targets[kind]), std::move(r));
  return out;
}

// Argmax decoding until EOS or max_len new tokens. The prompt is re-encoded
// each step; positions after the sampled prefix cannot influence it (causal),
// so this matches incremental decoding exactly.
template <typename S>
std::string greedy_decode(model::ParamStore<S>& params, const model::ModelConfig& cfg,
                          const text::Lexicon& lex, const std::string& prompt,
                          const Mat<S>& image_keys, int max_len) {
  std::vector<int> ids;
  {
    auto seq = text::tokenize(prompt, lex);
    ids.assign(seq.ids.begin(), seq.ids.end() - 1);  // strip EOS
  }
  require(!ids.empty(), "greedy_decode: empty prompt");
  std::vector<int> generated;
  for (int step = 0; step < max_len; ++step) {
    if (static_cast<int>(ids.size()) + 1 >= cfg.context) break;
    ad::Graph<S> g;
    model::Binding<S> b(g, params, /*trainable=*/false);
    text::TokenSequence seq;
    seq.ids = ids;
    seq.ids.push_back(lex.eos_id());
    seq.eos_pos = static_cast<int>(seq.ids.size()) - 1;
    auto txt = model::encode_text(b, cfg, {seq}, nullptr, lex.eos_id());
    auto keys = g.constant(image_keys);
    auto logits = decoder_forward(b, cfg, txt.states, txt.blocks, keys,
                                  image_keys.rows());
    // prediction from the last real token (EOS sentinel sits after it)
    Index row = static_cast<Index>(ids.size()) - 1;
    Index best = 0;
    logits.value().row(row).maxCoeff(&best);
    if (static_cast<int>(best) == lex.eos_id()) break;
    ids.push_back(static_cast<int>(best));
    generated.push_back(static_cast<int>(best));
  }
  std::string out;
  for (int id : generated) {
    if (!out.empty()) out += ' ';
    out += lex.token(id);
  }
  return out;
}

}  // namespace goldi::train
