#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "goldi/dataset.hpp"
#include "goldi/decoder.hpp"
#include "goldi/model.hpp"

namespace goldi::eval {

// Frozen embeddings of an eval corpus: text-agnostic image vectors plus the
// per-image key/value stores needed to recompute text-conditioned vectors on
// the fly for every (caption, image) pair.
template <typename S>
struct RetrievalIndex {
  Mat<S> v_ta;                        // [n x dim], raw (not normalized)
  std::vector<Mat<S>> keys, values;   // per image, [N x dim]
  Mat<S> t_eos;                       // [m x dim], raw
  std::vector<int> truth;             // caption row -> image index
  std::vector<std::string> captions;  // caption row -> query string
  bool has_patches = true;
  bool sink = true;

  int images() const { return static_cast<int>(v_ta.rows()); }
  int queries() const { return static_cast<int>(t_eos.rows()); }
};

namespace detail {

template <typename S>
Mat<S> l2n(const Mat<S>& m) {
  Mat<S> out = m;
  for (Index i = 0; i < out.rows(); ++i) {
    S n = std::max(out.row(i).norm(), static_cast<S>(1e-12));
    out.row(i) /= n;
  }
  return out;
}

}  // namespace detail

// Batched forward over images; chunked to bound graph memory.
template <typename S>
void encode_eval_images(model::ModelState<S>& st,
                        const std::vector<data::Image>& images, Mat<S>& v_ta,
                        std::vector<Mat<S>>& keys, std::vector<Mat<S>>& values,
                        int chunk = 32) {
  const int n = static_cast<int>(images.size());
  v_ta.resize(n, st.cfg.dim);
  keys.assign(static_cast<size_t>(n), {});
  values.assign(static_cast<size_t>(n), {});
  for (int lo = 0; lo < n; lo += chunk) {
    int hi = std::min(n, lo + chunk);
    ad::Graph<S> g;
    model::Binding<S> b(g, st.params, /*trainable=*/false);
    std::vector<const data::Image*> ptrs;
    for (int i = lo; i < hi; ++i) ptrs.push_back(&images[static_cast<size_t>(i)]);
    auto vis = model::encode_image(b, st.cfg, ptrs);
    auto proj = model::project_vision(b, vis);
    for (int i = lo; i < hi; ++i) {
      v_ta.row(i) = proj.v_ta.value().row(i - lo);
      keys[static_cast<size_t>(i)] =
          proj.keys.value().middleRows((i - lo) * vis.tokens, vis.tokens);
      values[static_cast<size_t>(i)] =
          proj.values.value().middleRows((i - lo) * vis.tokens, vis.tokens);
    }
  }
}

template <typename S>
Mat<S> encode_eval_texts(model::ModelState<S>& st, const text::Lexicon& lex,
                         const std::vector<std::string>& texts, int chunk = 64) {
  const int m = static_cast<int>(texts.size());
  Mat<S> t_eos(m, st.cfg.dim);
  for (int lo = 0; lo < m; lo += chunk) {
    int hi = std::min(m, lo + chunk);
    ad::Graph<S> g;
    model::Binding<S> b(g, st.params, false);
    std::vector<text::TokenSequence> seqs;
    for (int i = lo; i < hi; ++i)
      seqs.push_back(text::tokenize(texts[static_cast<size_t>(i)], lex));
    auto txt = model::encode_text(b, st.cfg, seqs, nullptr, lex.eos_id());
    t_eos.middleRows(lo, hi - lo) = txt.t_eos.value();
  }
  return t_eos;
}

// Index over an eval corpus: queries are one or more caption strings per
// image, as selected by `captions_per_image` from the long/short caption sets.
template <typename S>
RetrievalIndex<S> build_retrieval_index(model::ModelState<S>& st,
                                        const data::Corpus& corpus,
                                        const text::Lexicon& lex, bool sink,
                                        bool long_captions = true,
                                        int captions_per_image = 1) {
  RetrievalIndex<S> index;
  index.sink = sink;
  std::vector<data::Image> images;
  for (const auto& r : corpus.records)
    images.push_back(
        data::from_u8(r.rgb, corpus.manifest.image_size, corpus.manifest.image_size));
  encode_eval_images(st, images, index.v_ta, index.keys, index.values);
  for (size_t i = 0; i < corpus.records.size(); ++i) {
    const auto& caps = long_captions ? corpus.records[i].ann.captions_long
                                     : corpus.records[i].ann.captions_short;
    for (int k = 0; k < captions_per_image; ++k) {
      index.captions.push_back(caps[static_cast<size_t>(k) % caps.size()]);
      index.truth.push_back(static_cast<int>(i));
    }
  }
  index.t_eos = encode_eval_texts(st, lex, index.captions);
  return index;
}

// Similarity matrix [queries x images]. ta mode scores cosine(t, v_ta); tc
// mode recomputes the text-conditioned embedding of every (caption, image)
// pair through cross-attention pooling.
template <typename S>
Mat<S> score_matrix(const RetrievalIndex<S>& index, const std::string& mode) {
  Mat<S> t_hat = detail::l2n(index.t_eos);
  if (mode == "ta") {
    Mat<S> v_hat = detail::l2n(index.v_ta);
    return t_hat * v_hat.transpose();
  }
  require(mode == "tc", "score_matrix: unknown mode '" + mode + "'");
  require(index.has_patches && !index.keys.empty(),
          "score_matrix: tc mode requires stored patch tokens");
  const int m = index.queries(), n = index.images();
  Mat<S> scores(m, n);
  parallel_for(n, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      Mat<S> pooled, attn;
      ad::pool_attend_plain(index.t_eos, index.keys[static_cast<size_t>(i)],
                            index.values[static_cast<size_t>(i)], index.sink,
                            pooled, attn);
      Mat<S> p_hat = detail::l2n(pooled);
      for (Index j = 0; j < m; ++j) scores(j, i) = p_hat.row(j).dot(t_hat.row(j));
    }
  });
  return scores;
}

// Rank of the best true item for one score row; ties resolve by index order.
template <typename S>
int best_truth_rank(const Eigen::Ref<const Eigen::RowVector<S, Eigen::Dynamic>>& row,
                    const std::vector<int>& truths) {
  int best = static_cast<int>(row.cols());
  for (int t : truths) {
    int rank = 0;
    for (Index c = 0; c < row.cols(); ++c)
      if (row(c) > row(t) || (row(c) == row(t) && c < t)) ++rank;
    best = std::min(best, rank);
  }
  return best;
}

// Fraction of queries whose true item ranks within the top K.
template <typename S>
double recall_at_k(const Mat<S>& scores, const std::vector<std::vector<int>>& truth,
                   int K) {
  require(K >= 1 && K <= scores.cols(), "recall_at_k: K out of range");
  require(static_cast<Index>(truth.size()) == scores.rows(),
          "recall_at_k: truth size mismatch");
  double hits = 0;
  for (Index q = 0; q < scores.rows(); ++q)
    hits += best_truth_rank<S>(scores.row(q), truth[static_cast<size_t>(q)]) < K;
  return hits / static_cast<double>(scores.rows());
}

inline std::vector<std::vector<int>> single_truth(const std::vector<int>& t) {
  std::vector<std::vector<int>> out;
  for (int v : t) out.push_back({v});
  return out;
}

// ---------------------------------------------------------------------------
// question-based retrieval

struct RetrievalQuestion {
  std::string text;
  std::string category;
  std::vector<int> relevant;  // exactly two record indices
  std::vector<int> pool;      // relevant + distractors, pool_size total
};

// Build questions with exactly two relevant images per query; relevance is
// decided by re-answering the question from each record's SceneSpec.
inline std::vector<RetrievalQuestion> build_question_set(
    const data::Corpus& corpus, int per_category, std::uint64_t seed,
    int pool_size = 16) {
  std::vector<data::SceneSpec> scenes;
  for (const auto& r : corpus.records)
    scenes.push_back(data::record_scene(r, corpus.manifest.gen));

  // candidate (question, answer) pairs per category, deduplicated
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> cands;
  std::set<std::string> seen;
  for (const auto& r : corpus.records)
    for (const auto& qa : r.ann.qa)
      if (seen.insert(qa.question + "|" + qa.answer).second)
        cands[qa.category].emplace_back(qa.question, qa.answer);

  std::vector<RetrievalQuestion> out;
  const int n = static_cast<int>(corpus.records.size());
  for (auto& [category, pairs] : cands) {
    Rng rng = rng_stream(seed, "questions-" + category);
    // deterministic order, then shuffled
    for (size_t i = pairs.size(); i > 1; --i)
      std::swap(pairs[i - 1], pairs[rng.uniform(i)]);
    int made = 0;
    for (const auto& [q, a] : pairs) {
      if (made >= per_category) break;
      std::vector<int> rel, irr;
      for (int i = 0; i < n; ++i) {
        if (data::answer_question(scenes[static_cast<size_t>(i)], q) == a)
          rel.push_back(i);
        else
          irr.push_back(i);
      }
      if (rel.size() < 2 || static_cast<int>(irr.size()) < pool_size - 2) continue;
      RetrievalQuestion rq;
      rq.text = q;
      rq.category = category;
      for (int pick = 0; pick < 2; ++pick) {
        size_t at = rng.uniform(rel.size());
        rq.relevant.push_back(rel[at]);
        rel.erase(rel.begin() + static_cast<std::ptrdiff_t>(at));
      }
      rq.pool = rq.relevant;
      for (int pick = 0; pick < pool_size - 2; ++pick) {
        size_t at = rng.uniform(irr.size());
        rq.pool.push_back(irr[at]);
        irr.erase(irr.begin() + static_cast<std::ptrdiff_t>(at));
      }
      out.push_back(std::move(rq));
      ++made;
    }
  }
  return out;
}

// R@2 with fractional credit (0.5 per relevant image retrieved) by default;
// binary all-or-nothing by flag. Categories with no questions are omitted.
template <typename S>
std::map<std::string, double> question_retrieval(
    model::ModelState<S>& st, const text::Lexicon& lex,
    const RetrievalIndex<S>& index, const std::vector<RetrievalQuestion>& questions,
    const std::string& mode, bool fractional = true,
    std::ostream* warn = nullptr) {
  std::map<std::string, double> sums;
  std::map<std::string, int> counts;
  std::vector<std::string> texts;
  for (const auto& q : questions) texts.push_back(q.text);
  Mat<S> q_eos = encode_eval_texts(st, lex, texts);

  for (size_t qi = 0; qi < questions.size(); ++qi) {
    const auto& q = questions[qi];
    const int pool_n = static_cast<int>(q.pool.size());
    Mat<S> q_hat = detail::l2n(Mat<S>(q_eos.middleRows(static_cast<Index>(qi), 1)));
    Vec<S> scores(pool_n);
    for (int c = 0; c < pool_n; ++c) {
      int img = q.pool[static_cast<size_t>(c)];
      if (mode == "tc") {
        Mat<S> pooled, attn;
        ad::pool_attend_plain(Mat<S>(q_eos.middleRows(static_cast<Index>(qi), 1)),
                              index.keys[static_cast<size_t>(img)],
                              index.values[static_cast<size_t>(img)], index.sink,
                              pooled, attn);
        scores(c) = detail::l2n(pooled).row(0).dot(q_hat.row(0));
      } else {
        Mat<S> v = detail::l2n(Mat<S>(index.v_ta.middleRows(img, 1)));
        scores(c) = v.row(0).dot(q_hat.row(0));
      }
    }
    // top-2 by score, stable on index
    std::vector<int> order(static_cast<size_t>(pool_n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return scores(a) != scores(b) ? scores(a) > scores(b) : a < b;
    });
    int got = 0;
    for (int r = 0; r < 2 && r < pool_n; ++r) {
      int img = q.pool[static_cast<size_t>(order[static_cast<size_t>(r)])];
      got += std::count(q.relevant.begin(), q.relevant.end(), img) > 0;
    }
    double credit = fractional ? 0.5 * got : (got == 2 ? 1.0 : 0.0);
    sums[q.category] += credit;
    counts[q.category] += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [cat, total] : sums) out[cat] = total / counts.at(cat);
  static const char* all_cats[] = {"count", "color", "attribute", "shape",
                                   "relation"};
  for (const char* c : all_cats)
    if (out.count(c) == 0 && warn != nullptr)
      *warn << "question_retrieval: no questions for category '" << c
            << "', omitted\n";
  return out;
}

// Exact random-baseline expectation for fractional R@2 credit with 2 relevant
// images in a pool of `pool_size`, by hypergeometric enumeration.
inline double random_r2_expectation(int pool_size, bool fractional = true) {
  double total_pairs = static_cast<double>(pool_size) * (pool_size - 1) / 2.0;
  int d = pool_size - 2;  // distractors
  double both = 1.0;      // C(2,2) * C(d,0)
  double one = 2.0 * d;   // C(2,1) * C(d,1)
  if (fractional) return (1.0 * both + 0.5 * one) / total_pairs;
  return both / total_pairs;
}

// ---------------------------------------------------------------------------
// attention heatmaps

// Pooling attention of one (image, text) pair reshaped to the patch grid.
// The sink is always disabled for dense outputs; rows sum to one.
template <typename S>
Mat<S> attention_grid(model::ModelState<S>& st, const text::Lexicon& lex,
                      const data::Image& image, const std::string& query) {
  std::vector<data::Image> one{image};
  Mat<S> v_ta;
  std::vector<Mat<S>> keys, values;
  encode_eval_images(st, one, v_ta, keys, values);
  Mat<S> t_eos = encode_eval_texts(st, lex, {query});
  Mat<S> pooled, attn;
  ad::pool_attend_plain(t_eos, keys[0], values[0], /*sink=*/false, pooled, attn);
  const int side = image.w / st.cfg.patch;
  Mat<S> grid(side, side);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) grid(r, c) = attn(0, r * side + c);
  return grid;
}

// Attention mass inside a pixel box, with partial patches weighted by the
// covered area fraction.
template <typename S>
double box_attention_mass(const Mat<S>& grid, const data::PixelBox& box, int patch) {
  double mass = 0;
  for (Index r = 0; r < grid.rows(); ++r)
    for (Index c = 0; c < grid.cols(); ++c) {
      double px1 = static_cast<double>(c) * patch, py1 = static_cast<double>(r) * patch;
      double ox = std::max(0.0, std::min<double>(px1 + patch, box.x2) -
                                    std::max<double>(px1, box.x1));
      double oy = std::max(0.0, std::min<double>(py1 + patch, box.y2) -
                                    std::max<double>(py1, box.y1));
      mass += static_cast<double>(grid(r, c)) * (ox * oy) / (patch * patch);
    }
  return mass;
}

// Fraction of (object, referring phrase) pairs whose attention mass inside
// the object box exceeds the box's area fraction of the image.
template <typename S>
double box_mass_statistic(model::ModelState<S>& st, const text::Lexicon& lex,
                          const data::Corpus& corpus, int max_pairs = 256) {
  int wins = 0, total = 0;
  const int size = corpus.manifest.image_size;
  for (const auto& rec : corpus.records) {
    if (total >= max_pairs) break;
    data::Image im = data::from_u8(rec.rgb, size, size);
    for (const auto& ref : rec.ann.referring) {
      if (total >= max_pairs) break;
      Mat<S> grid = attention_grid(st, lex, im, ref.phrase);
      double mass = box_attention_mass(grid, ref.box, st.cfg.patch);
      double area_frac = static_cast<double>(ref.box.x2 - ref.box.x1) *
                         (ref.box.y2 - ref.box.y1) / (size * size);
      wins += mass > area_frac;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(wins) / total;
}

// Overlay: attention (nearest-upsampled, normalized to [0,1]) modulates a red
// tint over the base image.
template <typename S>
void write_heatmap_overlay(const std::string& path, const data::Image& image,
                           const Mat<S>& grid) {
  double lo = static_cast<double>(grid.minCoeff());
  double hi = static_cast<double>(grid.maxCoeff());
  double span = hi - lo < 1e-12 ? 1.0 : hi - lo;
  data::Image out = image;
  const int patch = image.h / static_cast<int>(grid.rows());
  for (int y = 0; y < image.h; ++y)
    for (int x = 0; x < image.w; ++x) {
      double a = (static_cast<double>(grid(y / patch, x / patch)) - lo) / span;
      float* p = out.at(y, x);
      p[0] = static_cast<float>(p[0] * 0.4 + 0.6 * a);
      p[1] = static_cast<float>(p[1] * 0.4);
      p[2] = static_cast<float>(p[2] * 0.4);
    }
  data::write_png(path, out.w, out.h, data::to_u8(out));
}

// ---------------------------------------------------------------------------
// zero-shot classification

template <typename S>
double zeroshot_classify(model::ModelState<S>& st, const text::Lexicon& lex,
                         const std::vector<data::Image>& images,
                         const std::vector<int>& labels,
                         const std::vector<std::string>& class_names,
                         const std::string& tmpl = "a photo of a {}") {
  require(!class_names.empty(), "zeroshot_classify: no classes");
  require(images.size() == labels.size(), "zeroshot_classify: label mismatch");
  std::vector<std::string> prompts;
  for (const auto& c : class_names) {
    std::string p = tmpl;
    auto at = p.find("{}");
    require(at != std::string::npos, "zeroshot_classify: template needs {}");
    prompts.push_back(p.replace(at, 2, c));
  }
  Mat<S> class_eos = detail::l2n(encode_eval_texts(st, lex, prompts));
  Mat<S> v_ta;
  std::vector<Mat<S>> keys, values;
  encode_eval_images(st, images, v_ta, keys, values);
  Mat<S> v_hat = detail::l2n(v_ta);
  Mat<S> sims = v_hat * class_eos.transpose();  // [n x classes]
  int correct = 0;
  for (Index i = 0; i < sims.rows(); ++i) {
    Index best = 0;
    sims.row(i).maxCoeff(&best);
    correct += static_cast<int>(best) == labels[static_cast<size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

// ---------------------------------------------------------------------------
// metrics report

struct MetricsReport {
  // benchmark -> mode -> metric -> value
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> values;
  double runtime_seconds = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json j = values;
    j["runtime_seconds"] = runtime_seconds;
    return j;
  }
};

}  // namespace goldi::eval
