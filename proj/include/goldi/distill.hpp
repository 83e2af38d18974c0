#pragma once

#include <utility>
#include <vector>

#include "goldi/image.hpp"
#include "goldi/model.hpp"

namespace goldi::train {

struct ViewConfig {
  int n_glob = 1;
  int n_loc = 6;
  double glob_scale_lo = 1.0, glob_scale_hi = 1.0;  // crop area fractions
  double loc_scale_lo = 0.15, loc_scale_hi = 0.5;
  int glob_size = 64;
  int loc_size = 32;
};

struct DistillConfig {
  int P = 1024;  // projection dimension
  double tau_s = 0.1;
  double tau_t = 0.04;
  bool condition_on_negatives = false;  // K' = positives only by default
  double m_sd = 0.996;
  double m_c = 0.9;
  bool centering = true;  // disabled only for the collapse negative control
};

struct Views {
  std::vector<data::Image> globals;
  std::vector<data::Image> locals;
};

namespace detail {

inline data::Image random_crop(const data::Image& im, double lo, double hi,
                               int out_size, Rng& rng) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    double scale = rng.uniform_real(lo, hi);
    double aspect = rng.uniform_real(0.75, 4.0 / 3.0);
    double area = scale * im.w * im.h;
    // keep the sampled area exactly; fold the aspect back into bounds
    double cw = std::min(std::sqrt(area * aspect), static_cast<double>(im.w));
    double ch = area / cw;
    if (ch > im.h) {
      ch = im.h;
      cw = area / ch;
    }
    if (cw < 1.0 || ch < 1.0) continue;  // degenerate crop, resample
    double x0 = rng.uniform_real(0.0, im.w - cw);
    double y0 = rng.uniform_real(0.0, im.h - ch);
    return data::crop_resize(im, static_cast<float>(x0), static_cast<float>(y0),
                             static_cast<float>(cw), static_cast<float>(ch),
                             out_size, out_size);
  }
  fail("make_views: no valid crop after 100 attempts");
}

}  // namespace detail

inline Views make_views(const data::Image& im, const ViewConfig& cfg, Rng& rng) {
  require(cfg.glob_scale_lo > 0 && cfg.glob_scale_hi <= 1.0 &&
              cfg.glob_scale_lo <= cfg.glob_scale_hi,
          "make_views: global scale range outside (0, 1]");
  require(cfg.loc_scale_lo > 0 && cfg.loc_scale_hi <= 1.0 &&
              cfg.loc_scale_lo <= cfg.loc_scale_hi,
          "make_views: local scale range outside (0, 1]");
  require(cfg.n_glob >= 1 && cfg.n_loc >= 1, "make_views: need at least one view");
  Views v;
  for (int i = 0; i < cfg.n_glob; ++i)
    v.globals.push_back(detail::random_crop(im, cfg.glob_scale_lo, cfg.glob_scale_hi,
                                            cfg.glob_size, rng));
  for (int i = 0; i < cfg.n_loc; ++i)
    v.locals.push_back(detail::random_crop(im, cfg.loc_scale_lo, cfg.loc_scale_hi,
                                           cfg.loc_size, rng));
  return v;
}

// EMA mirror of the distillation-relevant student parameters plus the running
// centers. distill/Ws inside `params` plays the role of the teacher head.
template <typename S>
struct TeacherState {
  model::ParamStore<S> params;
  Mat<S> c_ta, c_tc;  // [1 x P]
};

template <typename S>
TeacherState<S> init_teacher(const model::ModelState<S>& student, int P) {
  TeacherState<S> t;
  t.params = student.params.clone_subset(model::teacher_prefixes());
  for (auto& p : t.params.all()) p.trainable = false;
  t.c_ta = Mat<S>::Zero(1, P);
  t.c_tc = Mat<S>::Zero(1, P);
  return t;
}

// theta_T <- m * theta_T + (1 - m) * theta_S.
template <typename S>
void ema_update(TeacherState<S>& teacher, const model::ParamStore<S>& student, S m) {
  for (auto& p : teacher.params.all()) {
    const auto& src = student.at(p.name).value;
    require(src.rows() == p.value.rows() && src.cols() == p.value.cols(),
            "ema_update: shape mismatch for " + p.name);
    p.value = m * p.value + (S(1) - m) * src;
  }
}

// c <- m_c * c + (1 - m_c) * batch_mean; `batch_mean` is a [1 x P] row.
template <typename S>
void center_update(Mat<S>& center, const Mat<S>& batch_mean, S m_c) {
  require(center.rows() == 1 && batch_mean.rows() == 1 &&
              center.cols() == batch_mean.cols(),
          "center_update: shape mismatch");
  center = m_c * center + (S(1) - m_c) * batch_mean;
}

// Rows of t_eos conditioning each image (the K' caption set).
using CondMap = std::vector<std::vector<Index>>;

inline CondMap positives_cond_map(int B, int K) {
  CondMap m(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i)
    for (int k = 0; k < K; ++k)
      m[static_cast<size_t>(i)].push_back(static_cast<Index>(i) * K + k);
  return m;
}

// Positives plus the downsampled negative caption of every other image.
inline CondMap with_negatives_cond_map(int B, int K,
                                       const std::vector<int>& neg_caption) {
  CondMap m = positives_cond_map(B, K);
  for (int i = 0; i < B; ++i)
    for (int j = 0; j < B; ++j) {
      if (j == i) continue;
      m[static_cast<size_t>(i)].push_back(
          static_cast<Index>(j) * K + neg_caption[static_cast<size_t>(i) * B + j]);
    }
  return m;
}

// Pool each view's tokens against its image's conditioning captions and
// average over the K' captions: one row per view.
template <typename S>
ad::Var<S> caption_mean_vtc(ad::Var<S> t_eos, ad::Var<S> keys, ad::Var<S> values,
                            Index tokens, const CondMap& cond, int views_per_image,
                            bool sink) {
  using namespace ad;
  const int B = static_cast<int>(cond.size());
  std::vector<Index> query_rows;
  std::vector<PoolGroup> groups;
  Blocks mean_blocks;
  for (int i = 0; i < B; ++i) {
    const auto& rows = cond[static_cast<size_t>(i)];
    for (int v = 0; v < views_per_image; ++v) {
      Index qlo = static_cast<Index>(query_rows.size());
      for (Index r : rows) query_rows.push_back(r);
      Index view_index = static_cast<Index>(i) * views_per_image + v;
      groups.push_back(PoolGroup{qlo, static_cast<Index>(rows.size()),
                                 view_index * tokens, tokens});
      mean_blocks.push(static_cast<Index>(rows.size()));
    }
  }
  auto queries = gather_rows(t_eos, std::move(query_rows));
  auto pooled = pool_attend(queries, keys, values, std::move(groups), sink);
  return block_row_mean(pooled, std::move(mean_blocks));
}

// Softmax over the projection dimension of (y - c) / tau; c may be empty for
// the uncentered student branch.
template <typename S>
ad::Var<S> distill_probs(ad::Var<S> y, const Mat<S>* center, S tau) {
  using namespace ad;
  auto z = y;
  if (center != nullptr) {
    Graph<S>& g = *y.g;
    z = sub(z, gather_rows(g.constant(*center),
                           std::vector<Index>(static_cast<size_t>(y.rows()), 0)));
  }
  return softmax_rows(smul(z, S(1) / tau));
}

template <typename S>
struct TeacherTargets {
  ad::Var<S> p_ta, p_tc;  // [B*n_glob x P] probability rows
  ad::Var<S> y_ta, y_tc;  // projected features before centering (center update)
};

// Teacher forward over global views. The binding must be a frozen (constant)
// binding of TeacherState::params; conditioning captions enter detached, so
// no gradient can reach the teacher or flow back through its queries.
template <typename S>
TeacherTargets<S> teacher_targets(const model::Binding<S>& teacher_b,
                                  const model::ModelConfig& cfg,
                                  const DistillConfig& dcfg,
                                  const std::vector<const data::Image*>& globals,
                                  ad::Var<S> t_eos_detached, const CondMap& cond,
                                  int n_glob, const TeacherState<S>& teacher) {
  using namespace ad;
  auto vis = model::encode_image(teacher_b, cfg, globals);
  auto proj = model::project_vision(teacher_b, vis);
  TeacherTargets<S> out;
  out.y_ta = matmul(proj.v_ta, teacher_b("distill/Ws"));
  auto vtc = caption_mean_vtc(t_eos_detached, proj.keys, proj.values, vis.tokens,
                              cond, n_glob, cfg.attention_sink);
  out.y_tc = matmul(vtc, teacher_b("distill/Ws"));
  const Mat<S>* cta = dcfg.centering ? &teacher.c_ta : nullptr;
  const Mat<S>* ctc = dcfg.centering ? &teacher.c_tc : nullptr;
  out.p_ta = distill_probs(out.y_ta, cta, static_cast<S>(dcfg.tau_t));
  out.p_tc = distill_probs(out.y_tc, ctc, static_cast<S>(dcfg.tau_t));
  return out;
}

template <typename S>
struct StudentPredictions {
  ad::Var<S> p_ta, p_tc;  // [B*n_loc x P]
};

// Student forward over local views; gradients flow through everything.
template <typename S>
StudentPredictions<S> student_predictions(const model::Binding<S>& student_b,
                                          const model::ModelConfig& cfg,
                                          const DistillConfig& dcfg,
                                          const std::vector<const data::Image*>& locals,
                                          ad::Var<S> t_eos, const CondMap& cond,
                                          int n_loc, Rng* drop_rng = nullptr) {
  using namespace ad;
  auto vis = model::encode_image(student_b, cfg, locals, drop_rng);
  auto proj = model::project_vision(student_b, vis);
  StudentPredictions<S> out;
  auto y_ta = matmul(proj.v_ta, student_b("distill/Ws"));
  out.p_ta = distill_probs(y_ta, static_cast<const Mat<S>*>(nullptr),
                           static_cast<S>(dcfg.tau_s));
  auto vtc = caption_mean_vtc(t_eos, proj.keys, proj.values, vis.tokens, cond, n_loc,
                              cfg.attention_sink);
  auto y_tc = matmul(vtc, student_b("distill/Ws"));
  out.p_tc = distill_probs(y_tc, static_cast<const Mat<S>*>(nullptr),
                           static_cast<S>(dcfg.tau_s));
  return out;
}

// Sum over (global i, local j) pairs of H(p_T_i, p_S_j) for both branches,
// averaged over B * n_glob * n_loc pairs. Teacher rows are copied to constants
// (distillation targets carry no gradient); student probabilities are clamped
// at eps before the log.
template <typename S>
ad::Var<S> sd_loss(ad::Var<S> p_t_ta, ad::Var<S> p_t_tc, ad::Var<S> p_s_ta,
                   ad::Var<S> p_s_tc, int B, int n_glob, int n_loc,
                   S eps = S(1e-12)) {
  using namespace ad;
  require(p_t_ta.rows() == static_cast<Index>(B) * n_glob,
          "sd_loss: teacher row count mismatch");
  require(p_s_ta.rows() == static_cast<Index>(B) * n_loc,
          "sd_loss: student row count mismatch");
  // pair row maps: teacher row (b, i) against student row (b, j)
  std::vector<Index> t_rows, s_rows;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < n_glob; ++i)
      for (int j = 0; j < n_loc; ++j) {
        t_rows.push_back(static_cast<Index>(b) * n_glob + i);
        s_rows.push_back(static_cast<Index>(b) * n_loc + j);
      }
  const S inv_pairs = S(1) / static_cast<S>(B * n_glob * n_loc);

  auto branch = [&](ad::Var<S> p_t, ad::Var<S> p_s) {
    Mat<S> t_tiled(static_cast<Index>(t_rows.size()), p_t.cols());
    for (size_t r = 0; r < t_rows.size(); ++r)
      t_tiled.row(static_cast<Index>(r)) = p_t.value().row(t_rows[r]);
    auto logq = log_clamped(gather_rows(p_s, s_rows), eps);
    return smul(neg(sum_all(mul_const(logq, std::move(t_tiled)))), inv_pairs);
  };
  return add(branch(p_t_ta, p_s_ta), branch(p_t_tc, p_s_tc));
}

// Mean entropy (nats) of teacher target rows; the no-collapse sentinel.
template <typename S>
S mean_row_entropy(const Mat<S>& p) {
  S total = S(0);
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.cols(); ++j) {
      S q = p(i, j);
      if (q > S(0)) total -= q * std::log(q);
    }
  return total / static_cast<S>(p.rows());
}

}  // namespace goldi::train
