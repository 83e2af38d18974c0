#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "goldi/trainer.hpp"

namespace goldi::train {

// Toy problem for analytic-vs-numeric gradient verification: dim 8, B=2, K=2,
// N=4 patch tokens, P=8, vocab 16. Everything random is drawn once up front,
// so each loss is a pure deterministic function of the parameters.
struct GradcheckProblem {
  model::ModelConfig cfg;
  std::vector<data::Image> originals;  // B=2, 16 px
  std::vector<data::Image> locals;     // B * n_loc, 8 px
  PairBatch pb;
  CondMap cond;
  std::vector<DecoderSeq> dec_seqs;
  int n_loc = 2;
  DistillConfig dcfg;

  static GradcheckProblem make(std::uint64_t seed) {
    GradcheckProblem p;
    p.cfg.dim = 8;
    p.cfg.vision_layers = 1;
    p.cfg.vision_heads = 2;
    p.cfg.text_layers = 1;
    p.cfg.text_heads = 2;
    p.cfg.decoder_layers = 1;
    p.cfg.decoder_heads = 2;
    p.cfg.mlp_ratio = 2;
    p.cfg.patch = 8;
    p.cfg.image_size = 16;  // N = 4
    p.cfg.context = 10;
    p.cfg.vocab = 16;
    p.cfg.coord_bins = 4;
    p.cfg.distill_dim = 8;
    p.dcfg.P = 8;

    Rng rng = rng_stream(seed, "gradcheck");
    auto image = [&](int size) {
      data::Image im;
      im.h = im.w = size;
      im.pix.resize(static_cast<size_t>(size) * size * 3);
      for (auto& px : im.pix) px = static_cast<float>(rng.uniform_real());
      return im;
    };
    p.originals = {image(16), image(16)};
    for (int i = 0; i < 2 * p.n_loc; ++i) p.locals.push_back(image(8));

    // hand-built token sequences over a 16-token vocabulary; EOS id = 1
    auto seq = [&](std::vector<int> ids) {
      text::TokenSequence s;
      s.ids = std::move(ids);
      s.ids.push_back(1);
      s.eos_pos = static_cast<int>(s.ids.size()) - 1;
      return s;
    };
    p.pb.B = 2;
    p.pb.K = 2;
    p.pb.captions = {seq({12, 13}), seq({14, 12, 15}), seq({13, 13}), seq({15, 14})};
    p.pb.neg_caption = {0, 1, 1, 0};
    p.cond = positives_cond_map(2, 2);

    // one sequence per task kind, images alternating
    auto dseq = [&](TaskKind kind, std::vector<int> ids, int prompt_len) {
      DecoderSeq d;
      d.kind = kind;
      d.tokens = seq(std::move(ids));
      d.prompt_len = prompt_len;
      return d;
    };
    p.dec_seqs = {
        dseq(TaskKind::cap, {2, 12, 13, 14}, 1),       // CAP | a b c
        dseq(TaskKind::ref, {4, 13, 6, 8, 9, 10, 7}, 3),  // REF b | [ 0 1 2 ]
        dseq(TaskKind::grd, {3, 6, 8, 9, 7, 12}, 5),   // OBGR [ 0 1 ] | a
        dseq(TaskKind::vqa, {5, 14, 15, 12}, 3),       // VQA c b | a
    };
    return p;
  }

  std::vector<const data::Image*> original_ptrs() const {
    std::vector<const data::Image*> v;
    for (const auto& im : originals) v.push_back(&im);
    return v;
  }
  std::vector<const data::Image*> local_ptrs() const {
    std::vector<const data::Image*> v;
    for (const auto& im : locals) v.push_back(&im);
    return v;
  }
};

inline const std::vector<std::string>& gradcheck_losses() {
  static const std::vector<std::string> l = {"ret", "sd",  "cap",  "ref",
                                             "grd", "vqa", "total"};
  return l;
}

// Build one named loss on a fresh graph. Teacher parameters enter as
// constants; the value path still flows through them.
inline ad::Var<double> build_gradcheck_loss(
    ad::Graph<double>& g, const model::Binding<double>& sb,
    const model::Binding<double>& tb, const TeacherState<double>& teacher,
    const GradcheckProblem& p, const std::string& which) {
  using namespace ad;
  const auto originals = p.original_ptrs();
  auto vis = model::encode_image(sb, p.cfg, originals);
  auto proj = model::project_vision(sb, vis);

  std::map<std::string, Var<double>> losses;
  bool want_total = which == "total";

  Var<double> t_eos;
  if (want_total || which == "ret" || which == "sd") {
    auto txt = model::encode_text(sb, p.cfg, p.pb.captions, nullptr, 1);
    t_eos = txt.t_eos;
  }
  if (want_total || which == "ret")
    losses["ret"] = retrieval_loss(proj.v_ta, proj.keys, proj.values, vis.tokens,
                                   t_eos, p.pb, sb("contrast/t_log"),
                                   sb("contrast/b"), p.cfg.attention_sink)
                        .total;
  if (want_total || which == "cap" || which == "ref" || which == "grd" ||
      which == "vqa") {
    std::vector<text::TokenSequence> toks;
    for (const auto& ds : p.dec_seqs) toks.push_back(ds.tokens);
    auto dtxt = model::encode_text(sb, p.cfg, toks, nullptr, 1);
    // four task sequences over two images: sequence s reads image s % 2
    std::vector<Index> key_rows;
    for (size_t s = 0; s < p.dec_seqs.size(); ++s)
      for (Index r = 0; r < vis.tokens; ++r)
        key_rows.push_back(static_cast<Index>(s % 2) * vis.tokens + r);
    auto dec_keys = gather_rows(proj.keys, std::move(key_rows));
    auto logits = decoder_forward(sb, p.cfg, dtxt.states, dtxt.blocks, dec_keys,
                                  vis.tokens);
    for (auto& [kind, nll] : decoder_nll(logits, dtxt.blocks, p.dec_seqs))
      losses[task_kind_name(kind)] = nll;
  }
  if (want_total || which == "sd") {
    auto tt = teacher_targets(tb, p.cfg, p.dcfg, originals, detach(t_eos), p.cond, 1,
                              teacher);
    auto sp = student_predictions(sb, p.cfg, p.dcfg, p.local_ptrs(), t_eos, p.cond,
                                  p.n_loc);
    losses["sd"] = sd_loss(tt.p_ta, tt.p_tc, sp.p_ta, sp.p_tc, 2, 1, p.n_loc);
  }

  if (want_total) return total_loss(sb, losses, {}, 0).total;
  return losses.at(which);
}

struct GradcheckEntry {
  std::string loss;
  std::string group;
  double max_rel_err = 0.0;
  bool ok = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool teacher_analytic_zero = false;   // no gradient path into the teacher
  bool teacher_numeric_nonzero = false; // but L_sd really depends on it
  double tolerance = 1e-4;
  double seconds = 0.0;

  bool all_ok() const {
    for (const auto& e : entries)
      if (!e.ok) return false;
    return teacher_analytic_zero && teacher_numeric_nonzero;
  }
};

inline std::string param_group(const std::string& name) {
  return name.substr(0, name.find('/'));
}

// Central finite differences (h = 1e-5) against one taped backward pass, per
// loss and per parameter group. Coordinates are swept in parallel over
// per-thread copies of the parameter store.
inline GradcheckReport run_gradcheck(const std::string& selector,
                                     std::uint64_t seed = 0, double h = 1e-5,
                                     double tol = 1e-4) {
  auto t0 = std::chrono::steady_clock::now();
  GradcheckProblem p = GradcheckProblem::make(seed);
  auto st = model::init_model<double>(p.cfg, seed);
  TeacherState<double> teacher = init_teacher(st, p.cfg.distill_dim);
  // desynchronize the teacher so targets differ from student outputs
  {
    Rng rng = rng_stream(seed, "teacher-jitter");
    for (auto& prm : teacher.params.all())
      for (Index i = 0; i < prm.value.size(); ++i)
        prm.value.data()[i] += 0.05 * rng.normal();
  }

  std::vector<std::string> wanted;
  if (selector == "all")
    wanted = gradcheck_losses();
  else
    wanted = {selector};

  GradcheckReport report;
  report.tolerance = tol;

  for (const std::string& loss_name : wanted) {
    // analytic pass
    ad::Graph<double> g;
    model::Binding<double> sb(g, st.params, true);
    model::Binding<double> tb(g, teacher.params, false);
    auto root = build_gradcheck_loss(g, sb, tb, teacher, p, loss_name);
    g.backward(root);
    auto analytic = sb.gradients(g);

    std::map<std::string, double> group_err;
    // flatten coordinates: (param index, offset)
    std::vector<std::pair<size_t, Index>> coords;
    for (size_t pi = 0; pi < st.params.count(); ++pi) {
      const auto& prm = st.params.all()[pi];
      for (Index off = 0; off < prm.value.size(); ++off) coords.emplace_back(pi, off);
    }

    std::vector<double> errs(coords.size(), 0.0);
    const Index n = static_cast<Index>(coords.size());
    parallel_for(
        n,
        [&](Index lo, Index hi) {
          // thread-local copies keep perturbations isolated
          auto params_copy = st.params;
          auto eval = [&]() {
            ad::Graph<double> g2;
            model::Binding<double> sb2(g2, params_copy, true);
            model::Binding<double> tb2(g2, teacher.params, false);
            return build_gradcheck_loss(g2, sb2, tb2, teacher, p, loss_name)
                .scalar();
          };
          for (Index c = lo; c < hi; ++c) {
            auto [pi, off] = coords[static_cast<size_t>(c)];
            auto& prm = params_copy.all()[pi];
            double orig = prm.value.data()[off];
            prm.value.data()[off] = orig + h;
            double fp = eval();
            prm.value.data()[off] = orig - h;
            double fm = eval();
            prm.value.data()[off] = orig;
            double num = (fp - fm) / (2 * h);
            double ana = analytic.at(prm.name).data()[off];
            errs[static_cast<size_t>(c)] =
                std::abs(num - ana) / std::max({1.0, std::abs(num), std::abs(ana)});
          }
        },
        /*min_grain=*/256);

    for (size_t c = 0; c < coords.size(); ++c) {
      const auto& prm = st.params.all()[coords[c].first];
      double& slot = group_err[param_group(prm.name)];
      slot = std::max(slot, errs[c]);
    }
    for (const auto& [group, err] : group_err)
      report.entries.push_back(GradcheckEntry{loss_name, group, err, err < tol});
  }

  // Teacher group under L_sd: the analytic gradient is identically zero by
  // construction (teacher parameters bind as constants); verify the loss
  // still depends on the teacher by numeric probes.
  {
    report.teacher_analytic_zero = true;  // constants own no gradient buffers
    auto eval_sd = [&]() {
      ad::Graph<double> g2;
      model::Binding<double> sb2(g2, st.params, true);
      model::Binding<double> tb2(g2, teacher.params, false);
      return build_gradcheck_loss(g2, sb2, tb2, teacher, p, "sd").scalar();
    };
    double base = eval_sd();
    Rng rng = rng_stream(seed, "teacher-probe");
    for (int probe = 0; probe < 8 && !report.teacher_numeric_nonzero; ++probe) {
      auto& prm =
          teacher.params.all()[rng.uniform(teacher.params.count())];
      Index off = static_cast<Index>(rng.uniform(
          static_cast<std::uint64_t>(prm.value.size())));
      double orig = prm.value.data()[off];
      prm.value.data()[off] = orig + 1e-3;
      double moved = eval_sd();
      prm.value.data()[off] = orig;
      if (std::abs(moved - base) > 1e-12) report.teacher_numeric_nonzero = true;
    }
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace goldi::train
