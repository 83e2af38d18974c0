#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "goldi/balance.hpp"
#include "goldi/contrastive.hpp"
#include "goldi/dataset.hpp"
#include "goldi/decoder.hpp"
#include "goldi/distill.hpp"
#include "goldi/model.hpp"

namespace goldi::train {

struct TrainConfig {
  int batch = 64;
  int epochs = 30;
  double lr = 3e-4;
  double weight_decay = 0.02;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  int warmup = 200;
  std::string schedule = "cosine";  // cosine | constant
  double clip_norm = 0.0;           // 0 disables the global max-norm clip
  std::uint64_t seed = 0;
  bool f64 = false;
  int K = 8;  // positive captions per image
  ViewConfig views;
  DistillConfig distill;
  std::map<std::string, double> multipliers;  // static per-task weights
  std::set<std::string> tasks = {"ret", "cap", "ref", "grd", "vqa", "sd"};

  bool task_enabled(const std::string& t) const { return tasks.count(t) != 0; }
  bool decoder_enabled() const {
    return task_enabled("cap") || task_enabled("ref") || task_enabled("grd") ||
           task_enabled("vqa");
  }
};

// Linear warmup to `lr`, then cosine decay to zero at total_steps.
inline double lr_at(long long step, const TrainConfig& cfg, long long total_steps) {
  require(step >= 0, "lr_at: negative step");
  if (cfg.warmup > 0 && step < cfg.warmup)
    return cfg.lr * static_cast<double>(step) / cfg.warmup;
  if (cfg.schedule != "cosine" || total_steps <= cfg.warmup) return cfg.lr;
  double progress = static_cast<double>(step - cfg.warmup) /
                    static_cast<double>(total_steps - cfg.warmup);
  progress = std::min(progress, 1.0);
  return cfg.lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

// Decoupled AdamW over trainable parameters in store order; bias-like
// parameters (decay=false) skip the weight decay term.
template <typename S>
void adamw_step(model::ParamStore<S>& ps,
                std::unordered_map<std::string, Mat<S>>& grads,
                const TrainConfig& cfg, long long t_one_based, double lr) {
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : ps.all()) {
      if (!p.trainable) continue;
      sq += static_cast<double>(grads.at(p.name).squaredNorm());
    }
    double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) {
      S scale = static_cast<S>(cfg.clip_norm / norm);
      for (const auto& p : ps.all())
        if (p.trainable) grads.at(p.name) *= scale;
    }
  }
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S eps = static_cast<S>(cfg.adam_eps);
  const S bc1 = S(1) - std::pow(b1, static_cast<S>(t_one_based));
  const S bc2 = S(1) - std::pow(b2, static_cast<S>(t_one_based));
  for (auto& p : ps.all()) {
    if (!p.trainable) continue;
    const Mat<S>& g = grads.at(p.name);
    if (p.adam_m.size() == 0) {
      p.adam_m = Mat<S>::Zero(p.value.rows(), p.value.cols());
      p.adam_v = p.adam_m;
    }
    p.adam_m = b1 * p.adam_m + (S(1) - b1) * g;
    p.adam_v = b2 * p.adam_v + (S(1) - b2) * g.cwiseProduct(g);
    Mat<S> update = ((p.adam_m / bc1).array() /
                     ((p.adam_v / bc2).array().sqrt() + eps))
                        .matrix();
    if (p.decay && cfg.weight_decay > 0.0)
      update += static_cast<S>(cfg.weight_decay) * p.value;
    p.value -= static_cast<S>(lr) * update;
  }
}

template <typename S>
struct TrainState {
  model::ModelState<S> student;
  TeacherState<S> teacher;
  long long step = 0;
};

struct StepStats {
  TaskLossReport report;
  double teacher_entropy_ta = 0.0;
  double teacher_entropy_tc = 0.0;
  double lr = 0.0;
};

// One decoder task per image per step, round-robin over kinds so every task
// contributes at equal record cost.
inline DecoderTask pick_decoder_task(const data::Record& rec, long long step, int i,
                                     std::uint64_t seed) {
  TaskKind kind = static_cast<TaskKind>((step + i) % kNumTaskKinds);
  Rng rng = rng_stream(seed, "task", static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(i));
  const auto& ann = rec.ann;
  DecoderTask task;
  task.kind = kind;
  // scenes can lack objects; fall back to captioning
  if ((kind == TaskKind::ref || kind == TaskKind::grd) && ann.referring.empty())
    task.kind = TaskKind::cap;
  switch (task.kind) {
    case TaskKind::cap:
      task.text = ann.captions_short[rng.uniform(ann.captions_short.size())];
      break;
    case TaskKind::ref:
    case TaskKind::grd: {
      const auto& ref = ann.referring[rng.uniform(ann.referring.size())];
      task.text = ref.phrase;
      task.box = ref.box;
      break;
    }
    case TaskKind::vqa: {
      const auto& qa = ann.qa[rng.uniform(ann.qa.size())];
      task.text = qa.question;
      task.answer = qa.answer;
      break;
    }
  }
  return task;
}

// End-to-end training driver over an in-memory corpus.
template <typename S>
class Trainer {
 public:
  Trainer(const data::Corpus& corpus, const model::ModelConfig& mcfg,
          const TrainConfig& tcfg)
      : corpus_(&corpus), tcfg_(tcfg), lex_(text::default_lexicon()) {
    require(static_cast<int>(corpus.records.size()) >= tcfg.batch,
            "trainer: corpus smaller than one batch");
    state_.student = model::init_model<S>(mcfg, tcfg.seed);
    state_.teacher = init_teacher(state_.student, mcfg.distill_dim);
    decode_images();
  }

  // Resume path: adopt externally loaded state.
  Trainer(const data::Corpus& corpus, model::ModelState<S> student,
          TeacherState<S> teacher, long long step, const TrainConfig& tcfg)
      : corpus_(&corpus), tcfg_(tcfg), lex_(text::default_lexicon()) {
    state_.student = std::move(student);
    state_.teacher = std::move(teacher);
    state_.step = step;
    decode_images();
  }

  long long steps_per_epoch() const {
    return static_cast<long long>(corpus_->records.size()) / tcfg_.batch;
  }
  long long total_steps() const { return steps_per_epoch() * tcfg_.epochs; }

  TrainState<S>& state() { return state_; }
  const model::ModelConfig& model_config() const { return state_.student.cfg; }

  std::vector<int> batch_indices(long long step) const {
    const long long spe = steps_per_epoch();
    const long long epoch = step / spe;
    const int n = static_cast<int>(corpus_->records.size());
    std::vector<int> perm(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
    Rng rng = rng_stream(tcfg_.seed, "order", static_cast<std::uint64_t>(epoch));
    for (int i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<size_t>(i)],
                perm[rng.uniform(static_cast<std::uint64_t>(i + 1))]);
    long long at = (step % spe) * tcfg_.batch;
    return std::vector<int>(perm.begin() + at, perm.begin() + at + tcfg_.batch);
  }

  StepStats step() {
    const long long s = state_.step;
    StepStats stats = run_step(batch_indices(s), s, /*apply_update=*/true);
    ++state_.step;
    return stats;
  }

  // Forward + backward + update for one batch. With apply_update=false this
  // only reports losses (used by lr=0-style probes in tests).
  StepStats run_step(const std::vector<int>& batch, long long s, bool apply_update) {
    using namespace ad;
    const model::ModelConfig& mcfg = state_.student.cfg;
    const TrainConfig& cfg = tcfg_;
    const int B = static_cast<int>(batch.size());

    // Listing order: the teacher used in step s is the student as of the
    // start of step s under m_sd = 0.
    if (cfg.task_enabled("sd"))
      ema_update(state_.teacher, state_.student.params,
                 static_cast<S>(cfg.distill.m_sd));

    // ---- batch assembly (all randomness keyed on (seed, step)) ----
    std::vector<const data::AnnotationSet*> anns;
    std::vector<const data::Image*> originals;
    for (int idx : batch) {
      anns.push_back(&corpus_->records[static_cast<size_t>(idx)].ann);
      originals.push_back(&images_[static_cast<size_t>(idx)]);
    }
    PairBatch pb = build_pair_batch(anns, cfg.K, mcfg.context, lex_, cfg.seed,
                                    static_cast<std::uint64_t>(s));

    std::vector<Views> views;
    std::vector<const data::Image*> globals, locals;
    if (cfg.task_enabled("sd")) {
      views.reserve(static_cast<size_t>(B));
      for (int i = 0; i < B; ++i) {
        Rng rng = rng_stream(cfg.seed, "views", static_cast<std::uint64_t>(s),
                             static_cast<std::uint64_t>(i));
        views.push_back(make_views(*originals[static_cast<size_t>(i)], cfg.views, rng));
      }
      for (const auto& v : views) {
        for (const auto& im : v.globals) globals.push_back(&im);
        for (const auto& im : v.locals) locals.push_back(&im);
      }
    }

    std::vector<DecoderSeq> dec_seqs;
    if (cfg.decoder_enabled()) {
      for (int i = 0; i < B; ++i) {
        DecoderTask task = pick_decoder_task(
            corpus_->records[static_cast<size_t>(batch[static_cast<size_t>(i)])], s,
            i, cfg.seed);
        dec_seqs.push_back(
            make_decoder_seq(task, mcfg.image_size, mcfg.coord_bins, lex_));
      }
    }

    // ---- forward ----
    Graph<S> g;
    model::Binding<S> sb(g, state_.student.params, /*trainable=*/true);
    std::map<std::string, Var<S>> losses;

    auto vis = model::encode_image(sb, mcfg, originals, drop_rng(s));
    auto proj = model::project_vision(sb, vis);

    Var<S> t_eos;
    if (cfg.task_enabled("ret") || cfg.task_enabled("sd")) {
      auto txt = model::encode_text(sb, mcfg, pb.captions, drop_rng(s), lex_.eos_id());
      t_eos = txt.t_eos;
    }

    if (cfg.task_enabled("ret")) {
      auto ret = retrieval_loss(proj.v_ta, proj.keys, proj.values, vis.tokens, t_eos,
                                pb, sb("contrast/t_log"), sb("contrast/b"),
                                mcfg.attention_sink);
      losses["ret"] = ret.total;
    }

    if (cfg.decoder_enabled()) {
      std::vector<text::TokenSequence> toks;
      for (const auto& ds : dec_seqs) toks.push_back(ds.tokens);
      auto dtxt = model::encode_text(sb, mcfg, toks, drop_rng(s), lex_.eos_id());
      auto logits = decoder_forward(sb, mcfg, dtxt.states, dtxt.blocks, proj.keys,
                                    vis.tokens, drop_rng(s));
      for (auto& [kind, nll] : decoder_nll(logits, dtxt.blocks, dec_seqs)) {
        std::string name = task_kind_name(kind);
        if (cfg.task_enabled(name)) losses[name] = nll;
      }
    }

    StepStats stats;
    Mat<S> y_ta_mean, y_tc_mean;
    if (cfg.task_enabled("sd")) {
      model::Binding<S> tb(g, state_.teacher.params, /*trainable=*/false);
      CondMap cond = cfg.distill.condition_on_negatives
                         ? with_negatives_cond_map(B, cfg.K, pb.neg_caption)
                         : positives_cond_map(B, cfg.K);
      auto tt = teacher_targets(tb, mcfg, cfg.distill, globals, detach(t_eos), cond,
                                cfg.views.n_glob, state_.teacher);
      auto sp = student_predictions(sb, mcfg, cfg.distill, locals, t_eos, cond,
                                    cfg.views.n_loc, drop_rng(s));
      losses["sd"] = sd_loss(tt.p_ta, tt.p_tc, sp.p_ta, sp.p_tc, B, cfg.views.n_glob,
                             cfg.views.n_loc);
      y_ta_mean = tt.y_ta.value().colwise().mean();
      y_tc_mean = tt.y_tc.value().colwise().mean();
      stats.teacher_entropy_ta =
          static_cast<double>(mean_row_entropy(Mat<S>(tt.p_ta.value())));
      stats.teacher_entropy_tc =
          static_cast<double>(mean_row_entropy(Mat<S>(tt.p_tc.value())));
    }

    auto balance = total_loss(sb, losses, cfg.multipliers, s);
    if (!std::isfinite(balance.report.total)) {
      std::ostringstream os;
      os << "train_step: non-finite total at step " << s << ";";
      for (const auto& name : model::task_names()) {
        const auto& e = balance.report.tasks[static_cast<size_t>(
            TaskLossReport::task_index(name))];
        if (e.present) os << " " << name << "=" << e.loss;
      }
      fail(os.str());
    }
    stats.report = balance.report;
    stats.lr = lr_at(s, cfg, total_steps());

    if (apply_update) {
      g.backward(balance.total);
      auto grads = sb.gradients(g);
      adamw_step(state_.student.params, grads, cfg, s + 1, stats.lr);
      if (cfg.task_enabled("sd")) {
        center_update(state_.teacher.c_ta, y_ta_mean,
                      static_cast<S>(cfg.distill.m_c));
        center_update(state_.teacher.c_tc, y_tc_mean,
                      static_cast<S>(cfg.distill.m_c));
      }
    }
    return stats;
  }

  // Run to completion, streaming one coefficients row per step.
  void run(std::ostream* coeff_csv,
           const std::function<void(long long, const StepStats&)>& callback = {}) {
    if (coeff_csv != nullptr && state_.step == 0) write_coefficients_header(*coeff_csv);
    while (state_.step < total_steps()) {
      StepStats stats = step();
      if (coeff_csv != nullptr) log_coefficients(stats.report, *coeff_csv);
      if (callback) callback(state_.step - 1, stats);
    }
  }

 private:
  void decode_images() {
    images_.resize(corpus_->records.size());
    parallel_for(static_cast<Index>(corpus_->records.size()), [&](Index lo, Index hi) {
      for (Index i = lo; i < hi; ++i) {
        const auto& r = corpus_->records[static_cast<size_t>(i)];
        require(!r.rgb.empty(), "trainer: record " + std::to_string(r.id) +
                                    " has no image data");
        images_[static_cast<size_t>(i)] =
            data::from_u8(r.rgb, corpus_->manifest.image_size,
                          corpus_->manifest.image_size);
      }
    });
  }

  Rng* drop_rng(long long s) {
    if (state_.student.cfg.dropout <= 0.0) return nullptr;
    drop_rng_ = rng_stream(tcfg_.seed, "dropout", static_cast<std::uint64_t>(s));
    return &drop_rng_;
  }

  const data::Corpus* corpus_;
  TrainConfig tcfg_;
  text::Lexicon lex_;
  TrainState<S> state_;
  std::vector<data::Image> images_;
  Rng drop_rng_{0};
};

// ---------------------------------------------------------------------------
// config (de)serialization

inline nlohmann::json model_config_json(const model::ModelConfig& m) {
  nlohmann::json j;
  j["dim"] = m.dim;
  j["vision_layers"] = m.vision_layers;
  j["vision_heads"] = m.vision_heads;
  j["text_layers"] = m.text_layers;
  j["text_heads"] = m.text_heads;
  j["decoder_layers"] = m.decoder_layers;
  j["decoder_heads"] = m.decoder_heads;
  j["mlp_ratio"] = m.mlp_ratio;
  j["patch"] = m.patch;
  j["image_size"] = m.image_size;
  j["context"] = m.context;
  j["vocab"] = m.vocab;
  j["coord_bins"] = m.coord_bins;
  j["attention_sink"] = m.attention_sink;
  j["t_init"] = m.t_init;
  j["b_init"] = m.b_init;
  j["distill_dim"] = m.distill_dim;
  j["dropout"] = m.dropout;
  j["init_std"] = m.init_std;
  return j;
}

inline model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig m;
  m.dim = j.at("dim").get<int>();
  m.vision_layers = j.at("vision_layers").get<int>();
  m.vision_heads = j.at("vision_heads").get<int>();
  m.text_layers = j.at("text_layers").get<int>();
  m.text_heads = j.at("text_heads").get<int>();
  m.decoder_layers = j.at("decoder_layers").get<int>();
  m.decoder_heads = j.at("decoder_heads").get<int>();
  m.mlp_ratio = j.at("mlp_ratio").get<int>();
  m.patch = j.at("patch").get<int>();
  m.image_size = j.at("image_size").get<int>();
  m.context = j.at("context").get<int>();
  m.vocab = j.at("vocab").get<int>();
  m.coord_bins = j.at("coord_bins").get<int>();
  m.attention_sink = j.at("attention_sink").get<bool>();
  m.t_init = j.at("t_init").get<double>();
  m.b_init = j.at("b_init").get<double>();
  m.distill_dim = j.at("distill_dim").get<int>();
  m.dropout = j.at("dropout").get<double>();
  m.init_std = j.at("init_std").get<double>();
  return m;
}


// Canonical embedded-config payload for checkpoints.
inline std::string checkpoint_config_json(const model::ModelConfig& m) {
  nlohmann::json j;
  j["model"] = model_config_json(m);
  return j.dump();
}

// ---------------------------------------------------------------------------
// checkpoints

constexpr std::uint32_t kCheckpointMagic = 0x474b5031;  // "GKP1"
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
void save_checkpoint(const std::string& path, const TrainState<S>& state,
                     const std::string& config_json, bool wide) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail("save_checkpoint: cannot open '" + path + "' for writing");
  model::detail::write_pod<std::uint32_t>(os, kCheckpointMagic);
  model::detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  model::detail::write_pod<std::uint8_t>(os, wide ? 1 : 0);
  model::detail::write_pod<std::int64_t>(os, state.step);
  model::detail::write_pod<std::uint64_t>(os, hash_str(config_json));
  model::detail::write_string(os, config_json);
  model::write_store(os, state.student.params, wide, /*with_optimizer=*/true);
  model::write_store(os, state.teacher.params, wide, /*with_optimizer=*/false);
  model::ParamStore<S> extras;
  extras.add("teacher/c_ta", state.teacher.c_ta);
  extras.add("teacher/c_tc", state.teacher.c_tc);
  model::write_store(os, extras, wide, false);
  if (!os) fail("save_checkpoint: write failed for '" + path + "'");
}

template <typename S>
TrainState<S> load_checkpoint(const std::string& path, std::string* config_json_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail("load_checkpoint: cannot open '" + path + "'");
  auto magic = model::detail::read_pod<std::uint32_t>(is);
  require(magic == kCheckpointMagic, "load_checkpoint: not a checkpoint: " + path);
  auto version = model::detail::read_pod<std::uint32_t>(is);
  require(version == kCheckpointVersion,
          "load_checkpoint: unsupported version " + std::to_string(version) +
              " in " + path);
  bool wide = model::detail::read_pod<std::uint8_t>(is) != 0;
  TrainState<S> state;
  state.step = model::detail::read_pod<std::int64_t>(is);
  auto stored_hash = model::detail::read_pod<std::uint64_t>(is);
  std::string config_json = model::detail::read_string(is);
  require(hash_str(config_json) == stored_hash,
          "load_checkpoint: config hash mismatch in " + path);
  if (config_json_out != nullptr) *config_json_out = config_json;
  {
    nlohmann::json j = nlohmann::json::parse(config_json, nullptr, false);
    require(!j.is_discarded() && j.contains("model"),
            "load_checkpoint: malformed embedded config in " + path);
    state.student.cfg = model_config_from_json(j.at("model"));
  }
  state.student.params = model::read_store<S>(is, wide);
  state.teacher.params = model::read_store<S>(is, wide);
  auto extras = model::read_store<S>(is, wide);
  state.teacher.c_ta = extras.at("teacher/c_ta").value;
  state.teacher.c_tc = extras.at("teacher/c_tc").value;
  return state;
}

// The exported inference model: student encoders + pooling projections only.
// Teacher, decoder, distillation head and loss scalars are dropped.
template <typename S>
TrainState<S> export_inference_state(const TrainState<S>& state) {
  TrainState<S> out;
  out.student.cfg = state.student.cfg;
  out.student.params =
      state.student.params.clone_subset({"vision/", "text/", "proj/"});
  out.teacher.c_ta = Mat<S>::Zero(1, 1);
  out.teacher.c_tc = Mat<S>::Zero(1, 1);
  out.step = state.step;
  return out;
}

}  // namespace goldi::train
