#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "goldi/scene.hpp"
#include "goldi/trainer.hpp"

namespace goldi::cli {

// Everything a run can configure, with the desk-scale defaults.
struct RunSettings {
  model::ModelConfig model;
  train::TrainConfig train;
  data::GeneratorConfig gen;
  int gen_count = 2048;
  int eval_captions_per_image = 1;
  bool eval_long_captions = true;
  int eval_heatmaps = 8;
  int eval_samples = 16;
  int questions_per_category = 20;
  int question_pool = 16;
  bool r2_fractional = true;

  RunSettings() {
    // training-friendly contrastive bias; the SigLIP-convention constants
    // stay available via the `model.b_init` / `model.t_init` keys
    model.b_init = 0.0;
  }
};

// Flat `key = value` lines; '#' starts a comment.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      if (a == std::string::npos) return std::string();
      size_t b = s.find_last_not_of(" \t\r");
      return s.substr(a, b - a + 1);
    };
    std::string t = trim(line);
    if (t.empty()) continue;
    auto eq = t.find('=');
    require(eq != std::string::npos,
            origin + ":" + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

inline std::vector<std::pair<std::string, std::string>> load_config_file(
    const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("config file not found: '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config_text(os.str(), path);
}

inline void apply_setting(RunSettings& s, const std::string& key,
                          const std::string& value) {
  auto as_int = [&] { return std::stoi(value); };
  auto as_double = [&] { return std::stod(value); };
  auto as_bool = [&] {
    if (value == "true" || value == "1" || value == "on") return true;
    if (value == "false" || value == "0" || value == "off") return false;
    fail("setting '" + key + "': expected a boolean, got '" + value + "'");
  };

  // model
  if (key == "model.dim") s.model.dim = as_int();
  else if (key == "model.vision_layers") s.model.vision_layers = as_int();
  else if (key == "model.vision_heads") s.model.vision_heads = as_int();
  else if (key == "model.text_layers") s.model.text_layers = as_int();
  else if (key == "model.text_heads") s.model.text_heads = as_int();
  else if (key == "model.decoder_layers") s.model.decoder_layers = as_int();
  else if (key == "model.decoder_heads") s.model.decoder_heads = as_int();
  else if (key == "model.mlp_ratio") s.model.mlp_ratio = as_int();
  else if (key == "model.patch") s.model.patch = as_int();
  else if (key == "model.image_size") s.model.image_size = as_int();
  else if (key == "model.context") s.model.context = as_int();
  else if (key == "model.coord_bins") s.model.coord_bins = as_int();
  else if (key == "model.attention_sink") s.model.attention_sink = as_bool();
  else if (key == "model.t_init") s.model.t_init = as_double();
  else if (key == "model.b_init") s.model.b_init = as_double();
  else if (key == "model.distill_dim") s.model.distill_dim = as_int();
  else if (key == "model.dropout") s.model.dropout = as_double();
  else if (key == "model.init_std") s.model.init_std = as_double();
  // train
  else if (key == "train.batch") s.train.batch = as_int();
  else if (key == "train.epochs") s.train.epochs = as_int();
  else if (key == "train.lr") s.train.lr = as_double();
  else if (key == "train.weight_decay") s.train.weight_decay = as_double();
  else if (key == "train.beta1") s.train.beta1 = as_double();
  else if (key == "train.beta2") s.train.beta2 = as_double();
  else if (key == "train.adam_eps") s.train.adam_eps = as_double();
  else if (key == "train.warmup") s.train.warmup = as_int();
  else if (key == "train.schedule") s.train.schedule = value;
  else if (key == "train.clip_norm") s.train.clip_norm = as_double();
  else if (key == "train.K") s.train.K = as_int();
  else if (key == "train.tasks") {
    s.train.tasks.clear();
    std::istringstream ts(value);
    std::string t;
    while (std::getline(ts, t, ','))
      if (!t.empty()) s.train.tasks.insert(t);
  } else if (key.rfind("train.multiplier.", 0) == 0) {
    s.train.multipliers[key.substr(17)] = as_double();
  }
  // views
  else if (key == "views.n_glob") s.train.views.n_glob = as_int();
  else if (key == "views.n_loc") s.train.views.n_loc = as_int();
  else if (key == "views.glob_scale_lo") s.train.views.glob_scale_lo = as_double();
  else if (key == "views.glob_scale_hi") s.train.views.glob_scale_hi = as_double();
  else if (key == "views.loc_scale_lo") s.train.views.loc_scale_lo = as_double();
  else if (key == "views.loc_scale_hi") s.train.views.loc_scale_hi = as_double();
  else if (key == "views.glob_size") s.train.views.glob_size = as_int();
  else if (key == "views.loc_size") s.train.views.loc_size = as_int();
  // distillation
  else if (key == "distill.tau_s") s.train.distill.tau_s = as_double();
  else if (key == "distill.tau_t") s.train.distill.tau_t = as_double();
  else if (key == "distill.m_sd") s.train.distill.m_sd = as_double();
  else if (key == "distill.m_c") s.train.distill.m_c = as_double();
  else if (key == "distill.centering") s.train.distill.centering = as_bool();
  else if (key == "distill.condition_on_negatives")
    s.train.distill.condition_on_negatives = as_bool();
  // generator
  else if (key == "gen.grid_rows") s.gen.grid_rows = as_int();
  else if (key == "gen.grid_cols") s.gen.grid_cols = as_int();
  else if (key == "gen.min_objects") s.gen.min_objects = as_int();
  else if (key == "gen.max_objects") s.gen.max_objects = as_int();
  else if (key == "gen.count") s.gen_count = as_int();
  // eval
  else if (key == "eval.captions_per_image") s.eval_captions_per_image = as_int();
  else if (key == "eval.long_captions") s.eval_long_captions = as_bool();
  else if (key == "eval.heatmaps") s.eval_heatmaps = as_int();
  else if (key == "eval.samples") s.eval_samples = as_int();
  else if (key == "eval.questions_per_category") s.questions_per_category = as_int();
  else if (key == "eval.question_pool") s.question_pool = as_int();
  else if (key == "eval.r2_fractional") s.r2_fractional = as_bool();
  else
    fail("unknown setting '" + key + "'");

  // keep dependent fields coherent
  s.gen.image_size = s.model.image_size;
  s.train.views.glob_size = std::min(s.train.views.glob_size, s.model.image_size);
  s.train.distill.P = s.model.distill_dim;
}

inline void finalize(RunSettings& s) {
  s.model.vocab = static_cast<int>(text::default_lexicon_tokens().size());
  s.gen.image_size = s.model.image_size;
  s.gen.patch_align = s.model.patch;
  s.train.distill.P = s.model.distill_dim;
}

inline nlohmann::json settings_json(const RunSettings& s) {
  nlohmann::json j;
  j["model"] = train::model_config_json(s.model);
  nlohmann::json t;
  t["batch"] = s.train.batch;
  t["epochs"] = s.train.epochs;
  t["lr"] = s.train.lr;
  t["weight_decay"] = s.train.weight_decay;
  t["beta1"] = s.train.beta1;
  t["beta2"] = s.train.beta2;
  t["adam_eps"] = s.train.adam_eps;
  t["warmup"] = s.train.warmup;
  t["schedule"] = s.train.schedule;
  t["clip_norm"] = s.train.clip_norm;
  t["K"] = s.train.K;
  t["tasks"] = std::vector<std::string>(s.train.tasks.begin(), s.train.tasks.end());
  t["multipliers"] = s.train.multipliers;
  t["views"] = {{"n_glob", s.train.views.n_glob},
                {"n_loc", s.train.views.n_loc},
                {"glob_scale", {s.train.views.glob_scale_lo, s.train.views.glob_scale_hi}},
                {"loc_scale", {s.train.views.loc_scale_lo, s.train.views.loc_scale_hi}},
                {"glob_size", s.train.views.glob_size},
                {"loc_size", s.train.views.loc_size}};
  t["distill"] = {{"P", s.train.distill.P},
                  {"tau_s", s.train.distill.tau_s},
                  {"tau_t", s.train.distill.tau_t},
                  {"m_sd", s.train.distill.m_sd},
                  {"m_c", s.train.distill.m_c},
                  {"centering", s.train.distill.centering},
                  {"condition_on_negatives", s.train.distill.condition_on_negatives}};
  j["train"] = t;
  j["gen"] = {{"grid_rows", s.gen.grid_rows},
              {"grid_cols", s.gen.grid_cols},
              {"min_objects", s.gen.min_objects},
              {"max_objects", s.gen.max_objects},
              {"count", s.gen_count}};
  j["eval"] = {{"captions_per_image", s.eval_captions_per_image},
               {"long_captions", s.eval_long_captions},
               {"heatmaps", s.eval_heatmaps},
               {"samples", s.eval_samples},
               {"questions_per_category", s.questions_per_category},
               {"question_pool", s.question_pool},
               {"r2_fractional", s.r2_fractional}};
  return j;
}

}  // namespace goldi::cli
