// goldiclip: synthetic-scene contrastive vision-language training at desk
// scale. Subcommands: gen-data, train, eval, gradcheck, plot.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "goldi/config_file.hpp"
#include "goldi/evaluate.hpp"
#include "goldi/gradcheck.hpp"
#include "goldi/svg.hpp"
#include "goldi/trainer.hpp"

namespace fs = std::filesystem;
using namespace goldi;

namespace {

constexpr const char* kVersion = "0.1.0";

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool f64 = false;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
  cmd->add_option("--config", args.config_path, "flat key = value config file");
  if (with_out) cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--seed", args.seed, "run seed");
  cmd->add_flag("--f64", args.f64, "64-bit verification mode");
  cmd->add_flag("--deterministic", args.deterministic,
                "record deterministic mode (runs are bit-reproducible either way)");
  cmd->add_option("--override", args.overrides, "key=value settings override")
      ->take_all();
}

cli::RunSettings resolve_settings(const CommonArgs& args) {
  cli::RunSettings s;
  if (!args.config_path.empty())
    for (const auto& [k, v] : cli::load_config_file(args.config_path))
      cli::apply_setting(s, k, v);
  for (const auto& ov : args.overrides) {
    auto eq = ov.find('=');
    require(eq != std::string::npos, "--override expects key=value, got '" + ov + "'");
    cli::apply_setting(s, ov.substr(0, eq), ov.substr(eq + 1));
  }
  cli::finalize(s);
  s.train.seed = args.seed;
  s.train.f64 = args.f64;
  return s;
}

void write_run_json(const std::string& out_dir, const std::string& command,
                    const CommonArgs& args, const cli::RunSettings& s,
                    double seconds, const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["command"] = command;
  j["seed"] = args.seed;
  j["f64"] = args.f64;
  j["deterministic"] = args.deterministic;
  j["config"] = cli::settings_json(s);
  j["config_hash"] = hash_str(cli::settings_json(s).dump());
  j["versions"] = {{"goldiclip", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                 std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)}};
  j["timings"] = {{"seconds", seconds}};
  j["outputs"] = outputs;
  std::ofstream os(fs::path(out_dir) / "run.json");
  require(static_cast<bool>(os), "cannot write run.json under " + out_dir);
  os << j.dump(2) << "\n";
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail("cannot create output directory '" + dir + "': " + ec.message());
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonArgs& args, int count) {
  auto t0 = std::chrono::steady_clock::now();
  cli::RunSettings s = resolve_settings(args);
  int n = count > 0 ? count : s.gen_count;
  ensure_dir(args.out_dir);
  data::write_dataset(args.out_dir, args.seed, n, s.gen);
  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count();
  write_run_json(args.out_dir, "gen-data", args, s, dt,
                 {"images/", "annotations.jsonl", "manifest.json"});
  std::cout << "wrote " << n << " records to " << args.out_dir << " ("
            << dt << "s)\n";
  return 0;
}

template <typename S>
int train_impl(const CommonArgs& args, const cli::RunSettings& s_in,
               const std::string& data_dir, const std::string& resume) {
  auto t0 = std::chrono::steady_clock::now();
  cli::RunSettings s = s_in;
  data::Corpus corpus = data::read_dataset(data_dir);
  require(corpus.manifest.lexicon == text::default_lexicon_tokens(),
          "train: dataset lexicon does not match this build");
  s.model.image_size = corpus.manifest.image_size;
  s.train.views.glob_size = corpus.manifest.image_size;
  cli::finalize(s);

  std::unique_ptr<train::Trainer<S>> trainer;
  if (resume.empty()) {
    trainer = std::make_unique<train::Trainer<S>>(corpus, s.model, s.train);
  } else {
    auto state = train::load_checkpoint<S>(resume, nullptr);
    trainer = std::make_unique<train::Trainer<S>>(
        corpus, std::move(state.student), std::move(state.teacher), state.step,
        s.train);
  }

  ensure_dir(args.out_dir);
  std::ofstream csv(fs::path(args.out_dir) / "coefficients.csv",
                    resume.empty() ? std::ios::trunc : std::ios::app);
  require(static_cast<bool>(csv), "cannot write coefficients.csv");
  const long long total = trainer->total_steps();
  long long log_every = std::max<long long>(1, total / 20);
  trainer->run(&csv, [&](long long step, const train::StepStats& stats) {
    if (step % log_every == 0 || step + 1 == total)
      std::cout << "step " << step << "/" << total << " total=" << stats.report.total
                << " lr=" << stats.lr << "\n";
  });

  std::string ckpt = (fs::path(args.out_dir) / "checkpoint.ckpt").string();
  std::string config_json = train::checkpoint_config_json(s.model);
  train::save_checkpoint(ckpt, trainer->state(), config_json, args.f64);
  std::string exported = (fs::path(args.out_dir) / "export.ckpt").string();
  auto inference = train::export_inference_state(trainer->state());
  train::save_checkpoint(exported, inference, config_json, args.f64);

  double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                  .count();
  write_run_json(args.out_dir, "train", args, s, dt,
                 {"coefficients.csv", "checkpoint.ckpt", "export.ckpt"});
  std::cout << "trained " << total << " steps in " << dt << "s; checkpoint at "
            << ckpt << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir,
              const std::string& resume) {
  cli::RunSettings s = resolve_settings(args);
  return args.f64 ? train_impl<double>(args, s, data_dir, resume)
                  : train_impl<float>(args, s, data_dir, resume);
}

template <typename S>
int eval_impl(const CommonArgs& args, const cli::RunSettings& s_in,
              const std::string& checkpoint_path, const std::string& data_dir) {
  auto t0 = std::chrono::steady_clock::now();
  cli::RunSettings s = s_in;
  std::string config_json;
  auto state = train::load_checkpoint<S>(checkpoint_path, &config_json);
  data::Corpus corpus = data::read_dataset(data_dir);
  text::Lexicon lex = text::default_lexicon();
  s.model = state.student.cfg;
  cli::finalize(s);
  state.student.cfg.vocab = s.model.vocab;
  ensure_dir(args.out_dir);

  eval::MetricsReport report;
  auto index = eval::build_retrieval_index(state.student, corpus, lex,
                                           s.model.attention_sink,
                                           s.eval_long_captions,
                                           s.eval_captions_per_image);
  for (const std::string mode : {"tc", "ta"}) {
    Mat<S> scores = eval::score_matrix(index, mode);
    auto truth = eval::single_truth(index.truth);
    report.values["retrieval"][mode]["t2i_r1"] = eval::recall_at_k(scores, truth, 1);
    report.values["retrieval"][mode]["t2i_r5"] = eval::recall_at_k(scores, truth, 5);
    // image-to-text: transpose; truth lists every caption of the image
    Mat<S> st_scores = scores.transpose();
    std::vector<std::vector<int>> i2t(static_cast<size_t>(index.images()));
    for (size_t c = 0; c < index.truth.size(); ++c)
      i2t[static_cast<size_t>(index.truth[c])].push_back(static_cast<int>(c));
    report.values["retrieval"][mode]["i2t_r1"] = eval::recall_at_k(st_scores, i2t, 1);
    report.values["retrieval"][mode]["i2t_r5"] = eval::recall_at_k(st_scores, i2t, 5);
  }

  auto questions = eval::build_question_set(corpus, s.questions_per_category,
                                            args.seed, s.question_pool);
  for (const std::string mode : {"tc", "ta"}) {
    auto r2 = eval::question_retrieval(state.student, lex, index, questions, mode,
                                       s.r2_fractional, &std::cerr);
    for (const auto& [cat, v] : r2)
      report.values["question_retrieval"][mode][cat] = v;
  }
  report.values["question_retrieval"]["baseline"]["random"] =
      eval::random_r2_expectation(s.question_pool, s.r2_fractional);

  // shape classification over single-object scenes
  {
    data::GeneratorConfig gcfg = corpus.manifest.gen;
    gcfg.min_objects = gcfg.max_objects = 1;
    std::vector<data::Image> images;
    std::vector<int> labels;
    std::vector<std::string> classes;
    for (int sh = 0; sh < data::kNumShapes; ++sh)
      classes.push_back(data::shape_name(static_cast<data::Shape>(sh)));
    for (int i = 0; i < 128; ++i) {
      data::SceneSpec scene =
          data::gen_scene(hash_combine(args.seed, 7000 + i), gcfg);
      images.push_back(data::render_image(scene, gcfg.image_size));
      labels.push_back(static_cast<int>(scene.objects[0].shape));
    }
    report.values["classification"]["ta"]["shape_top1"] =
        eval::zeroshot_classify(state.student, lex, images, labels, classes);
  }

  // attention heatmaps (sink always off for dense outputs)
  std::string heat_dir = (fs::path(args.out_dir) / "heatmaps").string();
  ensure_dir(heat_dir);
  int emitted = 0;
  for (const auto& rec : corpus.records) {
    if (emitted >= s.eval_heatmaps) break;
    if (rec.ann.referring.empty()) continue;
    data::Image im = data::from_u8(rec.rgb, corpus.manifest.image_size,
                                   corpus.manifest.image_size);
    const auto& ref = rec.ann.referring.front();
    Mat<S> grid = eval::attention_grid(state.student, lex, im, ref.phrase);
    eval::write_heatmap_overlay(
        (fs::path(heat_dir) / (std::to_string(rec.id) + ".png")).string(), im, grid);
    ++emitted;
  }
  report.values["heatmaps"]["tc"]["box_mass_winrate"] =
      eval::box_mass_statistic(state.student, lex, corpus, 128);

  // decoded samples, when the checkpoint still carries the decoder
  std::vector<std::string> outputs{"metrics.json", "heatmaps/"};
  if (state.student.params.has("dec/out/W")) {
    std::ofstream samples(fs::path(args.out_dir) / "samples.jsonl");
    int wrote = 0;
    for (const auto& rec : corpus.records) {
      if (wrote >= s.eval_samples) break;
      data::Image im = data::from_u8(rec.rgb, corpus.manifest.image_size,
                                     corpus.manifest.image_size);
      Mat<S> v_ta;
      std::vector<Mat<S>> keys, values;
      std::vector<data::Image> one{im};
      eval::encode_eval_images(state.student, one, v_ta, keys, values);
      const auto& qa = rec.ann.qa.front();
      train::DecoderTask task{train::TaskKind::vqa, qa.question, qa.answer, {}};
      auto formatted = train::format_task(task, s.model.image_size, s.model.coord_bins);
      std::string decoded = train::greedy_decode(state.student.params, s.model, lex,
                                                 formatted.prompt, keys[0], 8);
      nlohmann::json row;
      row["id"] = rec.id;
      row["prompt"] = formatted.prompt;
      row["expected"] = formatted.target;
      row["decoded"] = decoded;
      samples << row.dump() << "\n";
      ++wrote;
    }
    outputs.push_back("samples.jsonl");
  }

  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream mos(fs::path(args.out_dir) / "metrics.json");
  mos << report.to_json().dump(2) << "\n";
  require(static_cast<bool>(mos), "cannot write metrics.json");

  write_run_json(args.out_dir, "eval", args, s, report.runtime_seconds, outputs);
  std::cout << report.to_json().dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint,
             const std::string& data_dir) {
  cli::RunSettings s = resolve_settings(args);
  return args.f64 ? eval_impl<double>(args, s, checkpoint, data_dir)
                  : eval_impl<float>(args, s, checkpoint, data_dir);
}

int cmd_gradcheck(const std::string& loss, std::uint64_t seed) {
  auto report = train::run_gradcheck(loss, seed);
  for (const auto& e : report.entries)
    std::cout << "loss " << e.loss << " group " << e.group << " max_rel_err "
              << e.max_rel_err << (e.ok ? " PASS" : " FAIL") << "\n";
  std::cout << "teacher analytic zero: "
            << (report.teacher_analytic_zero ? "PASS" : "FAIL") << "\n";
  std::cout << "teacher numeric nonzero: "
            << (report.teacher_numeric_nonzero ? "PASS" : "FAIL") << "\n";
  std::cout << "gradcheck " << (report.all_ok() ? "PASS" : "FAIL") << " in "
            << report.seconds << "s\n";
  return report.all_ok() ? 0 : 1;
}

int cmd_plot(const std::string& coefficients, const std::string& metrics,
             const std::string& out_dir) {
  ensure_dir(out_dir);
  std::vector<std::string> outputs;
  if (!coefficients.empty()) {
    std::ifstream is(coefficients);
    if (!is) fail("plot: cannot open '" + coefficients + "'");
    std::string header;
    require(static_cast<bool>(std::getline(is, header)),
            "plot: empty CSV '" + coefficients + "'");
    std::vector<std::string> cols;
    {
      std::istringstream hs(header);
      std::string c;
      while (std::getline(hs, c, ',')) cols.push_back(c);
    }
    require(cols.size() == 14 && cols[0] == "step",
            "plot: '" + coefficients + "' line 1: unexpected header");
    std::vector<io::Series> series(6);
    for (int t = 0; t < 6; ++t) series[static_cast<size_t>(t)].label =
        "1/" + cols[static_cast<size_t>(t) + 1];
    std::string line;
    int lineno = 1;
    bool any = false;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string cell;
      std::vector<std::string> cells;
      while (std::getline(ls, cell, ',')) cells.push_back(cell);
      require(cells.size() >= 13, "plot: '" + coefficients + "' line " +
                                      std::to_string(lineno) + ": too few columns");
      try {
        double step = std::stod(cells[0]);
        for (int t = 0; t < 6; ++t) {
          double sigma2 = std::stod(cells[static_cast<size_t>(t) + 1]);
          series[static_cast<size_t>(t)].x.push_back(step);
          series[static_cast<size_t>(t)].y.push_back(1.0 / sigma2);
        }
        any = true;
      } catch (const std::exception&) {
        fail("plot: '" + coefficients + "' line " + std::to_string(lineno) +
             ": malformed number");
      }
    }
    require(any, "plot: '" + coefficients + "' has no data rows");
    std::string svg = io::line_plot_svg("Task coefficients", "step",
                                        "1 / sigma^2", series);
    std::ofstream os(fs::path(out_dir) / "coefficients.svg", std::ios::binary);
    os << svg;
    require(static_cast<bool>(os), "plot: cannot write coefficients.svg");
    outputs.push_back("coefficients.svg");
  }
  if (!metrics.empty()) {
    std::ifstream is(metrics);
    if (!is) fail("plot: cannot open '" + metrics + "'");
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    require(!j.is_discarded(), "plot: malformed JSON in '" + metrics + "'");
    std::vector<std::string> labels;
    std::vector<double> values;
    if (j.contains("retrieval"))
      for (const auto& [mode, metricsmap] : j.at("retrieval").items())
        for (const auto& [name, v] : metricsmap.items()) {
          labels.push_back(mode + ":" + name);
          values.push_back(v.get<double>());
        }
    require(!labels.empty(), "plot: no retrieval metrics in '" + metrics + "'");
    std::string svg = io::bar_chart_svg("Retrieval metrics", labels, values);
    std::ofstream os(fs::path(out_dir) / "metrics.svg", std::ios::binary);
    os << svg;
    require(static_cast<bool>(os), "plot: cannot write metrics.svg");
    outputs.push_back("metrics.svg");
  }
  require(!outputs.empty(), "plot: provide --coefficients and/or --metrics");
  for (const auto& o : outputs) std::cout << "wrote " << o << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multi-objective vision-language pretraining"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  int gen_count = 0;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, gen_args);
  gen->add_option("--n", gen_count, "number of records");

  CommonArgs train_args;
  std::string train_data, train_resume;
  auto* train_cmd = app.add_subcommand("train", "train the full model");
  add_common(train_cmd, train_args);
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--resume", train_resume, "checkpoint to resume from");

  CommonArgs eval_args;
  std::string eval_ckpt, eval_data;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "eval dataset directory")->required();

  std::string gc_loss = "all";
  std::uint64_t gc_seed = 0;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc->add_option("--loss", gc_loss, "ret|sd|cap|ref|grd|vqa|total|all");
  gc->add_option("--seed", gc_seed, "toy problem seed");

  std::string plot_coeff, plot_metrics, plot_out = ".";
  auto* plot = app.add_subcommand("plot", "render SVG plots from run outputs");
  plot->add_option("--coefficients", plot_coeff, "coefficients.csv path");
  plot->add_option("--metrics", plot_metrics, "metrics.json path");
  plot->add_option("--out", plot_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems exit 2
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args, gen_count);
    if (train_cmd->parsed()) return cmd_train(train_args, train_data, train_resume);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_data);
    if (gc->parsed()) return cmd_gradcheck(gc_loss, gc_seed);
    if (plot->parsed()) return cmd_plot(plot_coeff, plot_metrics, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
