#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "goldi/annotations.hpp"
#include "goldi/png_io.hpp"
#include "goldi/scene.hpp"
#include "goldi/tokenizer.hpp"

namespace goldi::data {

constexpr int kDatasetVersion = 1;

struct DatasetManifest {
  std::string root;
  int image_size = 64;
  int count = 0;
  std::vector<std::string> lexicon;
  std::string split = "train";
  std::uint64_t seed = 0;
  GeneratorConfig gen;
};

struct Record {
  int id = 0;
  std::uint64_t scene_seed = 0;
  AnnotationSet ann;
  std::vector<std::uint8_t> rgb;  // image_size^2 * 3, filled when images loaded
};

struct Corpus {
  DatasetManifest manifest;
  std::vector<Record> records;
};

namespace detail {

inline nlohmann::json box_json(const PixelBox& b) {
  return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2});
}

inline PixelBox box_from_json(const nlohmann::json& j) {
  return PixelBox{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(),
                  j.at(3).get<int>()};
}

inline nlohmann::json record_json(const Record& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["seed"] = r.scene_seed;
  j["captions_short"] = r.ann.captions_short;
  j["captions_long"] = r.ann.captions_long;
  j["boxes"] = nlohmann::json::array();
  for (const auto& [obj, box] : r.ann.boxes)
    j["boxes"].push_back(nlohmann::json::array({obj, box_json(box)}));
  j["referring"] = nlohmann::json::array();
  for (const auto& ref : r.ann.referring)
    j["referring"].push_back(
        nlohmann::json::array({ref.phrase, ref.object, box_json(ref.box)}));
  j["qa"] = nlohmann::json::array();
  for (const auto& qa : r.ann.qa)
    j["qa"].push_back(nlohmann::json::array({qa.question, qa.answer, qa.category}));
  return j;
}

inline Record record_from_json(const nlohmann::json& j) {
  Record r;
  r.id = j.at("id").get<int>();
  r.scene_seed = j.at("seed").get<std::uint64_t>();
  r.ann.captions_short = j.at("captions_short").get<std::vector<std::string>>();
  r.ann.captions_long = j.at("captions_long").get<std::vector<std::string>>();
  for (const auto& b : j.at("boxes"))
    r.ann.boxes.emplace_back(b.at(0).get<int>(), box_from_json(b.at(1)));
  for (const auto& ref : j.at("referring"))
    r.ann.referring.push_back(ReferringExpr{ref.at(0).get<std::string>(),
                                            ref.at(1).get<int>(),
                                            box_from_json(ref.at(2))});
  for (const auto& qa : j.at("qa"))
    r.ann.qa.push_back(QaPair{qa.at(0).get<std::string>(),
                              qa.at(1).get<std::string>(),
                              qa.at(2).get<std::string>()});
  return r;
}

}  // namespace detail

// Generate record `index` of a corpus. The per-record RNG stream depends only
// on (seed, index), so any record can be produced independently and parallel
// generation matches serial output exactly.
inline Record make_record(std::uint64_t seed, int index, const GeneratorConfig& cfg,
                          bool render = true) {
  Record r;
  r.id = index;
  r.scene_seed = hash_combine(seed, static_cast<std::uint64_t>(index));
  SceneSpec scene = gen_scene(r.scene_seed, cfg);
  r.ann = gen_annotations(scene, cfg.image_size);
  if (render) r.rgb = to_u8(render_image(scene, cfg.image_size));
  return r;
}

inline SceneSpec record_scene(const Record& r, const GeneratorConfig& cfg) {
  return gen_scene(r.scene_seed, cfg);
}

// Writes images/{id}.png, annotations.jsonl and manifest.json under `root`.
inline Corpus write_dataset(const std::string& root, std::uint64_t seed, int n,
                            const GeneratorConfig& cfg,
                            const std::string& split = "train") {
  namespace fs = std::filesystem;
  require(cfg.image_size % cfg.patch_align == 0,
          "write_dataset: image size " + std::to_string(cfg.image_size) +
              " not divisible by patch size " + std::to_string(cfg.patch_align));
  std::error_code ec;
  fs::create_directories(fs::path(root) / "images", ec);
  if (ec) fail("write_dataset: cannot create '" + root + "': " + ec.message());

  Corpus corpus;
  corpus.manifest.root = root;
  corpus.manifest.image_size = cfg.image_size;
  corpus.manifest.count = n;
  corpus.manifest.lexicon = text::default_lexicon_tokens();
  corpus.manifest.split = split;
  corpus.manifest.seed = seed;
  corpus.manifest.gen = cfg;

  corpus.records.resize(static_cast<size_t>(n));
  parallel_for(n, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i)
      corpus.records[static_cast<size_t>(i)] =
          make_record(seed, static_cast<int>(i), cfg);
  });

  // serial writes in index order keep output bytes independent of threading
  for (const Record& r : corpus.records) {
    std::string img_path =
        (fs::path(root) / "images" / (std::to_string(r.id) + ".png")).string();
    write_png(img_path, cfg.image_size, cfg.image_size, r.rgb);
  }

  std::string ann_path = (fs::path(root) / "annotations.jsonl").string();
  {
    std::ofstream out(ann_path, std::ios::binary);
    if (!out) fail("write_dataset: cannot open '" + ann_path + "' for writing");
    for (const Record& r : corpus.records) out << detail::record_json(r).dump() << "\n";
    if (!out) fail("write_dataset: write failed for '" + ann_path + "'");
  }

  std::string man_path = (fs::path(root) / "manifest.json").string();
  {
    nlohmann::json j;
    j["version"] = kDatasetVersion;
    j["image_size"] = cfg.image_size;
    j["count"] = n;
    j["lexicon"] = corpus.manifest.lexicon;
    j["split"] = split;
    j["seed"] = seed;
    j["grid"] = {cfg.grid_rows, cfg.grid_cols};
    j["objects"] = {cfg.min_objects, cfg.max_objects};
    std::ofstream out(man_path, std::ios::binary);
    if (!out) fail("write_dataset: cannot open '" + man_path + "' for writing");
    out << j.dump(2) << "\n";
    if (!out) fail("write_dataset: write failed for '" + man_path + "'");
  }
  return corpus;
}

inline Corpus read_dataset(const std::string& root, bool load_images = true) {
  namespace fs = std::filesystem;
  std::string man_path = (fs::path(root) / "manifest.json").string();
  std::ifstream man(man_path, std::ios::binary);
  if (!man) fail("read_dataset: cannot open '" + man_path + "'");
  nlohmann::json j = nlohmann::json::parse(man, nullptr, false);
  if (j.is_discarded()) fail("read_dataset: malformed JSON in '" + man_path + "'");
  require(j.at("version").get<int>() == kDatasetVersion,
          "read_dataset: unsupported dataset version in '" + man_path + "'");

  Corpus corpus;
  corpus.manifest.root = root;
  corpus.manifest.image_size = j.at("image_size").get<int>();
  corpus.manifest.count = j.at("count").get<int>();
  corpus.manifest.lexicon = j.at("lexicon").get<std::vector<std::string>>();
  corpus.manifest.split = j.at("split").get<std::string>();
  corpus.manifest.seed = j.at("seed").get<std::uint64_t>();
  corpus.manifest.gen.image_size = corpus.manifest.image_size;
  corpus.manifest.gen.grid_rows = j.at("grid").at(0).get<int>();
  corpus.manifest.gen.grid_cols = j.at("grid").at(1).get<int>();
  corpus.manifest.gen.min_objects = j.at("objects").at(0).get<int>();
  corpus.manifest.gen.max_objects = j.at("objects").at(1).get<int>();

  std::string ann_path = (fs::path(root) / "annotations.jsonl").string();
  std::ifstream ann(ann_path, std::ios::binary);
  if (!ann) fail("read_dataset: cannot open '" + ann_path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded())
      fail("read_dataset: malformed JSON at " + ann_path + ":" +
           std::to_string(lineno));
    corpus.records.push_back(detail::record_from_json(rec));
  }
  require(static_cast<int>(corpus.records.size()) == corpus.manifest.count,
          "read_dataset: record count mismatch in '" + root + "'");

  if (load_images) {
    parallel_for(static_cast<Index>(corpus.records.size()), [&](Index lo, Index hi) {
      for (Index i = lo; i < hi; ++i) {
        Record& r = corpus.records[static_cast<size_t>(i)];
        std::string img_path =
            (fs::path(root) / "images" / (std::to_string(r.id) + ".png")).string();
        RawImage im = read_png(img_path);
        require(im.w == corpus.manifest.image_size &&
                    im.h == corpus.manifest.image_size,
                "read_dataset: unexpected image size in '" + img_path + "'");
        r.rgb = std::move(im.rgb);
      }
    });
  }
  return corpus;
}

// In-memory corpus for tests and toy runs; no disk round trip.
inline Corpus make_corpus(std::uint64_t seed, int n, const GeneratorConfig& cfg,
                          const std::string& split = "train") {
  Corpus corpus;
  corpus.manifest.image_size = cfg.image_size;
  corpus.manifest.count = n;
  corpus.manifest.lexicon = text::default_lexicon_tokens();
  corpus.manifest.split = split;
  corpus.manifest.seed = seed;
  corpus.manifest.gen = cfg;
  corpus.records.resize(static_cast<size_t>(n));
  parallel_for(n, [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i)
      corpus.records[static_cast<size_t>(i)] =
          make_record(seed, static_cast<int>(i), cfg);
  });
  return corpus;
}

// Eval-set construction: regenerates any scene whose primary long caption
// collides with an earlier one, so retrieval ground truth stays unambiguous.
inline Corpus make_corpus_unique(std::uint64_t seed, int n,
                                 const GeneratorConfig& cfg,
                                 const std::string& split = "eval") {
  Corpus corpus;
  corpus.manifest.image_size = cfg.image_size;
  corpus.manifest.count = n;
  corpus.manifest.lexicon = text::default_lexicon_tokens();
  corpus.manifest.split = split;
  corpus.manifest.seed = seed;
  corpus.manifest.gen = cfg;
  std::set<std::string> seen;
  std::uint64_t salt = 0;
  for (int i = 0; i < n; ++i) {
    Record r;
    for (;; ++salt) {
      r = make_record(hash_combine(seed, salt), i, cfg);
      require(salt < static_cast<std::uint64_t>(n) * 1000 + 100000,
              "make_corpus_unique: cannot find enough distinct scenes");
      if (seen.insert(r.ann.captions_long[0]).second) break;
    }
    r.id = i;
    corpus.records.push_back(std::move(r));
    ++salt;
  }
  return corpus;
}

}  // namespace goldi::data
