#pragma once

#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "goldi/scene.hpp"

namespace goldi::data {

struct ReferringExpr {
  std::string phrase;
  int object;  // index into SceneSpec::objects
  PixelBox box;
};

struct QaPair {
  std::string question;
  std::string answer;
  std::string category;  // count | color | shape | attribute | relation
};

struct AnnotationSet {
  std::vector<std::string> captions_short;  // 3 single-sentence strings
  std::vector<std::string> captions_long;   // 3 multi-sentence strings
  std::vector<std::pair<int, PixelBox>> boxes;
  std::vector<ReferringExpr> referring;
  std::vector<QaPair> qa;
};

inline std::string position_phrase(const SceneSpec& scene, const ObjectSpec& obj) {
  const int rows = scene.grid_rows, cols = scene.grid_cols;
  bool mid_row = rows % 2 == 1 && obj.row == rows / 2;
  bool mid_col = cols % 2 == 1 && obj.col == cols / 2;
  if (mid_row && mid_col) return "center";
  std::string vert = obj.row < (rows + 1) / 2 ? "top" : "bottom";
  std::string horz = obj.col < (cols + 1) / 2 ? "left" : "right";
  if (mid_row) return "center " + horz;
  if (mid_col) return vert + " center";
  return vert + " " + horz;
}

inline std::string object_phrase(const ObjectSpec& obj, bool with_size = true) {
  std::string s;
  if (with_size) s += std::string(obj.large ? "large" : "small") + " ";
  s += std::string(color_name(obj.color)) + " " + shape_name(obj.shape);
  return s;
}

// "a" vs "an" for the color word that follows.
inline const char* article(const ObjectSpec& obj) {
  return obj.color == 5 ? "an" : "a";  // orange
}

// Relation of a w.r.t. b, chosen along the dominant axis; horizontal wins ties.
inline std::string relation_phrase(const ObjectSpec& a, const ObjectSpec& b) {
  int drow = a.row - b.row, dcol = a.col - b.col;
  if (std::abs(dcol) >= std::abs(drow)) return dcol < 0 ? "left of" : "right of";
  return drow < 0 ? "above" : "below";
}

namespace detail {

inline bool unique_shape(const SceneSpec& s, Shape sh) {
  int n = 0;
  for (const auto& o : s.objects) n += o.shape == sh;
  return n == 1;
}

inline bool unique_color(const SceneSpec& s, int c) {
  int n = 0;
  for (const auto& o : s.objects) n += o.color == c;
  return n == 1;
}

inline bool unique_color_shape(const SceneSpec& s, const ObjectSpec& obj) {
  int n = 0;
  for (const auto& o : s.objects) n += o.color == obj.color && o.shape == obj.shape;
  return n == 1;
}

inline int count_shape(const SceneSpec& s, Shape sh) {
  int n = 0;
  for (const auto& o : s.objects) n += o.shape == sh;
  return n;
}

inline std::string object_sentence(const SceneSpec& scene, const ObjectSpec& o,
                                   int variant) {
  static const char* verbs[] = {"sits in the", "is in the", "appears in the"};
  return std::string(article(o)) + " " + object_phrase(o) + " " +
         verbs[variant % 3] + " " + position_phrase(scene, o) + " .";
}

inline std::string relation_sentence(const SceneSpec& scene, int ia, int ib) {
  const auto& a = scene.objects[static_cast<size_t>(ia)];
  const auto& b = scene.objects[static_cast<size_t>(ib)];
  return "the " + std::string(color_name(a.color)) + " " + shape_name(a.shape) +
         " is " + relation_phrase(a, b) + " the " + color_name(b.color) + " " +
         shape_name(b.shape) + " .";
}

inline std::string background_sentence(const SceneSpec& scene) {
  return std::string("the background is ") + color_name(scene.background) + " .";
}

}  // namespace detail

// Answer any generated question template from the SceneSpec alone. Returns
// empty when the question does not apply to this scene (no unique referent).
inline std::string answer_question(const SceneSpec& s, const std::string& question) {
  std::vector<std::string> toks;
  {
    std::istringstream is(question);
    std::string t;
    while (is >> t) toks.push_back(t);
  }
  auto shape_of = [](const std::string& w) -> int {
    for (int i = 0; i < kNumShapes; ++i)
      if (w == shape_name(static_cast<Shape>(i)) ||
          w == shape_plural(static_cast<Shape>(i)))
        return i;
    return -1;
  };
  auto color_of = [](const std::string& w) -> int {
    for (int i = 0; i < kNumColors; ++i)
      if (w == color_name(i)) return i;
    return -1;
  };

  if (question == "how many objects are there")
    return std::to_string(s.objects.size());
  if (toks.size() == 5 && toks[0] == "how" && toks[1] == "many") {
    int sh = shape_of(toks[2]);
    if (sh < 0) return "";
    int n = 0;
    for (const auto& o : s.objects) n += static_cast<int>(o.shape) == sh;
    return std::to_string(n);
  }
  if (question == "what color is the background") return color_name(s.background);
  if (toks.size() == 5 && toks[0] == "what" && toks[1] == "color") {
    int sh = shape_of(toks[4]);
    const ObjectSpec* hit = nullptr;
    for (const auto& o : s.objects)
      if (static_cast<int>(o.shape) == sh) {
        if (hit != nullptr) return "";  // ambiguous
        hit = &o;
      }
    return hit ? color_name(hit->color) : "";
  }
  if (toks.size() == 6 && toks[0] == "what" && toks[1] == "shape") {
    int c = color_of(toks[4]);
    const ObjectSpec* hit = nullptr;
    for (const auto& o : s.objects)
      if (o.color == c) {
        if (hit != nullptr) return "";
        hit = &o;
      }
    return hit ? shape_name(hit->shape) : "";
  }
  if (toks.size() == 6 && toks[0] == "what" && toks[1] == "size") {
    int c = color_of(toks[4]);
    int sh = shape_of(toks[5]);
    const ObjectSpec* hit = nullptr;
    for (const auto& o : s.objects)
      if (o.color == c && static_cast<int>(o.shape) == sh) {
        if (hit != nullptr) return "";
        hit = &o;
      }
    return hit ? (hit->large ? "large" : "small") : "";
  }
  if (toks.size() >= 8 && toks[0] == "is" && toks[1] == "the") {
    int ca = color_of(toks[2]), sa = shape_of(toks[3]);
    size_t at = 4;
    std::string rel;
    while (at < toks.size() && toks[at] != "the")
      rel += (rel.empty() ? "" : " ") + toks[at++];
    if (at + 2 >= toks.size() + 1) return "";
    int cb = color_of(toks[at + 1]), sb = shape_of(toks[at + 2]);
    const ObjectSpec *oa = nullptr, *ob = nullptr;
    int na = 0, nb = 0;
    for (const auto& o : s.objects) {
      if (o.color == ca && static_cast<int>(o.shape) == sa) {
        oa = &o;
        ++na;
      }
      if (o.color == cb && static_cast<int>(o.shape) == sb) {
        ob = &o;
        ++nb;
      }
    }
    if (na != 1 || nb != 1 || oa == ob) return "";  // ambiguous referents
    return relation_phrase(*oa, *ob) == rel ? "yes" : "no";
  }
  return "";
}

inline AnnotationSet gen_annotations(const SceneSpec& scene, int image_size = 64) {
  AnnotationSet ann;
  const int n = static_cast<int>(scene.objects.size());

  // boxes and referring expressions
  for (int i = 0; i < n; ++i) {
    const auto& o = scene.objects[static_cast<size_t>(i)];
    PixelBox box = object_box(scene, i, image_size);
    ann.boxes.emplace_back(i, box);
    std::string phrase = "the " + std::string(color_name(o.color)) + " " +
                         shape_name(o.shape);
    if (!detail::unique_color_shape(scene, o)) {
      phrase = "the " + object_phrase(o);  // add size
      int same = 0;
      for (const auto& p : scene.objects)
        same += p.color == o.color && p.shape == o.shape && p.large == o.large;
      if (same > 1) phrase += " in the " + position_phrase(scene, o);
    }
    ann.referring.push_back(ReferringExpr{phrase, i, box});
  }

  // short captions: three different scene views, one sentence each
  if (n == 0) {
    ann.captions_short = {"an empty picture", "a picture with 0 objects",
                          std::string("the background is ") +
                              color_name(scene.background)};
    ann.captions_long = {detail::background_sentence(scene),
                         detail::background_sentence(scene),
                         detail::background_sentence(scene)};
  } else {
    const auto& first = scene.objects.front();
    const auto& last = scene.objects.back();
    std::string s0 = std::string(article(first)) + " " + object_phrase(first) +
                     " in the " + position_phrase(scene, first);
    if (n >= 2) {
      const auto& second = scene.objects[1];
      s0 += std::string(" and ") + article(second) + " " + object_phrase(second) +
            " in the " + position_phrase(scene, second);
    }
    std::string s1 = "a picture with " + std::to_string(n) +
                     (n == 1 ? " object on a " : " objects on a ") +
                     color_name(scene.background) + " background";
    std::string s2 = std::string("there is ") + article(last) + " " +
                     object_phrase(last) + " in the " + position_phrase(scene, last);
    ann.captions_short = {s0, s1, s2};

    // long captions: 2-4 sentences, staggered starting object for coverage
    for (int v = 0; v < 3; ++v) {
      std::string cap = detail::object_sentence(scene, scene.objects[v % n], v);
      if (n >= 2) {
        int a = v % n, b = (v + 1) % n;
        cap += " " + detail::object_sentence(scene, scene.objects[static_cast<size_t>(b)], v);
        cap += " " + detail::relation_sentence(scene, a, b);
      } else {
        cap += " " + detail::background_sentence(scene);
      }
      ann.captions_long.push_back(cap);
    }
  }

  // QA: three unconditional, more when the scene supports them
  ann.qa.push_back(QaPair{"how many objects are there", std::to_string(n), "count"});
  if (n > 0) {
    Shape sh = scene.objects.front().shape;
    ann.qa.push_back(QaPair{std::string("how many ") + shape_plural(sh) +
                                " are there",
                            std::to_string(detail::count_shape(scene, sh)), "count"});
  }
  ann.qa.push_back(QaPair{"what color is the background",
                          color_name(scene.background), "color"});
  for (const auto& o : scene.objects) {
    if (detail::unique_shape(scene, o.shape)) {
      ann.qa.push_back(QaPair{std::string("what color is the ") + shape_name(o.shape),
                              color_name(o.color), "color"});
      break;
    }
  }
  for (const auto& o : scene.objects) {
    if (detail::unique_color(scene, o.color)) {
      ann.qa.push_back(QaPair{std::string("what shape is the ") + color_name(o.color) +
                                  " object",
                              shape_name(o.shape), "shape"});
      break;
    }
  }
  for (const auto& o : scene.objects) {
    if (detail::unique_color_shape(scene, o)) {
      ann.qa.push_back(QaPair{std::string("what size is the ") + color_name(o.color) +
                                  " " + shape_name(o.shape),
                              o.large ? "large" : "small", "attribute"});
      break;
    }
  }
  if (n >= 2) {
    const auto& a = scene.objects[0];
    const auto& b = scene.objects[1];
    if (detail::unique_color_shape(scene, a) && detail::unique_color_shape(scene, b)) {
      std::string rel = relation_phrase(a, b);
      ann.qa.push_back(QaPair{"is the " + std::string(color_name(a.color)) + " " +
                                  shape_name(a.shape) + " " + rel + " the " +
                                  color_name(b.color) + " " + shape_name(b.shape),
                              "yes", "relation"});
      // flipped claim: a is (rel of b) implies the reverse claim is false
      std::string anti = rel == "left of"    ? "right of"
                         : rel == "right of" ? "left of"
                         : rel == "above"    ? "below"
                                             : "above";
      ann.qa.push_back(QaPair{"is the " + std::string(color_name(a.color)) + " " +
                                  shape_name(a.shape) + " " + anti + " the " +
                                  color_name(b.color) + " " + shape_name(b.shape),
                              "no", "relation"});
    }
  }
  return ann;
}

}  // namespace goldi::data
