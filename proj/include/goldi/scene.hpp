#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "goldi/common.hpp"
#include "goldi/image.hpp"

namespace goldi::data {

enum class Shape : int { circle = 0, square = 1, triangle = 2, bar = 3 };
constexpr int kNumShapes = 4;
constexpr int kNumColors = 8;

inline const char* shape_name(Shape s) {
  static const char* names[] = {"circle", "square", "triangle", "bar"};
  return names[static_cast<int>(s)];
}

inline const char* shape_plural(Shape s) {
  static const char* names[] = {"circles", "squares", "triangles", "bars"};
  return names[static_cast<int>(s)];
}

inline const char* color_name(int c) {
  static const char* names[] = {"red",    "green",  "blue", "yellow",
                                "purple", "orange", "cyan", "pink"};
  return names[c];
}

inline std::array<float, 3> color_rgb(int c) {
  static const std::array<float, 3> rgb[] = {
      {0.90f, 0.10f, 0.10f}, {0.10f, 0.75f, 0.15f}, {0.15f, 0.25f, 0.90f},
      {0.95f, 0.85f, 0.10f}, {0.55f, 0.15f, 0.80f}, {0.95f, 0.55f, 0.10f},
      {0.10f, 0.80f, 0.85f}, {0.95f, 0.45f, 0.70f}};
  return rgb[c];
}

// Backgrounds are dimmed palette tints so objects of any color stay visible.
inline std::array<float, 3> background_rgb(int c) {
  auto rgb = color_rgb(c);
  return {rgb[0] * 0.18f, rgb[1] * 0.18f, rgb[2] * 0.18f};
}

struct ObjectSpec {
  Shape shape;
  int color;     // palette index, never equal to the scene background
  int row, col;  // grid cell
  bool large;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int grid_rows = 4, grid_cols = 4;
  std::vector<ObjectSpec> objects;
  int background = 0;
};

struct GeneratorConfig {
  int grid_rows = 4;
  int grid_cols = 4;
  int min_objects = 1;
  int max_objects = 4;
  int image_size = 64;
  int patch_align = 8;  // rendered size must stay divisible by this
};

inline SceneSpec gen_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
  const int cells = cfg.grid_rows * cfg.grid_cols;
  require(cfg.min_objects >= 0 && cfg.min_objects <= cfg.max_objects,
          "gen_scene: invalid object count range");
  require(cfg.max_objects <= cells,
          "gen_scene: invalid config, more objects than grid cells (" +
              std::to_string(cfg.max_objects) + " > " + std::to_string(cells) + ")");

  Rng rng = rng_stream(seed, "scene");
  SceneSpec scene;
  scene.seed = seed;
  scene.grid_rows = cfg.grid_rows;
  scene.grid_cols = cfg.grid_cols;
  scene.background = static_cast<int>(rng.uniform(kNumColors));

  int n = cfg.min_objects +
          static_cast<int>(rng.uniform(
              static_cast<std::uint64_t>(cfg.max_objects - cfg.min_objects + 1)));

  // Fisher-Yates over the cell list; first n entries are the placements.
  std::vector<int> cell_ids(static_cast<size_t>(cells));
  for (int i = 0; i < cells; ++i) cell_ids[static_cast<size_t>(i)] = i;
  for (int i = cells - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform(static_cast<std::uint64_t>(i + 1)));
    std::swap(cell_ids[static_cast<size_t>(i)], cell_ids[static_cast<size_t>(j)]);
  }

  for (int i = 0; i < n; ++i) {
    ObjectSpec obj;
    obj.shape = static_cast<Shape>(rng.uniform(kNumShapes));
    int c = static_cast<int>(rng.uniform(kNumColors - 1));
    obj.color = c >= scene.background ? c + 1 : c;  // skip the background hue
    obj.row = cell_ids[static_cast<size_t>(i)] / cfg.grid_cols;
    obj.col = cell_ids[static_cast<size_t>(i)] % cfg.grid_cols;
    obj.large = rng.uniform(2) == 1;
    scene.objects.push_back(obj);
  }
  return scene;
}

struct PixelBox {
  int x1, y1, x2, y2;  // half-open: pixels with x in [x1, x2), y in [y1, y2)
};

namespace detail {

struct ObjectGeometry {
  float cx, cy;      // center in pixel coordinates
  float r;           // base radius
  float hw, hh;      // half extents (bounding)
};

inline ObjectGeometry object_geometry(const SceneSpec& scene, const ObjectSpec& obj,
                                      int size) {
  const float cell_w = static_cast<float>(size) / scene.grid_cols;
  const float cell_h = static_cast<float>(size) / scene.grid_rows;
  const float cell = std::min(cell_w, cell_h);
  ObjectGeometry g;
  g.cx = (obj.col + 0.5f) * cell_w;
  g.cy = (obj.row + 0.5f) * cell_h;
  g.r = std::min(obj.large ? 0.44f * cell : 0.30f * cell, cell / 2 - 1);
  switch (obj.shape) {
    case Shape::circle:
      g.hw = g.hh = g.r;
      break;
    case Shape::square:
      g.hw = g.hh = g.r * 0.88f;
      break;
    case Shape::triangle:
      g.hw = g.hh = g.r;
      break;
    case Shape::bar:
      g.hw = std::min(g.r * 1.6f, cell / 2 - 1);
      g.hh = std::max(g.r * 0.38f, 1.5f);
      break;
  }
  return g;
}

inline bool inside_shape(Shape s, const ObjectGeometry& g, float px, float py) {
  float dx = px - g.cx, dy = py - g.cy;
  switch (s) {
    case Shape::circle:
      return dx * dx + dy * dy <= g.r * g.r;
    case Shape::square:
      return std::abs(dx) <= g.hw && std::abs(dy) <= g.hh;
    case Shape::triangle:
      // apex up: base at dy = +r, tip at dy = -r
      return dy >= -g.r && dy <= g.r && std::abs(dx) <= g.r * (dy + g.r) / (2 * g.r);
    case Shape::bar:
      return std::abs(dx) <= g.hw && std::abs(dy) <= g.hh;
  }
  return false;
}

}  // namespace detail

// Tight pixel bounding box of an object at the given render size.
inline PixelBox object_box(const SceneSpec& scene, int index, int size) {
  const ObjectSpec& obj = scene.objects[static_cast<size_t>(index)];
  auto g = detail::object_geometry(scene, obj, size);
  PixelBox b;
  b.x1 = std::max(0, static_cast<int>(std::floor(g.cx - g.hw)));
  b.y1 = std::max(0, static_cast<int>(std::floor(g.cy - g.hh)));
  b.x2 = std::min(size, static_cast<int>(std::ceil(g.cx + g.hw)) + 1);
  b.y2 = std::min(size, static_cast<int>(std::ceil(g.cy + g.hh)) + 1);
  return b;
}

inline Image render_image(const SceneSpec& scene, int size) {
  require(size > 0, "render_image: size must be positive");
  auto bg = background_rgb(scene.background);
  Image im = Image::filled(size, size, bg[0], bg[1], bg[2]);
  for (const auto& obj : scene.objects) {
    auto g = detail::object_geometry(scene, obj, size);
    auto rgb = color_rgb(obj.color);
    int x1 = std::max(0, static_cast<int>(g.cx - g.hw) - 1);
    int x2 = std::min(size - 1, static_cast<int>(g.cx + g.hw) + 1);
    int y1 = std::max(0, static_cast<int>(g.cy - g.hh) - 1);
    int y2 = std::min(size - 1, static_cast<int>(g.cy + g.hh) + 1);
    for (int y = y1; y <= y2; ++y)
      for (int x = x1; x <= x2; ++x)
        if (detail::inside_shape(obj.shape, g, x + 0.5f, y + 0.5f)) {
          float* p = im.at(y, x);
          p[0] = rgb[0];
          p[1] = rgb[1];
          p[2] = rgb[2];
        }
  }
  return im;
}

}  // namespace goldi::data
