#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "goldi/common.hpp"

namespace goldi::data {

// Row-major HWC image with channels in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<float> pix;  // size h * w * 3

  static Image filled(int h, int w, float r, float g, float b) {
    Image im;
    im.h = h;
    im.w = w;
    im.pix.resize(static_cast<size_t>(h) * w * 3);
    for (int i = 0; i < h * w; ++i) {
      im.pix[3 * static_cast<size_t>(i) + 0] = r;
      im.pix[3 * static_cast<size_t>(i) + 1] = g;
      im.pix[3 * static_cast<size_t>(i) + 2] = b;
    }
    return im;
  }

  float* at(int y, int x) { return &pix[3 * (static_cast<size_t>(y) * w + x)]; }
  const float* at(int y, int x) const {
    return &pix[3 * (static_cast<size_t>(y) * w + x)];
  }
};

inline std::vector<std::uint8_t> to_u8(const Image& im) {
  std::vector<std::uint8_t> out(im.pix.size());
  for (size_t i = 0; i < im.pix.size(); ++i) {
    float v = std::clamp(im.pix[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
  }
  return out;
}

inline Image from_u8(const std::vector<std::uint8_t>& buf, int h, int w) {
  Image im;
  im.h = h;
  im.w = w;
  im.pix.resize(buf.size());
  for (size_t i = 0; i < buf.size(); ++i) im.pix[i] = buf[i] / 255.0f;
  return im;
}

// Bilinear crop-and-resize of the rectangle [x0, x0+cw) x [y0, y0+ch) to
// out_h x out_w. Sample positions are pixel centers; fully deterministic.
inline Image crop_resize(const Image& src, float x0, float y0, float cw, float ch,
                         int out_h, int out_w) {
  Image out;
  out.h = out_h;
  out.w = out_w;
  out.pix.resize(static_cast<size_t>(out_h) * out_w * 3);
  for (int oy = 0; oy < out_h; ++oy) {
    float sy = y0 + (oy + 0.5f) * ch / out_h - 0.5f;
    float syc = std::clamp(sy, 0.0f, static_cast<float>(src.h - 1));
    int y1 = static_cast<int>(syc);
    int y2 = std::min(y1 + 1, src.h - 1);
    float fy = syc - y1;
    for (int ox = 0; ox < out_w; ++ox) {
      float sx = x0 + (ox + 0.5f) * cw / out_w - 0.5f;
      float sxc = std::clamp(sx, 0.0f, static_cast<float>(src.w - 1));
      int x1 = static_cast<int>(sxc);
      int x2 = std::min(x1 + 1, src.w - 1);
      float fx = sxc - x1;
      for (int c = 0; c < 3; ++c) {
        float top = src.at(y1, x1)[c] * (1 - fx) + src.at(y1, x2)[c] * fx;
        float bot = src.at(y2, x1)[c] * (1 - fx) + src.at(y2, x2)[c] * fx;
        out.at(oy, ox)[c] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

}  // namespace goldi::data
