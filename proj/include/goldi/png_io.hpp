#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace goldi::data {

struct RawImage {
  int w = 0, h = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 channels
};

// 8-bit RGB PNG, non-interlaced. Throws goldi::Error with the path on failure.
void write_png(const std::string& path, int w, int h,
               const std::vector<std::uint8_t>& rgb);
RawImage read_png(const std::string& path);

}  // namespace goldi::data
