#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace kseg {

// 8-bit images, row-major. RGB data is interleaved (r,g,b per pixel).
struct ImageU8 {
  std::size_t h = 0, w = 0, channels = 0;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

}  // namespace kseg
