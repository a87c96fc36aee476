#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ctseg {

// 8-bit RGB image, row-major, 3 bytes per pixel.
struct Image8 {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;

  Image8() = default;
  Image8(int h_, int w_) : h(h_), w(w_), rgb((size_t)h_ * w_ * 3, 0) {}
};

// Minimal PNG: truecolor 8-bit, zlib stream with stored deflate blocks.
// Lossless and byte-deterministic; the reader accepts exactly what the
// writer emits.
void write_png(const std::string& path, const Image8& img);
Image8 read_png(const std::string& path);

}  // namespace ctseg
