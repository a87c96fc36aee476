#pragma once

#include <cstdint>
#include <vector>

namespace ctseg {

// Dense binary mask at image resolution, row-major.
struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> data;  // 0 or 1

  BinaryMask() = default;
  BinaryMask(int h_, int w_) : h(h_), w(w_), data((size_t)h_ * w_, 0) {}

  uint8_t& at(int y, int x) { return data[(size_t)y * w + x]; }
  uint8_t at(int y, int x) const { return data[(size_t)y * w + x]; }

  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v;
    return n;
  }

  bool operator==(const BinaryMask& o) const {
    return h == o.h && w == o.w && data == o.data;
  }
};

}  // namespace ctseg
