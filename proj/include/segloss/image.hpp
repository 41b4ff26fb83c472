#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segloss/error.hpp"

namespace segloss {

// H x W grayscale image with values in [0, 1].
struct Image {
  int h = 0, w = 0;
  std::vector<double> pix;

  Image() = default;
  Image(int h_, int w_, double fill = 0.0)
      : h(h_), w(w_), pix(size_t(h_) * w_, fill) {}

  double& at(int y, int x) { return pix[size_t(y) * w + x]; }
  double at(int y, int x) const { return pix[size_t(y) * w + x]; }
  int64_t numel() const { return int64_t(h) * w; }
};

// H x W binary mask; 1 = foreground.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> pix;

  Mask() = default;
  Mask(int h_, int w_, uint8_t fill = 0)
      : h(h_), w(w_), pix(size_t(h_) * w_, fill) {}

  uint8_t& at(int y, int x) { return pix[size_t(y) * w + x]; }
  uint8_t at(int y, int x) const { return pix[size_t(y) * w + x]; }
  int64_t numel() const { return int64_t(h) * w; }

  int64_t foreground() const {
    int64_t n = 0;
    for (uint8_t v : pix) n += v != 0;
    return n;
  }
  bool empty_fg() const { return foreground() == 0; }
};

// One dataset element: image, binary ground-truth mask, lesion flag.
struct Sample {
  std::string id;
  Image image;
  Mask mask;
  bool has_lesion = false;
};

}  // namespace segloss
