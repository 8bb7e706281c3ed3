#pragma once

#include <cstdint>

#include "bdlab/image.hpp"

namespace bdlab {

struct AugmentConfig {
  double max_shift_x = 0.0;  // fraction of width, at most 0.2
  double max_shift_y = 0.0;  // fraction of height, at most 0.2
  bool horizontal_flip = false;  // flip with probability 1/2
};

// Integer translation with zero fill; +dx moves content right, +dy down.
Image shift(const Image& img, int dx, int dy);
Image hflip(const Image& img);

// Random shift (uniform integer offsets within the configured fractions) and
// optional flip, drawn from `seed`.
Image augment(const Image& img, const AugmentConfig& cfg, std::uint64_t seed);

// Zero-pads (centered) to height x width; both must be at least the input size.
Image pad_center(const Image& img, std::size_t height, std::size_t width);

}  // namespace bdlab
