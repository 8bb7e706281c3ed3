#include "bdlab/augment.hpp"

#include <cmath>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

Image shift(const Image& img, int dx, int dy) {
  Image out(img.height, img.width, img.channels, 0.0f);
  const long h = static_cast<long>(img.height), w = static_cast<long>(img.width);
  for (long y = 0; y < h; ++y) {
    const long sy = y - dy;
    if (sy < 0 || sy >= h) continue;
    for (long x = 0; x < w; ++x) {
      const long sx = x - dx;
      if (sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < img.channels; ++c)
        out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) =
            img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), c);
    }
  }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.height, img.width, img.channels);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y, img.width - 1 - x, c) = img.at(y, x, c);
  return out;
}

Image augment(const Image& img, const AugmentConfig& cfg, std::uint64_t seed) {
  if (cfg.max_shift_x < 0.0 || cfg.max_shift_x > 0.2 || cfg.max_shift_y < 0.0 || cfg.max_shift_y > 0.2)
    throw ConfigError("augment: shift fractions must be in [0, 0.2]");
  Rng rng(seed);
  const int mx = static_cast<int>(std::floor(cfg.max_shift_x * static_cast<double>(img.width)));
  const int my = static_cast<int>(std::floor(cfg.max_shift_y * static_cast<double>(img.height)));
  const int dx = mx > 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * mx + 1))) - mx : 0;
  const int dy = my > 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * my + 1))) - my : 0;
  Image out = (dx == 0 && dy == 0) ? img : shift(img, dx, dy);
  if (cfg.horizontal_flip && rng.uniform() < 0.5) out = hflip(out);
  return out;
}

Image pad_center(const Image& img, std::size_t height, std::size_t width) {
  if (height < img.height || width < img.width) throw ShapeError("pad_center: target smaller than image");
  Image out(height, width, img.channels, 0.0f);
  const std::size_t oy = (height - img.height) / 2, ox = (width - img.width) / 2;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) out.at(y + oy, x + ox, c) = img.at(y, x, c);
  return out;
}

}  // namespace bdlab
