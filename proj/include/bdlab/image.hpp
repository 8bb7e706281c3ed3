#pragma once

#include <cstddef>
#include <vector>

namespace bdlab {

// H x W x C intensity grid in [0,1], stored row-major with interleaved channels.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 1, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  float& at(std::size_t y, std::size_t x, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }

  bool operator==(const Image&) const = default;
};

// Luma (0.299, 0.587, 0.114) for 3-channel input; single-channel passes through.
std::vector<double> to_grayscale(const Image& img);

void clamp_unit(Image& img);

}  // namespace bdlab
