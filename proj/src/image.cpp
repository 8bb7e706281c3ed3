#include "bdlab/image.hpp"

#include <algorithm>

#include "bdlab/errors.hpp"

namespace bdlab {

std::vector<double> to_grayscale(const Image& img) {
  std::vector<double> gray(img.height * img.width);
  if (img.channels == 1) {
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = img.pixels[i];
  } else if (img.channels == 3) {
    for (std::size_t i = 0; i < gray.size(); ++i) {
      const float* p = &img.pixels[i * 3];
      gray[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    }
  } else {
    throw ShapeError("grayscale conversion supports 1 or 3 channels, got " + std::to_string(img.channels));
  }
  return gray;
}

void clamp_unit(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace bdlab
