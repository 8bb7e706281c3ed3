#include "bdlab/percept_hash.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "bdlab/errors.hpp"

namespace bdlab {

double similarity(Hash64 a, Hash64 b) { return 100.0 * (1.0 - hamming_distance(a, b) / 64.0); }

std::vector<double> resize_bilinear(std::span<const double> src, std::size_t in_h, std::size_t in_w,
                                    std::size_t out_h, std::size_t out_w) {
  if (in_h == 0 || in_w == 0 || src.size() != in_h * in_w) throw ShapeError("resize_bilinear: bad source grid");
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: empty target");
  auto coord = [](std::size_t i, std::size_t in, std::size_t out) {
    return out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
  };
  std::vector<double> dst(out_h * out_w);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double sy = coord(oy, in_h, out_h);
    const auto y0 = std::min(static_cast<std::size_t>(sy), in_h - 1);
    const auto y1 = std::min(y0 + 1, in_h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double sx = coord(ox, in_w, out_w);
      const auto x0 = std::min(static_cast<std::size_t>(sx), in_w - 1);
      const auto x1 = std::min(x0 + 1, in_w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = (1.0 - fx) * src[y0 * in_w + x0] + fx * src[y0 * in_w + x1];
      const double bot = (1.0 - fx) * src[y1 * in_w + x0] + fx * src[y1 * in_w + x1];
      dst[oy * out_w + ox] = (1.0 - fy) * top + fy * bot;
    }
  }
  return dst;
}

std::vector<double> dct2d(std::span<const double> grid, std::size_t n) {
  if (grid.size() != n * n) throw ShapeError("dct2d: grid is not n x n");
  std::vector<double> basis(n * n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      basis[k * n + i] = std::cos(std::numbers::pi / static_cast<double>(n) * (static_cast<double>(i) + 0.5) *
                                  static_cast<double>(k));
  // Separable: rows first, then columns.
  std::vector<double> tmp(n * n, 0.0), out(n * n, 0.0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t v = 0; v < n; ++v) {
      double s = 0.0;
      for (std::size_t x = 0; x < n; ++x) s += grid[y * n + x] * basis[v * n + x];
      tmp[y * n + v] = s;
    }
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = 0; v < n; ++v) {
      double s = 0.0;
      for (std::size_t y = 0; y < n; ++y) s += tmp[y * n + v] * basis[u * n + y];
      out[u * n + v] = s;
    }
  return out;
}

Hash64 phash(const Image& img) {
  if (img.empty()) throw ShapeError("phash: empty image");
  constexpr std::size_t kN = 32;
  const auto small = resize_bilinear(to_grayscale(img), img.height, img.width, kN, kN);
  const auto dct = dct2d(small, kN);

  std::vector<double> sel;
  sel.reserve(64);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      if (r != 0 || c != 0) sel.push_back(dct[r * kN + c]);
  sel.push_back(dct[8 * kN + 0]);

  auto sorted = sel;
  std::sort(sorted.begin(), sorted.end());
  const double median = 0.5 * (sorted[31] + sorted[32]);
  double scale = 0.0;
  for (double v : sel) scale = std::max(scale, std::abs(v));
  const double tie = kHashTieTolerance * (1.0 + scale);

  Hash64 h;
  for (std::size_t i = 0; i < 64; ++i)
    if (sel[i] > median + tie) h.bits |= std::uint64_t{1} << i;
  return h;
}

Hash64 dhash(const Image& img) {
  if (img.empty()) throw ShapeError("dhash: empty image");
  const auto small = resize_bilinear(to_grayscale(img), img.height, img.width, 8, 9);
  double scale = 0.0;
  for (double v : small) scale = std::max(scale, std::abs(v));
  const double tie = kHashTieTolerance * (1.0 + scale);
  Hash64 h;
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      if (small[r * 9 + c] + tie < small[r * 9 + c + 1]) h.bits |= std::uint64_t{1} << (r * 8 + c);
  return h;
}

double trigger_size(const Image& original, const Image& triggered) {
  if (!original.same_shape(triggered))
    throw GeometryError("trigger_size: images differ in shape");
  if (original.empty()) throw GeometryError("trigger_size: empty image");
  std::size_t changed = 0;
  const std::size_t pixels = original.height * original.width;
  for (std::size_t p = 0; p < pixels; ++p) {
    bool moved = false;
    for (std::size_t c = 0; c < original.channels; ++c) {
      const std::size_t i = p * original.channels + c;
      moved = moved || std::abs(static_cast<double>(triggered.pixels[i]) - original.pixels[i]) > kChangeThreshold;
    }
    changed += moved;
  }
  return 100.0 * static_cast<double>(changed) / static_cast<double>(pixels);
}

PairStealth pair_stealth(const Image& original, const Image& triggered) {
  return {trigger_size(original, triggered), similarity(phash(original), phash(triggered)),
          similarity(dhash(original), dhash(triggered))};
}

StealthReport stealth_report(std::span<const Image> originals, std::span<const Image> triggered) {
  if (originals.empty()) throw ConfigError("stealth_report: empty image set");
  if (originals.size() != triggered.size()) throw ConfigError("stealth_report: sets are not paired");
  StealthReport r{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < originals.size(); ++i) {
    const auto p = pair_stealth(originals[i], triggered[i]);
    r.trigger_size_pct += p.trigger_size_pct;
    r.phash_similarity_pct += p.phash_similarity_pct;
    r.dhash_similarity_pct += p.dhash_similarity_pct;
  }
  const double n = static_cast<double>(originals.size());
  r.trigger_size_pct /= n;
  r.phash_similarity_pct /= n;
  r.dhash_similarity_pct /= n;
  return r;
}

}  // namespace bdlab
