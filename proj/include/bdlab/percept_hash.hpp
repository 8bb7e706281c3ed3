#pragma once

#include <bit>
#include <cstdint>
#include <span>
#include <vector>

#include "bdlab/image.hpp"

namespace bdlab {

// 64-bit perceptual fingerprint. Bit i is (value >> i) & 1.
struct Hash64 {
  std::uint64_t bits = 0;
  bool operator==(const Hash64&) const = default;
};

inline int hamming_distance(Hash64 a, Hash64 b) { return std::popcount(a.bits ^ b.bits); }

// 100 * (1 - HD/64).
double similarity(Hash64 a, Hash64 b);

// Bilinear resize with corner-aligned sampling: output sample i maps to source
// coordinate i * (in - 1) / (out - 1). `src` is a row-major single-channel grid.
std::vector<double> resize_bilinear(std::span<const double> src, std::size_t in_h, std::size_t in_w,
                                    std::size_t out_h, std::size_t out_w);

// Unnormalized 2-D DCT-II of an n x n grid:
//   X[u][v] = sum_y sum_x f[y][x] cos(pi/n (y + 1/2) u) cos(pi/n (x + 1/2) v)
std::vector<double> dct2d(std::span<const double> grid, std::size_t n);

// Comparisons in both hashes treat differences below this fraction of the
// largest magnitude involved as ties, so float round-off cannot flip a bit.
inline constexpr double kHashTieTolerance = 1e-9;

// pHash: grayscale, 32x32 resize, DCT-II, then the 64 coefficients
//   { (r,c) : r,c < 8 } \ {(0,0)}  in row-major order, followed by (8,0)
// (the first coefficient past the 8x8 block in JPEG zig-zag order).
// Bit i = coefficient i > median of the 64.
Hash64 phash(const Image& img);

// dHash: grayscale, resize to 9 wide x 8 high, bit (r*8 + c) = p(r,c) < p(r,c+1).
Hash64 dhash(const Image& img);

// Percentage of pixels whose intensity moved by more than 1/255.
double trigger_size(const Image& original, const Image& triggered);

inline constexpr double kChangeThreshold = 1.0 / 255.0;

struct StealthReport {
  double trigger_size_pct = 0.0;
  double phash_similarity_pct = 100.0;
  double dhash_similarity_pct = 100.0;
};

struct PairStealth {
  double trigger_size_pct;
  double phash_similarity_pct;
  double dhash_similarity_pct;
};

PairStealth pair_stealth(const Image& original, const Image& triggered);

// Means over paired sets; throws ConfigError on empty or unequal-length input.
StealthReport stealth_report(std::span<const Image> originals, std::span<const Image> triggered);

}  // namespace bdlab
