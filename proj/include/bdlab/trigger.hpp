#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "bdlab/dataset.hpp"
#include "bdlab/faces.hpp"
#include "bdlab/image.hpp"

namespace bdlab {

// Fixed pattern stamped at a fixed location. Pixels where mask != 0 take the
// pattern value; everything else is left bit-identical.
struct StaticPatch {
  std::size_t row = 0;
  std::size_t col = 0;
  Image pattern;                    // h x w x C
  std::vector<std::uint8_t> mask;   // h x w
};

enum class FilterKind { Smooth, AgeLines, BrightenContour, SmileWarp };

std::string_view filter_name(FilterKind k);
FilterKind parse_filter(std::string_view name);

// Procedural stand-ins for photo filters. Every filter is a pure function of
// (image content, strength, seed); the per-image randomness is keyed on a hash
// of the pixel content, so the trigger realization differs per input.
struct FilterAnalog {
  FilterKind kind = FilterKind::Smooth;
  double strength = 0.5;   // in (0,1]
  std::uint64_t seed = 0;
};

// Re-renders a face with one expression scalar shifted by `delta`.
struct ExpressionShift {
  Expression which = Expression::MouthCurvature;
  double delta = 1.0;
};

struct Trigger {
  std::variant<StaticPatch, FilterAnalog, ExpressionShift> kind;
  std::string name;

  bool is_static() const { return std::holds_alternative<StaticPatch>(kind); }
  bool needs_faces() const { return std::holds_alternative<ExpressionShift>(kind); }
  // Throws ConfigError if the invariants of the active kind do not hold.
  void validate() const;
};

// Square patch of `value` with side `size` at (row, col), single channel.
Trigger make_square_patch(std::size_t row, std::size_t col, std::size_t size, float value = 1.0f,
                          std::size_t channels = 1);
Trigger make_filter(FilterKind kind, double strength, std::uint64_t seed = 0);
Trigger make_expression(Expression which, double delta);

// Image-domain triggers (StaticPatch, FilterAnalog). Throws GeometryError when a
// patch does not fit and ConfigError for an ExpressionShift.
Image apply_trigger(const Image& image, const Trigger& trigger);
// Face-domain triggers; image-domain kinds are applied to the rendered face.
Image apply_trigger(const FaceRecord& face, const Trigger& trigger);
// Applies to sample i of a dataset, using its face record when present.
Image apply_trigger(const LabeledDataset& ds, std::size_t i, const Trigger& trigger);

// Individual filters, exposed for testing.
Image filter_smooth(const Image& img, double strength);
Image filter_age_lines(const Image& img, double strength, std::uint64_t seed);
Image filter_brighten_contour(const Image& img, double strength);
Image filter_smile_warp(const Image& img, double strength, std::uint64_t seed);

std::uint64_t content_hash(const Image& img);

// key=value text form, e.g.
//   trigger.kind=patch  trigger.row=24 trigger.col=24 trigger.size=3 trigger.value=1
//   trigger.kind=filter trigger.filter=smooth trigger.strength=0.5 trigger.seed=7
//   trigger.kind=expression trigger.expression=mouth_curvature trigger.delta=1
std::map<std::string, std::string> trigger_to_kv(const Trigger& t);
Trigger trigger_from_kv(const std::map<std::string, std::string>& kv);

}  // namespace bdlab
