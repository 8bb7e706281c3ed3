#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "bdlab/image.hpp"

namespace bdlab {

// Rendered faces are square grayscale images of this side length.
inline constexpr std::size_t kFaceSize = 32;

enum class Expression { MouthCurvature, BrowArch, EyeNarrowing, MouthOpening };

std::string_view expression_name(Expression e);
Expression parse_expression(std::string_view name);

// Procedural face description. Every component is dimensionless in [0,1].
// The identity block is fixed per class; the expression block carries the
// facial-movement scalars that expression triggers shift.
struct FaceParams {
  struct Identity {
    double face_width = 0.5;
    double face_height = 0.5;
    double skin_tone = 0.5;
    double hair_line = 0.5;
    double hair_tone = 0.5;
    double eye_spacing = 0.5;
    double eye_height = 0.5;
    double eye_radius = 0.5;
    double brow_angle = 0.5;
    double nose_length = 0.5;
    double mouth_width = 0.5;
    double mouth_height = 0.5;
  } identity;

  struct ExpressionState {
    double mouth_curvature = 0.0;
    double brow_arch = 0.0;
    double eye_narrowing = 0.0;
    double mouth_opening = 0.0;
  } expression;

  double get(Expression e) const;
  void set(Expression e, double v);
  // Clamp all components into [0,1].
  void clamp();
  bool valid() const;
};

// Deterministic 32x32 rendering. The jitter seed drives a +-2 px translation
// and additive Gaussian noise (sigma 0.02); output is clamped to [0,1].
Image render_face(const FaceParams& params, std::uint64_t jitter_seed);

FaceParams::Identity random_identity(std::uint64_t seed);

}  // namespace bdlab
