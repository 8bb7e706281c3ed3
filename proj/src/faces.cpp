#include "bdlab/faces.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {
namespace {

double coverage(double signed_dist) { return std::clamp(0.5 - signed_dist, 0.0, 1.0); }

double ellipse_sd(double x, double y, double cx, double cy, double ax, double ay) {
  const double dx = (x - cx) / ax, dy = (y - cy) / ay;
  return (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(ax, ay);
}

void blend(double& dst, double color, double alpha) { dst = (1.0 - alpha) * dst + alpha * color; }

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

std::string_view expression_name(Expression e) {
  switch (e) {
    case Expression::MouthCurvature: return "mouth_curvature";
    case Expression::BrowArch: return "brow_arch";
    case Expression::EyeNarrowing: return "eye_narrowing";
    case Expression::MouthOpening: return "mouth_opening";
  }
  return "unknown";
}

Expression parse_expression(std::string_view name) {
  for (auto e : {Expression::MouthCurvature, Expression::BrowArch, Expression::EyeNarrowing, Expression::MouthOpening})
    if (expression_name(e) == name) return e;
  throw ConfigError("unknown expression '" + std::string(name) +
                    "' (valid: mouth_curvature, brow_arch, eye_narrowing, mouth_opening)");
}

double FaceParams::get(Expression e) const {
  switch (e) {
    case Expression::MouthCurvature: return expression.mouth_curvature;
    case Expression::BrowArch: return expression.brow_arch;
    case Expression::EyeNarrowing: return expression.eye_narrowing;
    case Expression::MouthOpening: return expression.mouth_opening;
  }
  return 0.0;
}

void FaceParams::set(Expression e, double v) {
  v = clamp01(v);
  switch (e) {
    case Expression::MouthCurvature: expression.mouth_curvature = v; break;
    case Expression::BrowArch: expression.brow_arch = v; break;
    case Expression::EyeNarrowing: expression.eye_narrowing = v; break;
    case Expression::MouthOpening: expression.mouth_opening = v; break;
  }
}

namespace {
template <typename F>
void for_each_component(FaceParams& p, F&& f) {
  auto& i = p.identity;
  for (double* v : {&i.face_width, &i.face_height, &i.skin_tone, &i.hair_line, &i.hair_tone, &i.eye_spacing,
                    &i.eye_height, &i.eye_radius, &i.brow_angle, &i.nose_length, &i.mouth_width, &i.mouth_height,
                    &p.expression.mouth_curvature, &p.expression.brow_arch, &p.expression.eye_narrowing,
                    &p.expression.mouth_opening})
    f(*v);
}
}  // namespace

void FaceParams::clamp() {
  for_each_component(*this, [](double& v) { v = clamp01(v); });
}

bool FaceParams::valid() const {
  bool ok = true;
  auto copy = *this;
  for_each_component(copy, [&](double& v) { ok = ok && v >= 0.0 && v <= 1.0; });
  return ok;
}

FaceParams::Identity random_identity(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xface));
  FaceParams p;
  auto& i = p.identity;
  for (double* v : {&i.face_width, &i.face_height, &i.skin_tone, &i.hair_line, &i.hair_tone, &i.eye_spacing,
                    &i.eye_height, &i.eye_radius, &i.brow_angle, &i.nose_length, &i.mouth_width, &i.mouth_height})
    *v = rng.uniform();
  return i;
}

Image render_face(const FaceParams& params, std::uint64_t jitter_seed) {
  FaceParams p = params;
  p.clamp();
  const auto& id = p.identity;
  const auto& ex = p.expression;

  Rng rng(derive_seed(jitter_seed, 0x7177e4));
  const double tx = rng.uniform(-2.0, 2.0);
  const double ty = rng.uniform(-2.0, 2.0);

  const double cx = 16.0 + tx, cy = 17.0 + ty;
  const double face_ax = 8.0 + 4.0 * id.face_width;
  const double face_ay = 10.0 + 3.0 * id.face_height;
  const double skin = 0.45 + 0.4 * id.skin_tone;
  const double hair = 0.05 + 0.3 * id.hair_tone;
  const double hair_bottom = cy - face_ay + 3.0 + 4.0 * id.hair_line;

  const double eye_dx = 2.5 + 2.5 * id.eye_spacing;
  const double eye_y = cy - 1.0 - 3.0 * id.eye_height;
  const double eye_rx = 1.2 + 1.0 * id.eye_radius;
  const double eye_ry = std::max(0.35, eye_rx * (1.0 - 0.75 * ex.eye_narrowing));
  const double brow_tilt = (id.brow_angle - 0.5) * 0.6;

  const double mouth_y = cy + 4.0 + 3.0 * id.mouth_height;
  const double mouth_hw = (3.0 + 3.0 * id.mouth_width) * (1.0 + 0.25 * ex.mouth_curvature);

  Image img(kFaceSize, kFaceSize, 1);
  for (std::size_t py = 0; py < kFaceSize; ++py) {
    for (std::size_t px = 0; px < kFaceSize; ++px) {
      const double x = static_cast<double>(px) + 0.5;
      const double y = static_cast<double>(py) + 0.5;
      double v = 0.12;

      // Head and hair cap.
      const double head = coverage(ellipse_sd(x, y, cx, cy, face_ax, face_ay));
      blend(v, skin, head);
      const double hair_cov = coverage(ellipse_sd(x, y, cx, cy - 0.5, face_ax + 0.8, face_ay + 0.8)) *
                              std::clamp(hair_bottom - y + 0.5, 0.0, 1.0);
      blend(v, hair, hair_cov);

      for (double side : {-1.0, 1.0}) {
        const double ecx = cx + side * eye_dx;
        blend(v, 0.05, coverage(ellipse_sd(x, y, ecx, eye_y, eye_rx, eye_ry)));

        // Brow: a shallow arc above each eye; brow_arch lifts its middle.
        const double half = eye_rx + 1.2;
        const double u = (x - ecx) / half;
        if (std::abs(u) <= 1.0) {
          const double by = eye_y - eye_ry - 2.0 - ex.brow_arch * 2.5 * (1.0 - u * u) + side * brow_tilt * (x - ecx);
          blend(v, 0.1, coverage(std::abs(y - by) - 0.45) * coverage((std::abs(u) - 1.0) * half));
        }
      }

      // Nose ridge.
      const double nose_top = cy - 1.0, nose_bottom = cy + 1.0 + 2.0 * id.nose_length;
      if (y >= nose_top && y <= nose_bottom) blend(v, skin * 0.7, coverage(std::abs(x - cx) - 0.3));

      // Mouth: upper lip line bent (and widened) by curvature, lower lip pulled down by opening.
      const double mu = (x - cx) / mouth_hw;
      if (std::abs(mu) <= 1.0) {
        const double upper = mouth_y + ex.mouth_curvature * (2.5 - 6.0 * mu * mu);
        const double lower = upper + ex.mouth_opening * 3.5 * (1.0 - mu * mu);
        const double mid = 0.5 * (upper + lower);
        const double half_thick = 0.8 + 0.2 * ex.mouth_curvature + 0.5 * (lower - upper);
        const double edge = coverage((std::abs(mu) - 1.0) * mouth_hw);
        blend(v, 0.25, coverage(std::abs(y - mid) - half_thick) * edge);
        if (lower - upper > 0.6) blend(v, 0.04, coverage(std::abs(y - mid) - (half_thick - 0.8)) * edge);
      }

      v += rng.normal(0.0, 0.02);
      img.at(py, px) = static_cast<float>(clamp01(v));
    }
  }
  return img;
}

}  // namespace bdlab
