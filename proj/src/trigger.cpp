#include "bdlab/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {
namespace {

using Plane = std::vector<double>;

Plane channel_plane(const Image& img, std::size_t c) {
  Plane p(img.height * img.width);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.pixels[i * img.channels + c];
  return p;
}

void store_plane(Image& img, std::size_t c, const Plane& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    img.pixels[i * img.channels + c] = static_cast<float>(std::clamp(p[i], 0.0, 1.0));
}

// One 3x3 box blur pass with edge replication; constants are fixed points.
Plane box_blur(const Plane& src, std::size_t h, std::size_t w) {
  Plane dst(src.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const auto yy = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(h) - 1));
          const auto xx = static_cast<std::size_t>(std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(w) - 1));
          s += src[yy * w + xx];
        }
      dst[y * w + x] = s / 9.0;
    }
  return dst;
}

double sample_bilinear(const Plane& p, std::size_t h, std::size_t w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
  const auto y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * p[y0 * w + x0] + fx * p[y0 * w + x1]) +
         fy * ((1 - fx) * p[y1 * w + x0] + fx * p[y1 * w + x1]);
}

double smoothstep(double e0, double e1, double v) {
  const double t = std::clamp((v - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

void check_strength(double s) {
  if (!(s > 0.0 && s <= 1.0)) throw ConfigError("filter strength must be in (0,1], got " + std::to_string(s));
}

}  // namespace

std::string_view filter_name(FilterKind k) {
  switch (k) {
    case FilterKind::Smooth: return "smooth";
    case FilterKind::AgeLines: return "age-lines";
    case FilterKind::BrightenContour: return "brighten-contour";
    case FilterKind::SmileWarp: return "smile-warp";
  }
  return "unknown";
}

FilterKind parse_filter(std::string_view name) {
  for (auto k : {FilterKind::Smooth, FilterKind::AgeLines, FilterKind::BrightenContour, FilterKind::SmileWarp})
    if (filter_name(k) == name) return k;
  throw ConfigError("unknown filter '" + std::string(name) + "' (valid: smooth, age-lines, brighten-contour, smile-warp)");
}

std::uint64_t content_hash(const Image& img) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (float v : img.pixels) {
    h ^= static_cast<std::uint64_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Trigger::validate() const {
  if (const auto* p = std::get_if<StaticPatch>(&kind)) {
    if (p->pattern.empty()) throw ConfigError("static patch has an empty pattern");
    if (p->mask.size() != p->pattern.height * p->pattern.width)
      throw ConfigError("static patch mask and pattern shapes differ");
  } else if (const auto* f = std::get_if<FilterAnalog>(&kind)) {
    check_strength(f->strength);
  } else if (const auto* e = std::get_if<ExpressionShift>(&kind)) {
    if (!std::isfinite(e->delta) || e->delta == 0.0) throw ConfigError("expression shift delta must be nonzero");
  }
}

Trigger make_square_patch(std::size_t row, std::size_t col, std::size_t size, float value, std::size_t channels) {
  if (size == 0) throw ConfigError("patch size must be positive");
  StaticPatch p{row, col, Image(size, size, channels, value), std::vector<std::uint8_t>(size * size, 1)};
  return {p, size == 1 ? "dot" : "patch" + std::to_string(size) + "x" + std::to_string(size)};
}

Trigger make_filter(FilterKind kind, double strength, std::uint64_t seed) {
  Trigger t{FilterAnalog{kind, strength, seed}, std::string(filter_name(kind))};
  t.validate();
  return t;
}

Trigger make_expression(Expression which, double delta) {
  Trigger t{ExpressionShift{which, delta}, std::string(expression_name(which))};
  t.validate();
  return t;
}

Image filter_smooth(const Image& img, double strength) {
  check_strength(strength);
  const int passes = std::max(1, static_cast<int>(std::lround(48.0 * strength)));
  const double blend = 0.5 * strength;
  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const Plane orig = channel_plane(img, c);
    Plane p = orig;
    for (int i = 0; i < passes; ++i) p = box_blur(p, img.height, img.width);
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = (1.0 - blend) * orig[i] + blend * p[i];
    store_plane(out, c, p);
  }
  return out;
}

Image filter_age_lines(const Image& img, double strength, std::uint64_t seed) {
  check_strength(strength);
  const std::size_t h = img.height, w = img.width;
  Rng rng(derive_seed(seed, content_hash(img)));
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double period = rng.uniform(2.5, 4.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double kx = 2.0 * std::numbers::pi * std::cos(theta) / period;
  const double ky = 2.0 * std::numbers::pi * std::sin(theta) / period;

  const auto gray = to_grayscale(img);
  Plane grad(h * w, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gx = gray[y * w + std::min(x + 1, w - 1)] - gray[y * w + (x == 0 ? 0 : x - 1)];
      const double gy = gray[std::min(y + 1, h - 1) * w + x] - gray[(y == 0 ? 0 : y - 1) * w + x];
      grad[y * w + x] = 0.5 * std::sqrt(gx * gx + gy * gy);
    }
  grad = box_blur(grad, h, w);

  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    Plane p = channel_plane(img, c);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t i = y * w + x;
        const double amp = strength * (0.012 + 0.5 * grad[i]);
        p[i] = p[i] * (1.0 - 0.06 * strength) + amp * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) + phase);
      }
    store_plane(out, c, p);
  }
  return out;
}

Image filter_brighten_contour(const Image& img, double strength) {
  check_strength(strength);
  const std::size_t h = img.height, w = img.width;
  const auto gray = to_grayscale(img);
  double mass = 0.0, my = 0.0, mx = 0.0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double v = gray[y * w + x];
      mass += v;
      my += v * static_cast<double>(y);
      mx += v * static_cast<double>(x);
    }
  const double cy = mass > 0 ? my / mass : 0.5 * static_cast<double>(h - 1);
  const double cx = mass > 0 ? mx / mass : 0.5 * static_cast<double>(w - 1);
  const double rmax = std::hypot(static_cast<double>(h), static_cast<double>(w));

  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    Plane p = channel_plane(img, c);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double r = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx) / rmax;
        const double ramp = 1.0 - r;
        double& v = p[y * w + x];
        v += strength * ramp * (0.05 + 0.15 * v);
      }
    store_plane(out, c, p);
  }
  return out;
}

Image filter_smile_warp(const Image& img, double strength, std::uint64_t seed) {
  check_strength(strength);
  const std::size_t h = img.height, w = img.width;
  Rng rng(derive_seed(seed, content_hash(img)));
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double wavelength = rng.uniform(0.35, 0.5) * static_cast<double>(w);
  const double hf = static_cast<double>(h);

  Image out = img;
  for (std::size_t c = 0; c < img.channels; ++c) {
    const Plane src = channel_plane(img, c);
    Plane p(src.size());
    for (std::size_t y = 0; y < h; ++y) {
      const double yy = static_cast<double>(y);
      // Sub-pixel swirl everywhere, with the larger displacement in the lower third.
      const double mag = strength * (0.7 + 0.5 * smoothstep(0.5 * hf, 0.7 * hf, yy));
      for (std::size_t x = 0; x < w; ++x) {
        const double xx = static_cast<double>(x);
        const double arg = 2.0 * std::numbers::pi * xx / wavelength + phase;
        p[y * w + x] = sample_bilinear(src, h, w, yy + mag * std::sin(arg), xx + mag * std::cos(arg));
      }
    }
    store_plane(out, c, p);
  }
  return out;
}

Image apply_trigger(const Image& image, const Trigger& trigger) {
  if (const auto* p = std::get_if<StaticPatch>(&trigger.kind)) {
    if (p->pattern.channels != image.channels)
      throw GeometryError("patch has " + std::to_string(p->pattern.channels) + " channels, image has " +
                          std::to_string(image.channels));
    if (p->row + p->pattern.height > image.height || p->col + p->pattern.width > image.width)
      throw GeometryError("patch at (" + std::to_string(p->row) + "," + std::to_string(p->col) + ") of size " +
                          std::to_string(p->pattern.height) + "x" + std::to_string(p->pattern.width) +
                          " exceeds image bounds " + std::to_string(image.height) + "x" + std::to_string(image.width));
    Image out = image;
    for (std::size_t y = 0; y < p->pattern.height; ++y)
      for (std::size_t x = 0; x < p->pattern.width; ++x) {
        if (!p->mask[y * p->pattern.width + x]) continue;
        for (std::size_t c = 0; c < image.channels; ++c) out.at(p->row + y, p->col + x, c) = p->pattern.at(y, x, c);
      }
    return out;
  }
  if (const auto* f = std::get_if<FilterAnalog>(&trigger.kind)) {
    switch (f->kind) {
      case FilterKind::Smooth: return filter_smooth(image, f->strength);
      case FilterKind::AgeLines: return filter_age_lines(image, f->strength, f->seed);
      case FilterKind::BrightenContour: return filter_brighten_contour(image, f->strength);
      case FilterKind::SmileWarp: return filter_smile_warp(image, f->strength, f->seed);
    }
  }
  throw ConfigError("expression triggers apply only to face-backed samples");
}

Image apply_trigger(const FaceRecord& face, const Trigger& trigger) {
  if (const auto* e = std::get_if<ExpressionShift>(&trigger.kind)) {
    FaceParams p = face.params;
    p.set(e->which, p.get(e->which) + e->delta);
    return render_face(p, face.jitter_seed);
  }
  return apply_trigger(render_face(face.params, face.jitter_seed), trigger);
}

Image apply_trigger(const LabeledDataset& ds, std::size_t i, const Trigger& trigger) {
  if (trigger.needs_faces()) {
    if (!ds.face_backed()) throw ConfigError("expression trigger '" + trigger.name + "' needs a face-backed dataset");
    return apply_trigger(ds.faces.at(i), trigger);
  }
  return apply_trigger(ds.images.at(i), trigger);
}

std::map<std::string, std::string> trigger_to_kv(const Trigger& t) {
  std::map<std::string, std::string> kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  if (const auto* p = std::get_if<StaticPatch>(&t.kind)) {
    if (p->pattern.height != p->pattern.width) throw ConfigError("only square patches serialize to text");
    const float v = p->pattern.pixels.front();
    for (float q : p->pattern.pixels)
      if (q != v) throw ConfigError("only constant-valued patches serialize to text");
    for (auto m : p->mask)
      if (!m) throw ConfigError("only fully-masked patches serialize to text");
    kv["trigger.kind"] = "patch";
    kv["trigger.row"] = std::to_string(p->row);
    kv["trigger.col"] = std::to_string(p->col);
    kv["trigger.size"] = std::to_string(p->pattern.height);
    kv["trigger.value"] = num(v);
  } else if (const auto* f = std::get_if<FilterAnalog>(&t.kind)) {
    kv["trigger.kind"] = "filter";
    kv["trigger.filter"] = std::string(filter_name(f->kind));
    kv["trigger.strength"] = num(f->strength);
    kv["trigger.seed"] = std::to_string(f->seed);
  } else if (const auto* e = std::get_if<ExpressionShift>(&t.kind)) {
    kv["trigger.kind"] = "expression";
    kv["trigger.expression"] = std::string(expression_name(e->which));
    kv["trigger.delta"] = num(e->delta);
  }
  return kv;
}

Trigger trigger_from_kv(const std::map<std::string, std::string>& kv) {
  auto get = [&](const std::string& k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) throw ConfigError("missing key " + k);
    return it->second;
  };
  auto get_or = [&](const std::string& k, const std::string& dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : it->second;
  };
  auto to_d = [](const std::string& k, const std::string& s) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("key " + k + ": not a number: '" + s + "'");
    }
  };
  auto to_u = [&](const std::string& k, const std::string& s) {
    const double v = to_d(k, s);
    if (v < 0 || v != std::floor(v)) throw ConfigError("key " + k + ": expected a non-negative integer");
    return static_cast<std::uint64_t>(v);
  };
  const auto& kind = get("trigger.kind");
  Trigger t;
  if (kind == "patch") {
    t = make_square_patch(to_u("trigger.row", get("trigger.row")), to_u("trigger.col", get("trigger.col")),
                          to_u("trigger.size", get_or("trigger.size", "1")),
                          static_cast<float>(to_d("trigger.value", get_or("trigger.value", "1"))));
  } else if (kind == "filter") {
    t = make_filter(parse_filter(get("trigger.filter")), to_d("trigger.strength", get_or("trigger.strength", "0.5")),
                    to_u("trigger.seed", get_or("trigger.seed", "0")));
  } else if (kind == "expression") {
    t = make_expression(parse_expression(get("trigger.expression")), to_d("trigger.delta", get_or("trigger.delta", "1")));
  } else {
    throw ConfigError("trigger.kind must be patch, filter or expression, got '" + kind + "'");
  }
  if (auto it = kv.find("trigger.name"); it != kv.end()) t.name = it->second;
  t.validate();
  return t;
}

}  // namespace bdlab
