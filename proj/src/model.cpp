#include "bdlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bdlab/errors.hpp"
#include "bdlab/ops.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {
namespace {

constexpr std::size_t kInferenceChunk = 256;

const char* kind_token(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::GlobalAvgPool: return "gap";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Dropout: return "dropout";
  }
  return "?";
}

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

std::string layers_to_string(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (i) os << ' ';
    os << kind_token(l.kind);
    switch (l.kind) {
      case LayerKind::Conv: os << ':' << l.out << ':' << l.kernel << ':' << l.pad; break;
      case LayerKind::MaxPool: os << ':' << l.kernel; break;
      case LayerKind::Dense: os << ':' << l.out; break;
      case LayerKind::Dropout: os << ':' << l.rate; break;
      default: break;
    }
  }
  return os.str();
}

std::vector<LayerSpec> layers_from_string(const std::string& text) {
  std::vector<LayerSpec> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) {
    std::vector<std::string> parts;
    std::stringstream ts(tok);
    for (std::string p; std::getline(ts, p, ':');) parts.push_back(p);
    auto num = [&](std::size_t i) -> std::size_t {
      if (i >= parts.size()) throw FormatError("layer token '" + tok + "' is missing fields", 0);
      return std::stoul(parts[i]);
    };
    const auto& k = parts.at(0);
    if (k == "conv") out.push_back(LayerSpec::conv(num(1), num(2), num(3)));
    else if (k == "relu") out.push_back(LayerSpec::relu());
    else if (k == "maxpool") out.push_back(LayerSpec::max_pool(num(1)));
    else if (k == "gap") out.push_back(LayerSpec::gap());
    else if (k == "flatten") out.push_back(LayerSpec::flatten());
    else if (k == "dense") out.push_back(LayerSpec::dense(num(1)));
    else if (k == "dropout") {
      if (parts.size() < 2) throw FormatError("dropout token without rate", 0);
      out.push_back(LayerSpec::dropout(std::stod(parts[1])));
    } else {
      throw FormatError("unknown layer token '" + tok + "'", 0);
    }
  }
  return out;
}

Model::Model(std::vector<LayerSpec> layers, InputShape input, int num_classes, std::uint64_t seed)
    : layers_(std::move(layers)), input_(input), num_classes_(num_classes), seed_(seed) {
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (layers_.empty() || layers_.back().kind != LayerKind::Dense)
    throw ConfigError("model must end with a dense layer");
  if (layers_.back().out != static_cast<std::size_t>(num_classes))
    throw ConfigError("final dense width " + std::to_string(layers_.back().out) + " != class count " +
                      std::to_string(num_classes));

  Rng rng(seed);
  std::size_t c = input.channels, h = input.height, w = input.width, flat = 0;
  bool spatial = true;
  param_index_.assign(layers_.size(), -1);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string tag = "L" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv: {
        if (!spatial) throw ConfigError("conv layer after flattening");
        if (h + 2 * l.pad < l.kernel || w + 2 * l.pad < l.kernel) throw ConfigError("conv kernel exceeds feature map");
        param_index_[i] = static_cast<int>(params_.size());
        params_.emplace_back(tag + ".weight", he_uniform({l.out, c, l.kernel, l.kernel}, c * l.kernel * l.kernel, rng));
        params_.emplace_back(tag + ".bias", Tensor({l.out}));
        c = l.out;
        h = h + 2 * l.pad - l.kernel + 1;
        w = w + 2 * l.pad - l.kernel + 1;
        break;
      }
      case LayerKind::MaxPool:
        if (!spatial || l.kernel == 0 || h < l.kernel || w < l.kernel) throw ConfigError("max-pool does not fit");
        h /= l.kernel;
        w /= l.kernel;
        break;
      case LayerKind::GlobalAvgPool:
        if (!spatial) throw ConfigError("global pooling after flattening");
        spatial = false;
        flat = c;
        break;
      case LayerKind::Flatten:
        if (spatial) flat = c * h * w;
        spatial = false;
        break;
      case LayerKind::Dense: {
        if (spatial) throw ConfigError("dense layer needs flattened input");
        param_index_[i] = static_cast<int>(params_.size());
        params_.emplace_back(tag + ".weight", he_uniform({flat, l.out}, flat, rng));
        params_.emplace_back(tag + ".bias", Tensor({l.out}));
        flat = l.out;
        break;
      }
      case LayerKind::Dropout:
        if (!(l.rate >= 0.0 && l.rate < 1.0)) throw ConfigError("dropout rate must be in [0,1)");
        break;
      case LayerKind::Relu: break;
    }
  }
}

Model::Output Model::forward(Graph& g, Var x, bool training, std::uint64_t dropout_seed) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != input_.channels)
    throw ShapeError("model input must be [N," + std::to_string(input_.channels) + ",H,W], got " + shape_str(s));
  Var cur = x, pen = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (i + 1 == layers_.size()) pen = cur;
    const int p = param_index_[i];
    switch (l.kind) {
      case LayerKind::Conv:
        cur = ops::conv2d(cur, g.param(params_[p]), g.param(params_[p + 1]), l.pad);
        break;
      case LayerKind::Relu: cur = ops::relu(cur); break;
      case LayerKind::MaxPool: cur = ops::max_pool2d(cur, l.kernel); break;
      case LayerKind::GlobalAvgPool: cur = ops::global_avg_pool(cur); break;
      case LayerKind::Flatten: cur = ops::flatten(cur); break;
      case LayerKind::Dense: cur = ops::dense(cur, g.param(params_[p]), g.param(params_[p + 1])); break;
      case LayerKind::Dropout: cur = ops::dropout(cur, l.rate, derive_seed(dropout_seed, i), training); break;
    }
  }
  return {cur, pen};
}

Tensor Model::run_inference(const Tensor& batch, bool want_penultimate) const {
  if (batch.rank() != 4) throw ShapeError("inference batch must be NCHW, got " + shape_str(batch.shape()));
  const std::size_t n = batch.dim(0), per = batch.size() / n;
  // Parameters are only read: the graph has gradients disabled.
  auto& self = const_cast<Model&>(*this);
  Tensor out;
  std::size_t width = 0;
  for (std::size_t start = 0; start < n; start += kInferenceChunk) {
    const std::size_t m = std::min(kInferenceChunk, n - start);
    Shape cs = batch.shape();
    cs[0] = m;
    Tensor chunk(cs, std::vector<double>(batch.vec().begin() + static_cast<long>(start * per),
                                         batch.vec().begin() + static_cast<long>((start + m) * per)));
    Graph g;
    g.set_grad_enabled(false);
    auto res = self.forward(g, g.constant(std::move(chunk)), false);
    const Tensor& v = want_penultimate ? res.penultimate.value() : res.logits.value();
    if (out.empty()) {
      width = v.size() / m;
      out = Tensor({n, width});
    }
    std::copy(v.vec().begin(), v.vec().end(), out.vec().begin() + static_cast<long>(start * width));
  }
  return out;
}

Tensor Model::logits(const Tensor& batch) const { return run_inference(batch, false); }
Tensor Model::probabilities(const Tensor& batch) const { return ops::softmax_rows(logits(batch)); }
Tensor Model::penultimate(const Tensor& batch) const { return run_inference(batch, true); }

std::vector<int> Model::predict(const Tensor& batch) const {
  const Tensor l = logits(batch);
  const std::size_t n = l.dim(0), k = l.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = l.ptr() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

std::size_t Model::penultimate_width() const {
  const int p = param_index_.back();
  return params_[static_cast<std::size_t>(p)].value.dim(0);
}

std::vector<Parameter*> Model::trainable_parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p.trainable) out.push_back(&p);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void Model::round_to_float() {
  for (auto& p : params_)
    for (auto& v : p.value.data()) v = static_cast<float>(v);
}

Model build_small_cnn(InputShape input, int num_classes, std::uint64_t seed, std::vector<std::size_t> conv_widths,
                      std::size_t hidden, double dropout, bool global_pool) {
  if (conv_widths.size() < 2 || conv_widths.size() > 4) throw ConfigError("small CNN takes 2 to 4 conv blocks");
  std::vector<LayerSpec> layers;
  for (std::size_t i = 0; i < conv_widths.size(); ++i) {
    layers.push_back(LayerSpec::conv(conv_widths[i], 3, 1));
    layers.push_back(LayerSpec::relu());
    if (i + 1 < conv_widths.size() || !global_pool) layers.push_back(LayerSpec::max_pool(2));
  }
  layers.push_back(global_pool ? LayerSpec::gap() : LayerSpec::flatten());
  layers.push_back(LayerSpec::dense(hidden));
  layers.push_back(LayerSpec::relu());
  if (dropout > 0.0) layers.push_back(LayerSpec::dropout(dropout));
  layers.push_back(LayerSpec::dense(static_cast<std::size_t>(num_classes)));
  Model m(std::move(layers), input, num_classes, seed);
  if (m.parameter_count() > 200000) throw ConfigError("small CNN exceeds 200k parameters");
  return m;
}

}  // namespace bdlab
