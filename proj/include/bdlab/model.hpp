#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bdlab/graph.hpp"
#include "bdlab/tensor.hpp"

namespace bdlab {

enum class LayerKind { Conv, Relu, MaxPool, GlobalAvgPool, Flatten, Dense, Dropout };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t out = 0;     // Conv: output channels, Dense: output width
  std::size_t kernel = 0;  // Conv: kernel side, MaxPool: window
  std::size_t pad = 0;
  double rate = 0.0;       // Dropout

  static LayerSpec conv(std::size_t out, std::size_t k, std::size_t pad) { return {LayerKind::Conv, out, k, pad, 0.0}; }
  static LayerSpec relu() { return {LayerKind::Relu, 0, 0, 0, 0.0}; }
  static LayerSpec max_pool(std::size_t w) { return {LayerKind::MaxPool, 0, w, 0, 0.0}; }
  static LayerSpec gap() { return {LayerKind::GlobalAvgPool, 0, 0, 0, 0.0}; }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, 0.0}; }
  static LayerSpec dense(std::size_t out) { return {LayerKind::Dense, out, 0, 0, 0.0}; }
  static LayerSpec dropout(double r) { return {LayerKind::Dropout, 0, 0, 0, r}; }
};

std::string layers_to_string(const std::vector<LayerSpec>& layers);
std::vector<LayerSpec> layers_from_string(const std::string& text);

struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  bool operator==(const InputShape&) const = default;
};

// Sequential classifier. The penultimate representation is the tensor fed into
// the final Dense layer.
class Model {
 public:
  Model() = default;
  // Builds parameters with He-uniform weights drawn from `seed`; weights are
  // float32-representable so a saved model reloads bit-identically.
  Model(std::vector<LayerSpec> layers, InputShape input, int num_classes, std::uint64_t seed);

  struct Output {
    Var logits;
    Var penultimate;
  };
  // Records the forward pass on `g`. Dropout is active only when `training`.
  Output forward(Graph& g, Var x, bool training, std::uint64_t dropout_seed = 0);

  // Inference helpers over an NCHW batch; processed in chunks, no gradients.
  Tensor logits(const Tensor& batch) const;
  Tensor probabilities(const Tensor& batch) const;
  Tensor penultimate(const Tensor& batch) const;
  std::vector<int> predict(const Tensor& batch) const;

  const std::vector<LayerSpec>& layers() const { return layers_; }
  const InputShape& input() const { return input_; }
  int num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t penultimate_width() const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Parameter*> trainable_parameters();
  std::size_t parameter_count() const;
  // Index of the first parameter owned by layer `l`, or -1 if it has none.
  int first_param_of_layer(std::size_t l) const { return param_index_[l]; }

  // Rounds every parameter to the nearest float32.
  void round_to_float();

  // Free-form provenance recorded in saved files.
  std::map<std::string, std::string> metadata;

 private:
  Tensor run_inference(const Tensor& batch, bool want_penultimate) const;

  std::vector<LayerSpec> layers_;
  InputShape input_;
  int num_classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Parameter> params_;
  std::vector<int> param_index_;
};

// Conv blocks with 3x3 kernels and 2x2 pooling, then either a flattened map or
// global average pooling, a hidden dense layer (the penultimate
// representation) and a linear head.
Model build_small_cnn(InputShape input, int num_classes, std::uint64_t seed,
                      std::vector<std::size_t> conv_widths = {16, 32, 64}, std::size_t hidden = 64,
                      double dropout = 0.25, bool global_pool = false);

}  // namespace bdlab
