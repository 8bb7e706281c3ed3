#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bdlab/faces.hpp"
#include "bdlab/image.hpp"
#include "bdlab/tensor.hpp"

namespace bdlab {

enum class Split { Train, Test };

// Source parameters for a rendered face, kept so expression triggers can
// re-render the same sample.
struct FaceRecord {
  FaceParams params;
  std::uint64_t jitter_seed = 0;
};

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<int> labels;
  // Ground-truth class before any relabeling by an attacker.
  std::vector<int> true_labels;
  std::vector<bool> poisoned;
  // Stable identifier of the source sample, preserved through subset/poison.
  std::vector<std::uint64_t> ids;
  // Empty unless the dataset was rendered from face parameters.
  std::vector<FaceRecord> faces;
  Split split = Split::Train;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }
  bool face_backed() const { return !faces.empty(); }

  void push_back(Image img, int label, bool is_poisoned = false, int true_label = -1,
                 std::uint64_t id = kAutoId);
  static constexpr std::uint64_t kAutoId = ~std::uint64_t{0};
  // Throws ConfigError if any invariant is violated.
  void validate() const;

  std::vector<std::size_t> indices_of_class(int label) const;
  std::vector<std::size_t> class_counts() const;
  LabeledDataset subset(std::span<const std::size_t> idx) const;
  // First `per_class` images of each class, in dataset order.
  LabeledDataset take_per_class(std::size_t per_class) const;
  std::size_t poisoned_count() const;
};

// Stratified split: per class, a seeded shuffle then the first round(ratio*n)
// go to train. Pure function of (dataset, ratio, seed).
std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds, double train_ratio,
                                                           std::uint64_t seed);

// Concatenate two datasets with identical image shapes and class counts.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

// Pack images[idx] into an NCHW tensor.
Tensor to_batch(const LabeledDataset& ds, std::span<const std::size_t> idx);
Tensor to_batch(std::span<const Image> images);

}  // namespace bdlab
