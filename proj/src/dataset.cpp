#include "bdlab/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

void LabeledDataset::push_back(Image img, int label, bool is_poisoned, int true_label, std::uint64_t id) {
  ids.push_back(id == kAutoId ? images.size() : id);
  images.push_back(std::move(img));
  labels.push_back(label);
  true_labels.push_back(true_label < 0 ? label : true_label);
  poisoned.push_back(is_poisoned);
}

void LabeledDataset::validate() const {
  if (num_classes < 2) throw ConfigError("dataset must have at least 2 classes, has " + std::to_string(num_classes));
  if (labels.size() != images.size() || true_labels.size() != images.size() || poisoned.size() != images.size() ||
      ids.size() != images.size())
    throw ConfigError("dataset column lengths disagree (" + std::to_string(images.size()) + " images, " +
                      std::to_string(labels.size()) + " labels)");
  if (face_backed() && faces.size() != images.size()) throw ConfigError("face records do not cover every image");
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].same_shape(images.front()))
      throw ConfigError("image " + std::to_string(i) + " has a different shape from image 0");
    if (labels[i] < 0 || labels[i] >= num_classes || true_labels[i] < 0 || true_labels[i] >= num_classes)
      throw ConfigError("label out of range at index " + std::to_string(i));
  }
}

std::vector<std::size_t> LabeledDataset::indices_of_class(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) out.push_back(i);
  return out;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> idx) const {
  LabeledDataset out;
  out.split = split;
  out.num_classes = num_classes;
  out.images.reserve(idx.size());
  for (auto i : idx) {
    out.push_back(images.at(i), labels.at(i), poisoned.at(i), true_labels.at(i), ids.at(i));
    if (face_backed()) out.faces.push_back(faces.at(i));
  }
  return out;
}

LabeledDataset LabeledDataset::take_per_class(std::size_t per_class) const {
  std::vector<std::size_t> taken(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(labels[i])];
    if (t < per_class) {
      idx.push_back(i);
      ++t;
    }
  }
  return subset(idx);
}

std::size_t LabeledDataset::poisoned_count() const {
  return static_cast<std::size_t>(std::count(poisoned.begin(), poisoned.end(), true));
}

std::pair<LabeledDataset, LabeledDataset> split_train_test(const LabeledDataset& ds, double train_ratio,
                                                           std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train ratio must be in (0,1)");
  std::vector<std::size_t> train_idx, test_idx;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto idx = ds.indices_of_class(c);
    if (idx.empty()) continue;
    const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(idx.size())));
    if (n_train == 0 || n_train == idx.size())
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                        " images, too few to split into train and test");
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(idx.begin(), idx.end());
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<long>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<long>(n_train), idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  auto train = ds.subset(train_idx);
  auto test = ds.subset(test_idx);
  train.split = Split::Train;
  test.split = Split::Test;
  return {std::move(train), std::move(test)};
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.num_classes != b.num_classes) throw ConfigError("concat: class counts differ");
  if (!a.images.empty() && !b.images.empty() && !a.images.front().same_shape(b.images.front()))
    throw ConfigError("concat: image shapes differ");
  LabeledDataset out = a;
  for (std::size_t i = 0; i < b.size(); ++i) out.push_back(b.images[i], b.labels[i], b.poisoned[i], b.true_labels[i], b.ids[i]);
  if (a.face_backed() && b.face_backed())
    out.faces.insert(out.faces.end(), b.faces.begin(), b.faces.end());
  else
    out.faces.clear();
  return out;
}

Tensor to_batch(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("to_batch: no images");
  const auto& f = images.front();
  const std::size_t hw = f.height * f.width;
  Tensor out({images.size(), f.channels, f.height, f.width});
  for (std::size_t s = 0; s < images.size(); ++s) {
    const auto& img = images[s];
    if (!img.same_shape(f)) throw ShapeError("to_batch: mixed image shapes");
    double* dst = out.ptr() + s * f.channels * hw;
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < f.channels; ++c) dst[c * hw + p] = img.pixels[p * f.channels + c];
  }
  return out;
}

Tensor to_batch(const LabeledDataset& ds, std::span<const std::size_t> idx) {
  std::vector<Image> imgs;
  imgs.reserve(idx.size());
  for (auto i : idx) imgs.push_back(ds.images.at(i));
  return to_batch(imgs);
}

}  // namespace bdlab
