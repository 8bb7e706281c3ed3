#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bdlab/augment.hpp"
#include "bdlab/dataset.hpp"
#include "bdlab/model.hpp"

namespace bdlab {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;              // 0 runs the loop without updating weights
  double decay_at = 0.7;         // fraction of epochs after which lr is scaled
  double decay_factor = 0.1;
  bool augment = false;
  AugmentConfig augment_cfg{};
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_accuracy = 0.0;  // percent
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Adam on mean cross-entropy. After every epoch the weights are rounded to
// float32 and scored on `val`; the model is left holding the best-scoring
// snapshot (clean validation accuracy, earliest epoch on ties). Throws
// TrainingError naming the epoch if the loss stops being finite.
TrainHistory train(Model& model, const LabeledDataset& train_set, const LabeledDataset& val,
                   const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Copies the pretrained body, swaps in a freshly initialized head with
// `num_classes` outputs, freezes every parameter before the last conv block,
// and trains the rest on `train_set`.
Model fine_tune(const Model& pretrained, int num_classes, const LabeledDataset& train_set,
                const LabeledDataset& val, const TrainConfig& cfg, TrainHistory* history = nullptr,
                const EpochCallback& on_epoch = {});

struct AttackMetrics {
  double ca = 0.0;   // percent
  double asr = 0.0;  // percent
};

// Percent of samples whose prediction equals their label.
double accuracy(const Model& model, const LabeledDataset& ds);
std::vector<int> predict(const Model& model, const LabeledDataset& ds);
// CA on `clean`; ASR on `malicious`, whose labels are the attacker's targets.
AttackMetrics evaluate(const Model& model, const LabeledDataset& clean, const LabeledDataset& malicious);

}  // namespace bdlab
