#include "bdlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bdlab/errors.hpp"
#include "bdlab/ops.hpp"
#include "bdlab/optim.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {
namespace {

void check_compatible(const Model& m, const LabeledDataset& ds, const char* what) {
  if (ds.size() == 0) throw ConfigError(std::string(what) + " set is empty");
  const auto& img = ds.images.front();
  if (img.channels != m.input().channels)
    throw ConfigError(std::string(what) + " images have " + std::to_string(img.channels) + " channels, model expects " +
                      std::to_string(m.input().channels));
  if (ds.num_classes != m.num_classes())
    throw ConfigError(std::string(what) + " set has " + std::to_string(ds.num_classes) + " classes, model has " +
                      std::to_string(m.num_classes()));
}

std::vector<Tensor> snapshot(const Model& m) {
  std::vector<Tensor> s;
  for (const auto& p : m.parameters()) s.push_back(p.value);
  return s;
}

void restore(Model& m, const std::vector<Tensor>& s) {
  for (std::size_t i = 0; i < s.size(); ++i) m.parameters()[i].value = s[i];
}

}  // namespace

std::vector<int> predict(const Model& model, const LabeledDataset& ds) {
  if (ds.size() == 0) return {};
  std::vector<int> out;
  out.reserve(ds.size());
  constexpr std::size_t kChunk = 512;
  for (std::size_t s = 0; s < ds.size(); s += kChunk) {
    std::vector<std::size_t> idx(std::min(kChunk, ds.size() - s));
    std::iota(idx.begin(), idx.end(), s);
    const auto p = model.predict(to_batch(ds, idx));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

double accuracy(const Model& model, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ConfigError("accuracy of an empty set");
  const auto p = predict(model, ds);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == ds.labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(p.size());
}

AttackMetrics evaluate(const Model& model, const LabeledDataset& clean, const LabeledDataset& malicious) {
  if (clean.size() == 0 || malicious.size() == 0) throw ConfigError("evaluate needs nonempty clean and malicious sets");
  return {accuracy(model, clean), accuracy(model, malicious)};
}

TrainHistory train(Model& model, const LabeledDataset& train_set, const LabeledDataset& val, const TrainConfig& cfg,
                   const EpochCallback& on_epoch) {
  if (cfg.epochs == 0) throw ConfigError("epochs must be at least 1");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (cfg.lr < 0.0) throw ConfigError("learning rate must be nonnegative");
  check_compatible(model, train_set, "training");
  check_compatible(model, val, "validation");

  const bool update = cfg.lr > 0.0;
  Adam adam(AdamConfig{update ? cfg.lr : 1.0});
  const auto decay_epoch = static_cast<std::size_t>(std::floor(cfg.decay_at * static_cast<double>(cfg.epochs)));
  auto params = model.trainable_parameters();

  TrainHistory hist;
  std::vector<Tensor> best = snapshot(model);
  double best_acc = -1.0;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 0x7261696eULL));
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (update && epoch == decay_epoch && epoch > 0) adam.set_lr(cfg.lr * cfg.decay_factor);
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t m = std::min(cfg.batch_size, order.size() - s);
      std::vector<Image> imgs;
      std::vector<int> targets;
      imgs.reserve(m);
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t i = order[s + j];
        imgs.push_back(cfg.augment ? bdlab::augment(train_set.images[i], cfg.augment_cfg, derive_seed(step, i))
                                   : train_set.images[i]);
        targets.push_back(train_set.labels[i]);
      }
      Graph g;
      double loss = 0.0;
      try {
        auto out = model.forward(g, g.constant(to_batch(imgs)), true, derive_seed(cfg.seed, step));
        Var l = ops::cross_entropy(out.logits, targets);
        loss = l.value()[0];
        if (!std::isfinite(loss)) throw NumericError("loss is not finite");
        if (update) {
          g.backward(l);
          adam.step(params);
        }
      } catch (const NumericError& e) {
        throw TrainingError("training diverged in epoch " + std::to_string(epoch + 1) + ": " + e.what(),
                            static_cast<int>(epoch + 1));
      }
      loss_sum += loss;
      ++batches;
      ++step;
    }
    model.round_to_float();
    EpochStats st{epoch + 1, loss_sum / static_cast<double>(batches), accuracy(model, val)};
    hist.epochs.push_back(st);
    if (on_epoch) on_epoch(st);
    if (st.val_accuracy > best_acc) {
      best_acc = st.val_accuracy;
      best = snapshot(model);
      hist.best_epoch = st.epoch;
    }
  }
  restore(model, best);
  hist.best_val_accuracy = best_acc;
  return hist;
}

Model fine_tune(const Model& pretrained, int num_classes, const LabeledDataset& train_set, const LabeledDataset& val,
                const TrainConfig& cfg, TrainHistory* history, const EpochCallback& on_epoch) {
  const auto& layers = pretrained.layers();
  if (train_set.size() == 0) throw ConfigError("fine-tune set is empty");
  const auto& img = train_set.images.front();
  if (img.channels != pretrained.input().channels)
    throw ConfigError("fine-tune images have " + std::to_string(img.channels) + " channels, pretrained body expects " +
                      std::to_string(pretrained.input().channels));
  const bool has_flatten = std::any_of(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::Flatten; });
  if (has_flatten && (img.height != pretrained.input().height || img.width != pretrained.input().width))
    throw ConfigError("pretrained body flattens a fixed spatial size and cannot take " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + " inputs");

  std::vector<LayerSpec> new_layers = layers;
  new_layers.back().out = static_cast<std::size_t>(num_classes);
  const InputShape in{img.channels, img.height, img.width};
  Model m(new_layers, in, num_classes, derive_seed(pretrained.seed(), 0x68656164ULL));
  m.metadata = pretrained.metadata;

  std::size_t last_conv = 0;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].kind == LayerKind::Conv) last_conv = i;
  const int head = m.first_param_of_layer(layers.size() - 1);
  const int unfrozen_from = m.first_param_of_layer(last_conv);
  for (int i = 0; i < static_cast<int>(m.parameters().size()); ++i) {
    auto& p = m.parameters()[static_cast<std::size_t>(i)];
    if (i < head) p.value = pretrained.parameters()[static_cast<std::size_t>(i)].value;
    p.trainable = i >= unfrozen_from;
  }
  auto h = train(m, train_set, val, cfg, on_epoch);
  if (history) *history = h;
  return m;
}

}  // namespace bdlab
