#include "bdlab/defense_recon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bdlab/errors.hpp"
#include "bdlab/ops.hpp"
#include "bdlab/optim.hpp"
#include "bdlab/rng.hpp"
#include "bdlab/stats.hpp"

namespace bdlab {
namespace {

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor squashed(const Tensor& raw) {
  Tensor t = raw;
  for (auto& v : t.data()) v = sigmoid(v);
  return t;
}

struct Probe {
  double ce = 0.0;
  double l1 = 0.0;
  double hit = 0.0;
};

}  // namespace

ReversedTrigger reverse_trigger(const Model& model, const LabeledDataset& genuine, int target,
                                const CleanseConfig& cfg) {
  if (target < 0 || target >= model.num_classes()) throw ConfigError("reverse_trigger: target label out of range");
  if (genuine.size() == 0) throw ConfigError("reverse_trigger needs genuine samples");
  if (cfg.steps == 0 || cfg.samples == 0) throw ConfigError("reverse_trigger needs a nonzero step and sample budget");
  if (cfg.lr <= 0.0 || cfg.init_lambda < 0.0 || cfg.lambda_factor <= 1.0)
    throw ConfigError("reverse_trigger: bad optimizer or lambda settings");

  // Private, fully frozen copy so only the trigger variables receive gradients.
  Model frozen = model;
  for (auto& p : frozen.parameters()) p.trainable = false;

  std::vector<std::size_t> pick(genuine.size());
  std::iota(pick.begin(), pick.end(), 0);
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(target)));
  rng.shuffle(pick.begin(), pick.end());
  pick.resize(std::min(cfg.samples, pick.size()));
  const Tensor x = to_batch(genuine, pick);
  const std::size_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::vector<int> targets(pick.size(), target);

  Parameter raw_mask("mask", Tensor({h, w}));
  Parameter raw_pattern("pattern", Tensor({c, h, w}));
  for (auto& v : raw_mask.value.data()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : raw_pattern.value.data()) v = rng.uniform(-1.0, 1.0);
  std::vector<Parameter*> vars{&raw_mask, &raw_pattern};

  // Forward + backward at the current variables, leaving gradients in place.
  auto probe = [&](double lambda) {
    raw_mask.zero_grad();
    raw_pattern.zero_grad();
    Graph g;
    Var m = ops::sigmoid(g.param(raw_mask));
    Var p = ops::sigmoid(g.param(raw_pattern));
    Var blended = ops::mask_blend(g.constant(x), m, p);
    auto out = frozen.forward(g, blended, false);
    Var ce = ops::cross_entropy(out.logits, targets);
    Var l1 = ops::abs_sum(m);
    Var loss = ops::add(ce, ops::scale(l1, lambda));
    g.backward(loss);
    Probe r{ce.value()[0], l1.value()[0], 0.0};
    const auto& lg = out.logits.value();
    const std::size_t k = lg.dim(1);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pick.size(); ++i) {
      const double* row = lg.ptr() + i * k;
      hit += std::max_element(row, row + k) - row == target;
    }
    r.hit = static_cast<double>(hit) / static_cast<double>(pick.size());
    return r;
  };

  ReversedTrigger best;
  best.target = target;
  bool have_best = false, best_hits = false;
  auto consider = [&](const Probe& pr, double lambda) {
    const bool hits = pr.hit >= cfg.hit_threshold;
    bool better;
    if (!have_best) better = true;
    else if (hits != best_hits) better = hits;
    else if (hits) better = pr.l1 < best.l1;
    else better = pr.hit > best.hit_rate || (pr.hit == best.hit_rate && pr.l1 < best.l1);
    if (!better) return;
    have_best = true;
    best_hits = hits;
    best.mask = squashed(raw_mask.value);
    best.pattern = squashed(raw_pattern.value);
    best.l1 = pr.l1;
    best.hit_rate = pr.hit;
    best.lambda = lambda;
    best.loss = pr.ce + lambda * pr.l1;
  };

  double lambda = cfg.init_lambda;
  double lr = cfg.lr;
  Adam adam(AdamConfig{lr});
  Probe cur = probe(lambda);
  consider(cur, lambda);
  std::size_t above = 0, below = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double obj = cur.ce + lambda * cur.l1;
    const Tensor keep_m = raw_mask.value, keep_p = raw_pattern.value;
    const Tensor grad_m = raw_mask.grad, grad_p = raw_pattern.grad;
    const Adam keep_adam = adam;
    adam.set_lr(lr);
    adam.step(vars);
    const Probe next = probe(lambda);
    if (next.ce + lambda * next.l1 <= obj) {
      cur = next;
      best.accepted_objectives.push_back(next.ce + lambda * next.l1);
      best.accepted_lambdas.push_back(lambda);
      consider(cur, lambda);
      lr = std::min(cfg.lr, lr * 2.0);
    } else {
      raw_mask.value = keep_m;
      raw_pattern.value = keep_p;
      raw_mask.grad = grad_m;
      raw_pattern.grad = grad_p;
      adam = keep_adam;
      lr *= 0.5;
      ++best.rejected_steps;
    }
    if (!cfg.dynamic_lambda) continue;
    if (cur.hit >= cfg.hit_threshold) {
      ++above;
      below = 0;
    } else {
      ++below;
      above = 0;
    }
    // The gradient held for the next step must match the lambda it is taken with.
    if (above >= cfg.patience || below >= cfg.patience) {
      lambda = above ? lambda * cfg.lambda_factor : lambda / cfg.lambda_factor;
      above = below = 0;
      cur = probe(lambda);
    }
  }
  best.converged = best.hit_rate >= cfg.min_hit;
  return best;
}

Image apply_reversed(const Image& img, const ReversedTrigger& t) {
  if (t.mask.dim(0) != img.height || t.mask.dim(1) != img.width || t.pattern.dim(0) != img.channels)
    throw ShapeError("reversed trigger does not match image shape");
  Image out = img;
  const std::size_t hw = img.height * img.width;
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < img.channels; ++c) {
      const double m = t.mask[p];
      const double v = (1.0 - m) * img.pixels[p * img.channels + c] + m * t.pattern[c * hw + p];
      out.pixels[p * img.channels + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  return out;
}

double reverse_asr(const Model& model, const ReversedTrigger& t, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ConfigError("reverse ASR over an empty set");
  LabeledDataset probed = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    probed.images[i] = apply_reversed(ds.images[i], t);
    probed.labels[i] = t.target;
  }
  return accuracy(model, probed);
}

MadReport mad_outliers(std::span<const double> norms, double threshold) {
  if (norms.size() < 3) throw ConfigError("MAD outlier test needs at least 3 labels");
  MadReport r;
  r.median = median(std::vector<double>(norms.begin(), norms.end()));
  std::vector<double> dev;
  for (double x : norms) dev.push_back(std::abs(x - r.median));
  r.mad = median(dev);
  r.indices.assign(norms.size(), 0.0);
  if (r.mad == 0.0) {
    r.zero_dispersion = true;
    return r;
  }
  for (std::size_t i = 0; i < norms.size(); ++i) {
    r.indices[i] = dev[i] / (1.4826 * r.mad);
    if (r.indices[i] > threshold && norms[i] < r.median) r.flagged.push_back(static_cast<int>(i));
  }
  return r;
}

CleanseVerdict neural_cleanse(const Model& model, const LabeledDataset& genuine, const LabeledDataset& test,
                              const CleanseConfig& cfg, std::vector<int> labels) {
  if (labels.empty()) {
    labels.resize(static_cast<std::size_t>(model.num_classes()));
    std::iota(labels.begin(), labels.end(), 0);
  }
  CleanseVerdict v;
  v.labels = labels;
  for (int t : labels) {
    auto trig = reverse_trigger(model, genuine, t, cfg);
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < test.size(); ++i)
      if (test.true_labels[i] != t) others.push_back(i);
    v.reverse_asr.push_back(others.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : reverse_asr(model, trig, test.subset(others)));
    v.l1_norms.push_back(trig.l1);
    v.triggers.push_back(std::move(trig));
  }
  if (labels.size() >= 3) {
    v.mad = mad_outliers(v.l1_norms);
    // Map positions back to label values.
    for (auto& f : v.mad.flagged) f = labels[static_cast<std::size_t>(f)];
  }
  return v;
}

Image replace_pixels(const Image& img, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("noise fraction must be in [0,1]");
  const std::size_t hw = img.height * img.width;
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(hw)));
  if (count == 0) return img;
  std::vector<std::size_t> sites(hw);
  std::iota(sites.begin(), sites.end(), 0);
  Rng rng(seed);
  Image out = img;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(hw - k));
    std::swap(sites[k], sites[j]);
    for (std::size_t c = 0; c < img.channels; ++c)
      out.pixels[sites[k] * img.channels + c] = static_cast<float>(rng.uniform());
  }
  return out;
}

NnoculationReport nnoculation_stage1(const Model& model, const LabeledDataset& validation,
                                     const LabeledDataset& clean_test, const LabeledDataset& malicious_test,
                                     const NnoculationConfig& cfg) {
  if (validation.size() == 0) throw ConfigError("NNoculation needs a nonempty validation set");
  if (!(cfg.noisy_share >= 0.0 && cfg.noisy_share <= 1.0)) throw ConfigError("noisy share must be in [0,1]");
  NnoculationReport rep;
  rep.baseline = evaluate(model, clean_test, malicious_test);
  for (std::size_t f = 0; f < cfg.fractions.size(); ++f) {
    const double frac = cfg.fractions[f];
    AttackMetrics m = rep.baseline;
    if (frac > 0.0 && cfg.retrain.epochs > 0) {
      LabeledDataset mix = validation;
      std::vector<std::size_t> order(mix.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng(derive_seed(cfg.seed, f));
      rng.shuffle(order.begin(), order.end());
      const auto noisy = static_cast<std::size_t>(std::llround(cfg.noisy_share * static_cast<double>(mix.size())));
      for (std::size_t k = 0; k < noisy; ++k) {
        const std::size_t i = order[k];
        mix.images[i] = replace_pixels(mix.images[i], frac, derive_seed(cfg.seed, derive_seed(f, i)));
      }
      Model copy = model;
      for (auto& p : copy.parameters()) p.trainable = true;
      TrainConfig tc = cfg.retrain;
      tc.seed = derive_seed(cfg.seed, 100 + f);
      train(copy, mix, validation, tc);
      m = evaluate(copy, clean_test, malicious_test);
    }
    NnoculationPoint pt{frac, m.asr, m.ca, rep.baseline.ca - m.ca, false};
    pt.success = pt.asr < cfg.asr_limit && pt.ca_drop <= cfg.max_ca_drop;
    rep.points.push_back(pt);
  }
  return rep;
}

ActivationProfile activation_profile(const Eigen::MatrixXd& acts, double k_sigma) {
  if (acts.rows() == 0 || acts.cols() == 0) throw ConfigError("activation profile needs at least one probe");
  ActivationProfile p;
  const Eigen::RowVectorXd mu = acts.colwise().mean();
  p.mean_activation.assign(mu.data(), mu.data() + mu.size());
  p.profile_mean = mean(p.mean_activation);
  p.profile_std = stddev(p.mean_activation);
  p.threshold = p.profile_mean + k_sigma * p.profile_std;
  // Rounding slack so a flat profile never reports peaks.
  const double slack = 1e-12 * (1.0 + std::abs(p.profile_mean));
  for (std::size_t i = 0; i < p.mean_activation.size(); ++i)
    if (p.mean_activation[i] > p.threshold + slack) p.peaks.push_back(i);
  return p;
}

ActivationProfile activation_profile(const Model& model, const LabeledDataset& probes, double k_sigma) {
  return activation_profile(penultimate_matrix(model, probes), k_sigma);
}

}  // namespace bdlab
