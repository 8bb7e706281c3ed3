#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bdlab/dataset.hpp"
#include "bdlab/model.hpp"
#include "bdlab/trainer.hpp"

namespace bdlab {

// ---- trigger reverse engineering -------------------------------------------

struct CleanseConfig {
  std::size_t steps = 500;
  std::size_t samples = 128;        // fixed optimization batch drawn from the genuine pool
  double lr = 0.1;
  double init_lambda = 1e-3;
  double lambda_factor = 1.5;
  std::size_t patience = 5;         // consecutive steps on one side of the threshold before lambda moves
  bool dynamic_lambda = true;
  double hit_threshold = 0.99;
  double min_hit = 0.90;            // below this the run is reported as not converged
  std::uint64_t seed = 0;
};

struct ReversedTrigger {
  Tensor mask;      // [H,W], values in [0,1]
  Tensor pattern;   // [C,H,W], values in [0,1]
  int target = 0;
  double l1 = 0.0;
  double loss = 0.0;           // cross-entropy + lambda * l1 at the returned state
  double hit_rate = 0.0;       // on the optimization batch, in [0,1]
  double lambda = 0.0;         // lambda in force at the returned state
  bool converged = false;
  std::size_t rejected_steps = 0;
  // Objective after each accepted step, evaluated with the lambda in force.
  std::vector<double> accepted_objectives;
  std::vector<double> accepted_lambdas;
};

// Minimizes CE(model((1-m)*x + m*p), target) + lambda*|m|_1 over sigmoid-
// parameterized m and p with Adam. A step that raises the objective is
// rejected and the step size halved. Returns the smallest-norm state whose hit
// rate reached the threshold, or the best-hitting state otherwise.
ReversedTrigger reverse_trigger(const Model& model, const LabeledDataset& genuine, int target,
                                const CleanseConfig& cfg);

Image apply_reversed(const Image& img, const ReversedTrigger& t);
// Percent of `ds` classified as the trigger's target after applying it.
double reverse_asr(const Model& model, const ReversedTrigger& t, const LabeledDataset& ds);

struct MadReport {
  double median = 0.0;
  double mad = 0.0;
  std::vector<double> indices;
  std::vector<int> flagged;
  bool zero_dispersion = false;
};
// index = |x - median| / (1.4826 * MAD); flagged when index > threshold and
// x < median. Needs at least three values.
MadReport mad_outliers(std::span<const double> norms, double threshold = 2.0);

struct CleanseVerdict {
  std::vector<int> labels;
  std::vector<ReversedTrigger> triggers;
  std::vector<double> l1_norms;
  std::vector<double> reverse_asr;  // on test images whose true label differs from the candidate
  MadReport mad;
};

// Runs reverse_trigger for every label in `labels` (all labels when empty).
// MAD is computed only when at least three labels were examined.
CleanseVerdict neural_cleanse(const Model& model, const LabeledDataset& genuine, const LabeledDataset& test,
                              const CleanseConfig& cfg, std::vector<int> labels = {});

// ---- noise retraining --------------------------------------------------------

struct NnoculationConfig {
  std::vector<double> fractions = {0.2, 0.4, 0.6};
  double noisy_share = 0.5;  // portion of validation images that receive noise
  TrainConfig retrain{.epochs = 4, .batch_size = 32, .lr = 1e-4};
  double max_ca_drop = 5.0;
  double asr_limit = 10.0;
  std::uint64_t seed = 0;
};

struct NnoculationPoint {
  double fraction = 0.0;
  double asr = 0.0;
  double ca = 0.0;
  double ca_drop = 0.0;
  bool success = false;
};

struct NnoculationReport {
  AttackMetrics baseline;
  std::vector<NnoculationPoint> points;
};

// Replaces round(fraction * H * W) randomly chosen pixel sites with uniform
// random values.
Image replace_pixels(const Image& img, double fraction, std::uint64_t seed);

// For each fraction, retrains a private copy of `model` on the validation set
// with noise applied to `noisy_share` of its images, then measures CA and ASR.
// A zero fraction or zero retraining epochs leaves the model unchanged.
NnoculationReport nnoculation_stage1(const Model& model, const LabeledDataset& validation,
                                     const LabeledDataset& clean_test, const LabeledDataset& malicious_test,
                                     const NnoculationConfig& cfg);

// ---- activation profiling ----------------------------------------------------

struct ActivationProfile {
  std::vector<double> mean_activation;  // per neuron
  double profile_mean = 0.0;
  double profile_std = 0.0;
  double threshold = 0.0;               // profile_mean + 2 * profile_std
  std::vector<std::size_t> peaks;
};

// Rows are probes, columns neurons.
ActivationProfile activation_profile(const Eigen::MatrixXd& activations, double k_sigma = 2.0);
ActivationProfile activation_profile(const Model& model, const LabeledDataset& probes, double k_sigma = 2.0);

}  // namespace bdlab
