#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bdlab/dataset.hpp"
#include "bdlab/model.hpp"
#include "bdlab/stats.hpp"

namespace bdlab {

// ---- spectral signatures ------------------------------------------------

struct SpectralReport {
  std::vector<double> correlations;  // per sample, dot(centered rep, top eigenvector)
  std::vector<bool> malicious;       // ground-truth flag per sample, for reporting
  double eigenvalue = 0.0;
  double genuine_min = 0.0;
  double genuine_max = 0.0;
  double genuine_mean = 0.0;
  double malicious_mean = 0.0;       // NaN when no malicious samples
  // Smallest gap between 1-D k-means centers of genuine correlations.
  double min_genuine_separation = 0.0;
  // |genuine mean - malicious mean|.
  double malicious_separation = 0.0;
  // Sign-free AUROC, max(A, 1 - A); NaN unless both groups are present.
  double auroc = 0.0;
  Histogram genuine_hist;
  Histogram malicious_hist;
};

// `reps` holds one representation per row. Throws DegenerateInputError when
// the covariance is zero, ConfigError for fewer than two rows.
SpectralReport spectral_signatures(const Eigen::MatrixXd& reps, const std::vector<bool>& malicious,
                                   int genuine_clusters = 10, std::size_t bins = 30);
// Penultimate activations of `samples` (all carrying the label under test).
SpectralReport spectral_signatures(const Model& model, const LabeledDataset& samples, int genuine_clusters = 10,
                                   std::size_t bins = 30);

struct ProjectionView {
  Eigen::MatrixXd projection;                 // n x 2, top-2 principal components
  double explained[2] = {0.0, 0.0};           // fraction of total variance
  std::vector<double> l2_norms;               // norm of each uncentered row
  double silhouette_malicious = 0.0;          // NaN unless both groups present
};

// Top-two principal components and L2 norms of the rows. Throws ConfigError
// for fewer than three rows or fewer than two columns.
ProjectionView appendix_views(const Eigen::MatrixXd& reps, const std::vector<bool>& malicious);

// ---- activation clustering ----------------------------------------------

struct ClusteringConfig {
  int components = 10;
  int clusters = 2;
  std::uint64_t seed = 0;
  int ica_max_iter = 400;
  double ica_tolerance = 1e-4;
};

struct ClusteringReport {
  int components = 0;
  bool ica_converged = false;
  bool pca_fallback = false;         // set when ICA failed and PCA scores were used
  std::vector<int> train_assignment;
  std::vector<int> test_assignment;
  int genuine_cluster = 0;           // cluster holding most genuine training rows
  std::vector<std::size_t> cluster_sizes;
  double detection_rate = 0.0;       // percent of malicious rows outside the genuine cluster
};

// FastICA (tanh contrast, symmetric decorrelation) on whitened training rows,
// k-means on the sources; the test rows are projected with the same unmixing
// and assigned to the nearest center. With an empty test matrix the training
// rows are scored instead.
ClusteringReport activation_clustering(const Eigen::MatrixXd& train, const std::vector<bool>& train_malicious,
                                       const Eigen::MatrixXd& test, const std::vector<bool>& test_malicious,
                                       const ClusteringConfig& cfg = {});

struct IcaResult {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd unmixing;  // d_in x components; sources = (x - mean) * unmixing
  bool converged = false;
  int iterations = 0;
};
IcaResult fast_ica(const Eigen::MatrixXd& x, int components, std::uint64_t seed, int max_iter = 400,
                   double tolerance = 1e-5);
// Whitening projection onto the top principal directions.
IcaResult pca_whitener(const Eigen::MatrixXd& x, int components);

// ---- suppression ---------------------------------------------------------

enum class NoiseType { Uniform, Gaussian };
const char* noise_name(NoiseType t);
NoiseType parse_noise(std::string_view s);

// Adds noise of magnitude `level` (uniform in [-level, level] or gaussian with
// std `level`), clamped to [0,1].
Image add_noise(const Image& img, NoiseType type, double level, std::uint64_t seed);

struct FuzzingPoint {
  double level = 0.0;
  double sasr = 0.0;  // percent
  double ca = 0.0;    // percent
};

struct FuzzingCurve {
  NoiseType type = NoiseType::Uniform;
  std::size_t votes = 1;
  double base_ca = 0.0;
  double base_asr = 0.0;
  std::vector<FuzzingPoint> points;
};

// With votes == 1 each probe is noised once; otherwise the label is the
// majority over `votes` noised copies.
FuzzingCurve fuzzing_curve(const Model& model, const LabeledDataset& clean, const LabeledDataset& malicious,
                           NoiseType type, std::span<const double> levels, std::uint64_t seed, std::size_t votes = 1);

// Mode of the votes; ties go to the lowest class index.
int majority_vote(std::span<const int> votes, int num_classes);
int suppress_majority(const Model& model, const Image& image, NoiseType type, double level, std::size_t copies,
                      std::uint64_t seed);

// Level with the lowest SASR among those whose CA drop is at most
// `max_ca_drop`; -1 when none qualifies.
int best_fuzzing_level(const FuzzingCurve& curve, double max_ca_drop);

// ---- STRIP ----------------------------------------------------------------

struct StripConfig {
  std::size_t perturbations = 100;
  double frr = 0.01;
  double blend = 0.5;  // weight of the incoming image
  std::uint64_t seed = 0;
};

// Mean Shannon entropy (bits) of the softmax over N blends of `image` with
// randomly drawn pool images.
double strip_entropy(const Model& model, const Image& image, std::span<const Image> pool, const StripConfig& cfg,
                     std::uint64_t image_key);

// Boundary such that a fraction `frr` of the genuine entropies lie below it.
double frr_boundary(std::vector<double> genuine_entropies, double frr);

struct StripReport {
  double boundary = 0.0;
  double frr = 0.0;
  std::vector<double> calibration_entropies;
  std::vector<double> probe_entropies;
  std::vector<bool> probe_flagged;
  double detection_rate = 0.0;          // percent of probes flagged
  double heldout_flag_rate = 0.0;       // percent of held-out genuine images flagged; NaN if none given
  Histogram genuine_hist;
  Histogram probe_hist;
};

// Calibrates on `calibration`, then scores `probes` and, if nonempty,
// `heldout` genuine images. Throws ConfigError when the pool is smaller than N.
StripReport strip(const Model& model, const LabeledDataset& probes, const LabeledDataset& calibration,
                  const LabeledDataset& heldout, const LabeledDataset& pool, const StripConfig& cfg);

}  // namespace bdlab
