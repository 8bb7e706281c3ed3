#include "bdlab/defense_stat.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "bdlab/errors.hpp"
#include "bdlab/linalg.hpp"
#include "bdlab/rng.hpp"
#include "bdlab/trainer.hpp"

namespace bdlab {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void split_by_flag(std::span<const double> v, const std::vector<bool>& flag, std::vector<double>& yes,
                   std::vector<double>& no) {
  for (std::size_t i = 0; i < v.size(); ++i) (flag[i] ? yes : no).push_back(v[i]);
}

Eigen::MatrixXd centered(const Eigen::MatrixXd& x, Eigen::RowVectorXd* mean_out = nullptr) {
  Eigen::RowVectorXd mu = x.colwise().mean();
  if (mean_out) *mean_out = mu;
  return x.rowwise() - mu;
}

}  // namespace

SpectralReport spectral_signatures(const Eigen::MatrixXd& reps, const std::vector<bool>& malicious,
                                   int genuine_clusters, std::size_t bins) {
  if (reps.rows() < 2) throw ConfigError("spectral signatures need at least 2 samples");
  if (malicious.size() != static_cast<std::size_t>(reps.rows())) throw ShapeError("spectral: flag count mismatch");
  const Eigen::MatrixXd cov = covariance(reps);
  if (cov.cwiseAbs().maxCoeff() == 0.0) throw DegenerateInputError("representations are identical; covariance has rank 0");
  const EigenPair top = power_iteration(cov);
  const Eigen::VectorXd corr = centered(reps) * top.vector;

  SpectralReport r;
  r.eigenvalue = top.value;
  r.correlations.assign(corr.data(), corr.data() + corr.size());
  r.malicious = malicious;
  std::vector<double> mal, gen;
  split_by_flag(r.correlations, malicious, mal, gen);
  const double lo = corr.minCoeff(), hi = corr.maxCoeff();
  r.genuine_hist = histogram(gen, bins, lo, hi);
  r.malicious_hist = histogram(mal, bins, lo, hi);
  if (!gen.empty()) {
    r.genuine_min = *std::min_element(gen.begin(), gen.end());
    r.genuine_max = *std::max_element(gen.begin(), gen.end());
    r.genuine_mean = mean(gen);
    const auto centers = kmeans_1d(gen, genuine_clusters);
    double gap = 0.0;
    for (std::size_t i = 1; i < centers.size(); ++i) gap = i == 1 ? centers[1] - centers[0] : std::min(gap, centers[i] - centers[i - 1]);
    r.min_genuine_separation = gap;
  }
  r.malicious_mean = mal.empty() ? kNaN : mean(mal);
  r.malicious_separation = mal.empty() || gen.empty() ? kNaN : std::abs(r.genuine_mean - r.malicious_mean);
  if (!mal.empty() && !gen.empty()) {
    const double a = auroc(mal, gen);
    r.auroc = std::max(a, 1.0 - a);
  } else {
    r.auroc = kNaN;
  }
  return r;
}

SpectralReport spectral_signatures(const Model& model, const LabeledDataset& samples, int genuine_clusters,
                                   std::size_t bins) {
  return spectral_signatures(penultimate_matrix(model, samples), samples.poisoned, genuine_clusters, bins);
}

ProjectionView appendix_views(const Eigen::MatrixXd& reps, const std::vector<bool>& malicious) {
  if (reps.rows() < 3) throw ConfigError("projection views need at least 3 samples");
  if (reps.cols() < 2) throw ConfigError("projection views need representations of dimension >= 2");
  const Eigen::MatrixXd cov = covariance(reps);
  if (cov.cwiseAbs().maxCoeff() == 0.0) throw DegenerateInputError("representations are identical");
  const auto pairs = top_eigenpairs(cov, 2);
  ProjectionView v;
  const Eigen::MatrixXd c = centered(reps);
  v.projection.resize(reps.rows(), 2);
  const double total = cov.trace();
  for (int j = 0; j < 2; ++j) {
    v.projection.col(j) = c * pairs[static_cast<std::size_t>(j)].vector;
    v.explained[j] = total > 0.0 ? pairs[static_cast<std::size_t>(j)].value / total : 0.0;
  }
  for (long i = 0; i < reps.rows(); ++i) v.l2_norms.push_back(reps.row(i).norm());
  const bool both = std::find(malicious.begin(), malicious.end(), true) != malicious.end() &&
                    std::find(malicious.begin(), malicious.end(), false) != malicious.end();
  if (both) {
    std::vector<int> groups(malicious.begin(), malicious.end());
    v.silhouette_malicious = silhouette(v.projection, groups);
  } else {
    v.silhouette_malicious = kNaN;
  }
  return v;
}

IcaResult pca_whitener(const Eigen::MatrixXd& x, int components) {
  IcaResult r;
  const Eigen::MatrixXd c = centered(x, &r.mean);
  const Eigen::MatrixXd cov = (c.transpose() * c) / static_cast<double>(std::max<long>(1, x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const auto& vals = es.eigenvalues();  // ascending
  const double top = vals(vals.size() - 1);
  int usable = 0;
  for (long i = vals.size() - 1; i >= 0 && usable < components; --i)
    if (vals(i) > 1e-12 * std::max(top, 1e-300)) ++usable;
  if (usable == 0) throw DegenerateInputError("activations have zero variance");
  r.unmixing.resize(x.cols(), usable);
  for (int j = 0; j < usable; ++j) {
    const long i = vals.size() - 1 - j;
    Eigen::VectorXd v = es.eigenvectors().col(i);
    for (long t = 0; t < v.size(); ++t)
      if (v(t) != 0.0) {
        if (v(t) < 0.0) v = -v;
        break;
      }
    r.unmixing.col(j) = v / std::sqrt(vals(i));
  }
  r.converged = true;
  return r;
}

namespace {

Eigen::MatrixXd sym_decorrelate(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w * w.transpose());
  const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * w;
}

}  // namespace

IcaResult fast_ica(const Eigen::MatrixXd& x, int components, std::uint64_t seed, int max_iter, double tolerance) {
  IcaResult white = pca_whitener(x, components);
  const Eigen::MatrixXd z = (x.rowwise() - white.mean) * white.unmixing;  // n x d
  const long d = z.cols();
  const double n = static_cast<double>(z.rows());
  Rng rng(seed);
  Eigen::MatrixXd w(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) w(i, j) = rng.normal();
  w = sym_decorrelate(w);

  IcaResult r;
  r.mean = white.mean;
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    const Eigen::MatrixXd proj = z * w.transpose();  // n x d
    const Eigen::MatrixXd g = proj.array().tanh().matrix();
    const Eigen::RowVectorXd gp_mean = (1.0 - g.array().square()).matrix().colwise().mean();
    Eigen::MatrixXd next = (g.transpose() * z) / n - gp_mean.transpose().asDiagonal() * w;
    next = sym_decorrelate(next);
    const double change = ((next * w.transpose()).diagonal().cwiseAbs().array() - 1.0).abs().maxCoeff();
    w = next;
    if (change < tolerance) {
      r.converged = true;
      break;
    }
  }
  r.iterations = std::min(r.iterations, max_iter);
  r.unmixing = white.unmixing * w.transpose();
  return r;
}

ClusteringReport activation_clustering(const Eigen::MatrixXd& train, const std::vector<bool>& train_malicious,
                                       const Eigen::MatrixXd& test, const std::vector<bool>& test_malicious,
                                       const ClusteringConfig& cfg) {
  if (train.rows() < 2 * cfg.clusters)
    throw ConfigError("activation clustering needs at least " + std::to_string(2 * cfg.clusters) + " samples");
  if (train_malicious.size() != static_cast<std::size_t>(train.rows()) ||
      test_malicious.size() != static_cast<std::size_t>(test.rows()))
    throw ShapeError("activation clustering: flag count mismatch");

  ClusteringReport rep;
  IcaResult ica = fast_ica(train, cfg.components, cfg.seed, cfg.ica_max_iter, cfg.ica_tolerance);
  rep.ica_converged = ica.converged;
  if (!ica.converged) {
    ica = pca_whitener(train, cfg.components);
    rep.pca_fallback = true;
  }
  rep.components = static_cast<int>(ica.unmixing.cols());
  const Eigen::MatrixXd s_train = (train.rowwise() - ica.mean) * ica.unmixing;
  const auto km = kmeans(s_train, cfg.clusters, derive_seed(cfg.seed, 1));
  rep.train_assignment = km.assignment;
  rep.cluster_sizes.assign(static_cast<std::size_t>(cfg.clusters), 0);
  std::vector<std::size_t> genuine_in(static_cast<std::size_t>(cfg.clusters), 0);
  for (std::size_t i = 0; i < km.assignment.size(); ++i) {
    ++rep.cluster_sizes[static_cast<std::size_t>(km.assignment[i])];
    if (!train_malicious[i]) ++genuine_in[static_cast<std::size_t>(km.assignment[i])];
  }
  rep.genuine_cluster = static_cast<int>(std::max_element(genuine_in.begin(), genuine_in.end()) - genuine_in.begin());

  const bool use_test = test.rows() > 0;
  const std::vector<bool>& flags = use_test ? test_malicious : train_malicious;
  if (use_test) rep.test_assignment = kmeans_assign(km.centers, (test.rowwise() - ica.mean) * ica.unmixing);
  const auto& assign = use_test ? rep.test_assignment : rep.train_assignment;
  std::size_t mal = 0, caught = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) continue;
    ++mal;
    caught += assign[i] != rep.genuine_cluster;
  }
  rep.detection_rate = mal ? 100.0 * static_cast<double>(caught) / static_cast<double>(mal) : kNaN;
  return rep;
}

const char* noise_name(NoiseType t) { return t == NoiseType::Uniform ? "uniform" : "gaussian"; }

NoiseType parse_noise(std::string_view s) {
  if (s == "uniform") return NoiseType::Uniform;
  if (s == "gaussian") return NoiseType::Gaussian;
  throw ConfigError("unknown noise type '" + std::string(s) + "' (valid: uniform, gaussian)");
}

Image add_noise(const Image& img, NoiseType type, double level, std::uint64_t seed) {
  if (level < 0.0) throw ConfigError("noise level must be nonnegative");
  if (level == 0.0) return img;
  Image out = img;
  Rng rng(seed);
  for (auto& p : out.pixels) {
    const double n = type == NoiseType::Uniform ? rng.uniform(-level, level) : level * rng.normal();
    p = static_cast<float>(std::clamp(static_cast<double>(p) + n, 0.0, 1.0));
  }
  return out;
}

int majority_vote(std::span<const int> votes, int num_classes) {
  if (votes.empty()) throw ConfigError("majority vote over no votes");
  std::vector<int> count(static_cast<std::size_t>(num_classes), 0);
  for (int v : votes) ++count.at(static_cast<std::size_t>(v));
  return static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
}

namespace {

// Predicted label per sample under noise, voted over `votes` copies.
std::vector<int> noisy_predictions(const Model& model, const LabeledDataset& ds, NoiseType type, double level,
                                   std::uint64_t seed, std::size_t votes) {
  if (level == 0.0) return predict(model, ds);
  std::vector<std::vector<int>> all(ds.size());
  for (std::size_t v = 0; v < votes; ++v) {
    LabeledDataset noisy = ds;
    for (std::size_t i = 0; i < ds.size(); ++i)
      noisy.images[i] = add_noise(ds.images[i], type, level, derive_seed(seed, derive_seed(ds.ids[i], v)));
    const auto p = predict(model, noisy);
    for (std::size_t i = 0; i < p.size(); ++i) all[i].push_back(p[i]);
  }
  std::vector<int> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out[i] = majority_vote(all[i], model.num_classes());
  return out;
}

double hit_rate(const std::vector<int>& pred, const std::vector<int>& labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace

FuzzingCurve fuzzing_curve(const Model& model, const LabeledDataset& clean, const LabeledDataset& malicious,
                           NoiseType type, std::span<const double> levels, std::uint64_t seed, std::size_t votes) {
  if (levels.empty()) throw ConfigError("fuzzing needs at least one noise level");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i] > levels[i - 1])) throw ConfigError("fuzzing levels must be strictly increasing");
  if (votes == 0) throw ConfigError("fuzzing needs at least one vote");
  const auto base = evaluate(model, clean, malicious);
  FuzzingCurve c{type, votes, base.ca, base.asr, {}};
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const std::uint64_t s = derive_seed(seed, l);
    const double sasr = hit_rate(noisy_predictions(model, malicious, type, levels[l], derive_seed(s, 1), votes), malicious.labels);
    const double ca = hit_rate(noisy_predictions(model, clean, type, levels[l], derive_seed(s, 2), votes), clean.labels);
    c.points.push_back({levels[l], sasr, ca});
  }
  return c;
}

int suppress_majority(const Model& model, const Image& image, NoiseType type, double level, std::size_t copies,
                      std::uint64_t seed) {
  if (copies < 3 || copies % 2 == 0) throw ConfigError("majority voting needs an odd number of copies >= 3");
  std::vector<Image> batch;
  for (std::size_t v = 0; v < copies; ++v) batch.push_back(add_noise(image, type, level, derive_seed(seed, v)));
  const auto p = model.predict(to_batch(batch));
  return majority_vote(p, model.num_classes());
}

int best_fuzzing_level(const FuzzingCurve& curve, double max_ca_drop) {
  int best = -1;
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i];
    if (curve.base_ca - p.ca > max_ca_drop) continue;
    if (best < 0 || p.sasr < curve.points[static_cast<std::size_t>(best)].sasr) best = static_cast<int>(i);
  }
  return best;
}

double strip_entropy(const Model& model, const Image& image, std::span<const Image> pool, const StripConfig& cfg,
                     std::uint64_t image_key) {
  if (cfg.perturbations == 0) throw ConfigError("STRIP needs at least one perturbation");
  if (pool.size() < cfg.perturbations)
    throw ConfigError("STRIP pool has " + std::to_string(pool.size()) + " images, needs at least " +
                      std::to_string(cfg.perturbations));
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(cfg.seed, image_key));
  std::vector<Image> blends;
  blends.reserve(cfg.perturbations);
  for (std::size_t k = 0; k < cfg.perturbations; ++k) {
    const std::size_t j = k + static_cast<std::size_t>(rng.below(idx.size() - k));
    std::swap(idx[k], idx[j]);
    const Image& other = pool[idx[k]];
    if (!other.same_shape(image)) throw ShapeError("STRIP pool image shape differs from the input");
    Image b = image;
    for (std::size_t p = 0; p < b.pixels.size(); ++p)
      b.pixels[p] = static_cast<float>(cfg.blend * image.pixels[p] + (1.0 - cfg.blend) * other.pixels[p]);
    blends.push_back(std::move(b));
  }
  const Tensor probs = model.probabilities(to_batch(blends));
  const std::size_t k = probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < blends.size(); ++r) {
    double h = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      const double a = probs[r * k + c];
      if (a > 0.0) h -= a * std::log2(a);
    }
    total += h;
  }
  return total / static_cast<double>(blends.size());
}

double frr_boundary(std::vector<double> genuine, double frr) {
  if (genuine.empty()) throw ConfigError("STRIP calibration set is empty");
  if (!(frr > 0.0 && frr < 1.0)) throw ConfigError("FRR must be in (0,1)");
  std::sort(genuine.begin(), genuine.end());
  const auto i = static_cast<std::size_t>(std::floor(frr * static_cast<double>(genuine.size())));
  return genuine[std::min(i, genuine.size() - 1)];
}

StripReport strip(const Model& model, const LabeledDataset& probes, const LabeledDataset& calibration,
                  const LabeledDataset& heldout, const LabeledDataset& pool, const StripConfig& cfg) {
  if (!(cfg.frr > 0.0 && cfg.frr < 1.0)) throw ConfigError("FRR must be in (0,1)");
  if (pool.size() < cfg.perturbations)
    throw ConfigError("STRIP pool has " + std::to_string(pool.size()) + " images, needs at least " +
                      std::to_string(cfg.perturbations));
  auto score = [&](const LabeledDataset& ds, std::uint64_t tag) {
    std::vector<double> e;
    e.reserve(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      e.push_back(strip_entropy(model, ds.images[i], pool.images, cfg, derive_seed(tag, i)));
    return e;
  };
  StripReport r;
  r.frr = cfg.frr;
  r.calibration_entropies = score(calibration, 1);
  r.boundary = frr_boundary(r.calibration_entropies, cfg.frr);
  r.probe_entropies = score(probes, 2);
  std::size_t flagged = 0;
  for (double e : r.probe_entropies) {
    r.probe_flagged.push_back(e < r.boundary);
    flagged += e < r.boundary;
  }
  r.detection_rate = probes.size() ? 100.0 * static_cast<double>(flagged) / static_cast<double>(probes.size()) : kNaN;
  if (heldout.size()) {
    const auto h = score(heldout, 3);
    std::size_t f = 0;
    for (double e : h) f += e < r.boundary;
    r.heldout_flag_rate = 100.0 * static_cast<double>(f) / static_cast<double>(h.size());
  } else {
    r.heldout_flag_rate = kNaN;
  }
  const double hi = std::log2(static_cast<double>(model.num_classes()));
  r.genuine_hist = histogram(r.calibration_entropies, 30, 0.0, hi);
  r.probe_hist = histogram(r.probe_entropies, 30, 0.0, hi);
  return r;
}

}  // namespace bdlab
