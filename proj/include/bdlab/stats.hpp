#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "bdlab/dataset.hpp"
#include "bdlab/model.hpp"

namespace bdlab {

// Rows of a rank-2 tensor as an Eigen matrix.
Eigen::MatrixXd to_matrix(const Tensor& t);
// Penultimate activations of every sample, one row per sample.
Eigen::MatrixXd penultimate_matrix(const Model& model, const LabeledDataset& ds);
// Raw pixels of every sample, one row per sample.
Eigen::MatrixXd pixel_matrix(const LabeledDataset& ds);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
  double bin_width() const { return counts.empty() ? 0.0 : (hi - lo) / static_cast<double>(counts.size()); }
};
// Equal-width bins over [lo, hi]; the top edge is inclusive.
Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

// Probability that a random positive scores above a random negative (ties
// count one half). Throws ConfigError if either side is empty.
double auroc(std::span<const double> positives, std::span<const double> negatives);

double mean(std::span<const double> v);
double median(std::vector<double> v);
// Population standard deviation.
double stddev(std::span<const double> v);

struct KMeansResult {
  Eigen::MatrixXd centers;          // k x d
  std::vector<int> assignment;
  double inertia = 0.0;
  int iterations = 0;
};
// Lloyd's algorithm with k-means++ seeding, best of `restarts` by inertia.
KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts = 10, int max_iter = 300);
// Nearest-center assignment of new rows.
std::vector<int> kmeans_assign(const Eigen::MatrixXd& centers, const Eigen::MatrixXd& x);

// One-dimensional k-means with quantile initialization; returns sorted centers.
// k is reduced to the number of distinct values when there are fewer.
std::vector<double> kmeans_1d(std::span<const double> values, int k, int max_iter = 300);

// Mean silhouette coefficient of a two-group labelling using Euclidean distance.
double silhouette(const Eigen::MatrixXd& x, const std::vector<int>& groups);

}  // namespace bdlab
