#include "bdlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

Eigen::MatrixXd to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix expects a rank-2 tensor, got " + shape_str(t.shape()));
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.ptr(), t.dim(0),
                                                                                                   t.dim(1));
}

Eigen::MatrixXd penultimate_matrix(const Model& model, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ConfigError("no samples to extract activations from");
  return to_matrix(model.penultimate(to_batch(ds.images)));
}

Eigen::MatrixXd pixel_matrix(const LabeledDataset& ds) {
  if (ds.size() == 0) throw ConfigError("no samples");
  const std::size_t d = ds.images.front().size();
  Eigen::MatrixXd x(static_cast<long>(ds.size()), static_cast<long>(d));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) x(static_cast<long>(i), static_cast<long>(j)) = ds.images[i].pixels[j];
  return x;
}

Histogram histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  if (!(hi > lo)) hi = lo + 1.0;
  Histogram h{lo, hi, std::vector<std::size_t>(bins, 0)};
  for (double v : values) {
    auto b = static_cast<long>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
    b = std::clamp<long>(b, 0, static_cast<long>(bins) - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

double auroc(std::span<const double> positives, std::span<const double> negatives) {
  if (positives.empty() || negatives.empty()) throw ConfigError("auroc needs both positives and negatives");
  // Rank-sum form with midranks for ties.
  std::vector<std::pair<double, int>> all;
  for (double v : positives) all.emplace_back(v, 1);
  for (double v : negatives) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(positives.size()), nn = static_cast<double>(negatives.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double mean(std::span<const double> v) {
  if (v.empty()) throw ConfigError("mean of an empty sequence");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) throw ConfigError("median of an empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::vector<int> kmeans_assign(const Eigen::MatrixXd& centers, const Eigen::MatrixXd& x) {
  if (centers.cols() != x.cols()) throw ShapeError("kmeans_assign: dimension mismatch");
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (long i = 0; i < x.rows(); ++i) {
    Eigen::Index best;
    (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

KMeansResult kmeans(const Eigen::MatrixXd& x, int k, std::uint64_t seed, int restarts, int max_iter) {
  const long n = x.rows();
  if (k < 1 || n < k) throw ConfigError("kmeans needs at least k=" + std::to_string(k) + " rows, got " + std::to_string(n));
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, restarts); ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    Eigen::MatrixXd c(k, x.cols());
    c.row(0) = x.row(static_cast<long>(rng.below(static_cast<std::uint64_t>(n))));
    Eigen::VectorXd d2 = (x.rowwise() - c.row(0)).rowwise().squaredNorm();
    for (int j = 1; j < k; ++j) {
      const double total = d2.sum();
      long pick = 0;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        for (pick = 0; pick < n - 1; ++pick) {
          u -= d2(pick);
          if (u <= 0.0) break;
        }
      } else {
        pick = static_cast<long>(rng.below(static_cast<std::uint64_t>(n)));
      }
      c.row(j) = x.row(pick);
      d2 = d2.cwiseMin((x.rowwise() - c.row(j)).rowwise().squaredNorm());
    }
    std::vector<int> assign(static_cast<std::size_t>(n), -1);
    int it = 0;
    for (; it < max_iter; ++it) {
      auto next = kmeans_assign(c, x);
      const bool same = next == assign;
      assign = std::move(next);
      if (same) break;
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, x.cols());
      std::vector<long> cnt(static_cast<std::size_t>(k), 0);
      for (long i = 0; i < n; ++i) {
        sum.row(assign[static_cast<std::size_t>(i)]) += x.row(i);
        ++cnt[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
      }
      for (int j = 0; j < k; ++j)
        if (cnt[static_cast<std::size_t>(j)] > 0) c.row(j) = sum.row(j) / static_cast<double>(cnt[static_cast<std::size_t>(j)]);
    }
    double inertia = 0.0;
    for (long i = 0; i < n; ++i) inertia += (x.row(i) - c.row(assign[static_cast<std::size_t>(i)])).squaredNorm();
    if (inertia < best.inertia) best = {c, assign, inertia, it};
  }
  return best;
}

std::vector<double> kmeans_1d(std::span<const double> values, int k, int max_iter) {
  if (values.empty()) throw ConfigError("kmeans_1d of an empty sequence");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> uniq = sorted;
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  k = std::clamp(k, 1, static_cast<int>(uniq.size()));
  const std::size_t n = sorted.size();
  std::vector<double> c(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j)
    c[static_cast<std::size_t>(j)] = sorted[std::min(n - 1, static_cast<std::size_t>((j + 0.5) * static_cast<double>(n) / k))];
  for (int it = 0; it < max_iter; ++it) {
    std::vector<double> sum(c.size(), 0.0);
    std::vector<std::size_t> cnt(c.size(), 0);
    for (double v : sorted) {
      std::size_t b = 0;
      for (std::size_t j = 1; j < c.size(); ++j)
        if (std::abs(v - c[j]) < std::abs(v - c[b])) b = j;
      sum[b] += v;
      ++cnt[b];
    }
    auto next = c;
    for (std::size_t j = 0; j < c.size(); ++j)
      if (cnt[j]) next[j] = sum[j] / static_cast<double>(cnt[j]);
    std::sort(next.begin(), next.end());
    if (next == c) break;
    c = std::move(next);
  }
  std::sort(c.begin(), c.end());
  return c;
}

double silhouette(const Eigen::MatrixXd& x, const std::vector<int>& groups) {
  const long n = x.rows();
  if (static_cast<std::size_t>(n) != groups.size()) throw ShapeError("silhouette: label count mismatch");
  double total = 0.0;
  long counted = 0;
  for (long i = 0; i < n; ++i) {
    double same = 0.0, other = 0.0;
    long ns = 0, no = 0;
    for (long j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = (x.row(i) - x.row(j)).norm();
      if (groups[static_cast<std::size_t>(j)] == groups[static_cast<std::size_t>(i)]) {
        same += d;
        ++ns;
      } else {
        other += d;
        ++no;
      }
    }
    if (ns == 0 || no == 0) continue;
    const double a = same / static_cast<double>(ns), b = other / static_cast<double>(no);
    const double m = std::max(a, b);
    total += m > 0.0 ? (b - a) / m : 0.0;
    ++counted;
  }
  if (counted == 0) throw ConfigError("silhouette needs two nonempty groups");
  return total / static_cast<double>(counted);
}

}  // namespace bdlab
