#include "bdlab/linalg.hpp"

#include <cmath>
#include <limits>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {
namespace {

void fix_sign(Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v[i]) > 1e-12) {
      if (v[i] < 0) v = -v;
      return;
    }
  }
}

}  // namespace

EigenPair power_iteration(const Eigen::MatrixXd& a, const PowerIterationOptions& opts) {
  const auto n = a.rows();
  if (n < 1 || a.cols() != n) throw ShapeError("power_iteration: matrix must be square and non-empty");
  if (!a.allFinite()) throw NumericError("power_iteration: non-finite matrix entry");
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, a.cwiseAbs().maxCoeff()))
    throw ShapeError("power_iteration: matrix is not symmetric");

  // Fixed pseudo-random start so the result does not depend on call history
  // and is almost surely not orthogonal to the dominant direction.
  Eigen::VectorXd v(n);
  Rng rng(0x5eed);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = 1.0 + 0.5 * rng.uniform(-1.0, 1.0);
  v.normalize();

  EigenPair out;
  const double scale = std::max(a.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  Eigen::VectorXd av = a * v;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const double lambda = v.dot(av);
    const double residual = (av - lambda * v).norm();
    out.value = lambda;
    out.residual = residual;
    out.iterations = it;
    if (residual <= opts.tolerance * std::max(std::abs(lambda), 1e-12 * scale)) break;
    const double norm = av.norm();
    if (norm <= std::numeric_limits<double>::min()) break;  // zero matrix: any vector works
    v = av / norm;
    av = a * v;
  }
  if (out.residual > opts.accept_tolerance * std::max(std::abs(out.value), 1e-12 * scale))
    throw ConvergenceError("power_iteration did not converge after " + std::to_string(opts.max_iterations) +
                               " iterations",
                           out.residual);
  fix_sign(v);
  out.vector = v;
  return out;
}

std::vector<EigenPair> top_eigenpairs(const Eigen::MatrixXd& a, int k, const PowerIterationOptions& opts) {
  if (k < 1 || k > a.rows()) throw ShapeError("top_eigenpairs: k must be in [1, n]");
  std::vector<EigenPair> pairs;
  Eigen::MatrixXd work = a;
  for (int i = 0; i < k; ++i) {
    auto p = power_iteration(work, opts);
    work -= p.value * p.vector * p.vector.transpose();
    work = 0.5 * (work + work.transpose()).eval();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::RowVectorXd* mean_out) {
  if (x.rows() < 2) throw ShapeError("covariance: need at least 2 samples");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  if (mean_out) *mean_out = mean;
  return (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
}

}  // namespace bdlab
