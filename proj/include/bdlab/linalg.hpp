#pragma once

#include <Eigen/Core>
#include <vector>

namespace bdlab {

struct PowerIterationOptions {
  int max_iterations = 100000;
  // Stop once ||A v - lambda v|| <= tolerance * max(lambda, tiny).
  double tolerance = 1e-10;
  // Residual bound that still counts as converged when max_iterations runs out.
  double accept_tolerance = 1e-6;
};

struct EigenPair {
  double value = 0.0;
  Eigen::VectorXd vector;
  int iterations = 0;
  double residual = 0.0;
};

// Dominant eigenpair of a symmetric positive semi-definite matrix. The vector
// is unit-norm with its first nonzero component positive. Throws
// ConvergenceError if the residual bound is not met within the budget.
EigenPair power_iteration(const Eigen::MatrixXd& a, const PowerIterationOptions& opts = {});

// Top-k eigenpairs by repeated power iteration with Hotelling deflation.
std::vector<EigenPair> top_eigenpairs(const Eigen::MatrixXd& a, int k, const PowerIterationOptions& opts = {});

// Sample covariance (divides by n - 1) of the rows of `x`, together with the mean.
Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::RowVectorXd* mean_out = nullptr);

}  // namespace bdlab
