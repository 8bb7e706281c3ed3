#pragma once

#include <vector>

#include "bdlab/graph.hpp"

namespace bdlab {

struct SgdConfig {
  double lr = 0.01;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Plain gradient descent: w <- w - lr * g. Clears gradients after stepping.
class Sgd {
 public:
  explicit Sgd(SgdConfig cfg);
  void step(const std::vector<Parameter*>& params);
  void set_lr(double lr);
  double lr() const { return cfg_.lr; }

 private:
  SgdConfig cfg_;
};

// Adam with bias-corrected moments. Moment buffers are created lazily, in the
// order parameters are first seen, and start at zero.
class Adam {
 public:
  explicit Adam(AdamConfig cfg);
  void step(const std::vector<Parameter*>& params);
  void set_lr(double lr);
  double lr() const { return cfg_.lr; }
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace bdlab
