#include "bdlab/optim.hpp"

#include <cmath>

#include "bdlab/errors.hpp"

namespace bdlab {
namespace {

void check_lr(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0, got " + std::to_string(lr));
}

}  // namespace

Sgd::Sgd(SgdConfig cfg) : cfg_(cfg) { check_lr(cfg_.lr); }

void Sgd::set_lr(double lr) {
  check_lr(lr);
  cfg_.lr = lr;
}

void Sgd::step(const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= cfg_.lr * p->grad[i];
    p->zero_grad();
  }
}

Adam::Adam(AdamConfig cfg) : cfg_(cfg) { check_lr(cfg_.lr); }

void Adam::set_lr(double lr) {
  check_lr(lr);
  cfg_.lr = lr;
}

void Adam::step(const std::vector<Parameter*>& params) {
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    if (!p->trainable) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    p->zero_grad();
  }
}

}  // namespace bdlab
