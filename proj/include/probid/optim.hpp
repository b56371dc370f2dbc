#pragma once

#include <cmath>
#include <vector>

#include "probid/seqmodel.hpp"

namespace probid {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied to every tensor
  double clip_norm = 1.0;     // global gradient norm; <= 0 disables clipping

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta1/beta2 must be in [0,1)");
    if (!(eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be nonnegative");
  }
};

class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (const auto& t : params) {
      m_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
      v_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    }
  }

  long long steps() const { return t_; }

  /// Applies one update; returns the gradient norm before clipping.
  double step(ParameterSet& params, GradientSet& grads) {
    grads.check_finite(params);
    const double norm = grads.norm();
    if (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) {
      const double s = cfg_.clip_norm / norm;
      for (auto& g : grads.grads) g *= s;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& w = params[i].value;
      const Matrix& g = grads.grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      if (cfg_.weight_decay > 0.0) w *= 1.0 - cfg_.learning_rate * cfg_.weight_decay;
      w.array() -= cfg_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
    return norm;
  }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long long t_ = 0;
};

}  // namespace probid
