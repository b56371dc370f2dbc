#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <string>

#include "probid/seqmodel.hpp"

namespace probid {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  Eigen::Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// `loss(tape)` must record a scalar loss built from `params` (which it may
/// read through a model referencing them). Every scalar of every tensor is
/// perturbed by +-h.
template <class LossFn>
GradCheckReport gradient_check(ParameterSet& params, LossFn&& loss, double h = 1e-5, double floor = 1e-5) {
  GradientSet analytic = GradientSet::zeros_like(params);
  {
    ad::Tape tape;
    const ad::Var l = loss(tape);
    tape.backward(l);
    analytic.collect(tape);
  }
  auto eval = [&] {
    ad::Tape tape(false);
    return loss(tape).scalar();
  };
  GradCheckReport rep;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = params[p].value;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + h;
      const double up = eval();
      w.data()[i] = orig - h;
      const double down = eval();
      w.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.grads[p].data()[i];
      const double err = relative_error(a, numeric, floor);
      ++rep.checked;
      if (err > rep.max_rel_error || rep.worst_index < 0) {
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        if (err >= rep.max_rel_error) {
          rep.worst_tensor = params[p].name;
          rep.worst_index = i;
          rep.analytic = a;
          rep.numeric = numeric;
        }
      }
    }
  }
  return rep;
}

}  // namespace probid
