#pragma once

#include <cmath>
#include <functional>

#include "fedseg/ops.hpp"
#include "fedseg/tensor.hpp"

namespace fedseg {

// Compares reverse-mode gradients of f at x against central finite
// differences. Returns max over coordinates of
// |autodiff - central| / (|central| + 1e-12).
// f must be deterministic and produce a scalar.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double eps) {
  if (eps <= 0.0) throw ContractError("finite_diff_check: eps must be positive");

  Tensor probe = x.detached();
  probe.set_requires_grad(true);

  Tensor analytic;
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = f(probe);
    if (loss.size() != 1) throw ContractError("finite_diff_check: f must return a scalar");
    GradMap gm = tape.backward(loss);
    const Tensor* g = find_grad(gm, probe);
    analytic = g ? *g : Tensor::zeros(probe.shape());
  }

  NoGradScope no_grad;
  double worst = 0.0;
  Tensor work = probe.detached();
  for (size_t i = 0; i < work.values().size(); ++i) {
    double orig = work.values()[i];
    work.values()[i] = orig + eps;
    double up = f(work).item();
    work.values()[i] = orig - eps;
    double down = f(work).item();
    work.values()[i] = orig;
    double central = (up - down) / (2.0 * eps);
    double err = std::fabs(analytic.values()[i] - central) / (std::fabs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fedseg
