#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fedseg/tensor.hpp"

namespace fedseg {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;
using NamedGrads = std::map<std::string, Tensor>;

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

// Per-parameter moments, keyed by parameter name. `step_count` increases by
// exactly 1 per adamw_step.
struct AdamWState {
  AdamWConfig cfg;
  int64_t step_count = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

inline AdamWState make_adamw(const NamedParams& params, AdamWConfig cfg = {}) {
  AdamWState st;
  st.cfg = cfg;
  for (const auto& [name, p] : params) {
    st.m.emplace(name, Tensor::zeros(p.shape()));
    st.v.emplace(name, Tensor::zeros(p.shape()));
  }
  return st;
}

// Decoupled-weight-decay Adam with bias correction. Updates parameters in
// place (they share storage with the owning model).
inline void adamw_step(NamedParams& params, const NamedGrads& grads, AdamWState& st) {
  if (grads.size() != params.size() || st.m.size() != params.size())
    throw ContractError("adamw_step: parameter/gradient/state key sets differ");
  st.step_count += 1;
  const AdamWConfig& c = st.cfg;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.step_count));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.step_count));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end())
      throw ContractError("adamw_step: missing gradient for parameter " + name);
    const auto& g = git->second.values();
    auto& pv = p.values();
    auto& mv = st.m.at(name).values();
    auto& vv = st.v.at(name).values();
    if (g.size() != pv.size())
      throw ShapeError("adamw_step: gradient shape mismatch for " + name);
    for (size_t i = 0; i < pv.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("adamw_step: non-finite gradient for parameter " + name);
      mv[i] = c.beta1 * mv[i] + (1.0 - c.beta1) * g[i];
      vv[i] = c.beta2 * vv[i] + (1.0 - c.beta2) * g[i] * g[i];
      double mhat = mv[i] / bc1;
      double vhat = vv[i] / bc2;
      pv[i] -= c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * pv[i]);
    }
  }
}

// Assembles a per-name gradient map from a backward() result; parameters the
// loss never touched get zero gradients.
inline NamedGrads grads_by_name(const NamedParams& params, const GradMap& gm) {
  NamedGrads out;
  for (const auto& [name, p] : params) {
    const Tensor* g = find_grad(gm, p);
    out.emplace(name, g ? *g : Tensor::zeros(p.shape()));
  }
  return out;
}

}  // namespace fedseg
