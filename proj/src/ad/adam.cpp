#include "ad/adam.hpp"

#include <cmath>

#include "common/error.hpp"

namespace evseq::ad {

void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    if (p.grad.size() != p.value.size()) throw ShapeError("adam: gradient shape mismatch for '" + p.name + "'");
    for (double g : p.grad.vec())
      if (!std::isfinite(g)) throw TrainingError("adam: non-finite gradient in parameter '" + p.name + "'");
  }
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.value.shape());
      state.v.emplace_back(p.value.shape());
    }
    state.step = 0;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = params[k];
    if (!p.trainable) continue;
    Tensor &m = state.m[k], &v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.trainable)
      for (double g : p.grad.vec()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& p : params)
      if (p.trainable)
        for (double& g : p.grad.vec()) g *= k;
  }
  return norm;
}

}  // namespace evseq::ad
