#pragma once

#include <cstddef>
#include <vector>

#include "ad/tape.hpp"

namespace evseq::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment estimates for every trainable parameter of a store.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

// One bias-corrected Adam update over the trainable parameters, using their
// accumulated grads. Throws TrainingError naming the first parameter whose
// gradient is not finite (before touching any value).
void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg);

// Rescales all trainable gradients so their global L2 norm is at most max_norm;
// returns the norm before clipping.
double clip_grad_norm(ParameterStore& params, double max_norm);

}  // namespace evseq::ad
