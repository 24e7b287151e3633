#pragma once

#include <cmath>
#include <limits>

#include "models/model.hpp"
#include "support/op_cases.hpp"

namespace evseq::testing {

// Small random dataset: two numerics (10 % missing, forward-filled to keep
// values finite), one categorical with cardinality 4, regression target.
inline seq::Dataset toy_dataset(std::size_t n, Rng& rng, std::size_t max_len = 6, std::size_t min_len = 1) {
  seq::Dataset ds;
  ds.schema.numeric = {{"a", seq::Imputation::kForwardFill, false}, {"b", seq::Imputation::kConstant, false}};
  ds.schema.categorical = {{"c", 4}};
  ds.preprocessed = true;
  for (std::size_t i = 0; i < n; ++i) {
    seq::EventSequence s;
    const std::size_t len = dim(rng, min_len, max_len);
    double t = 0.0;
    s.numeric.assign(2, {});
    s.mask.assign(2, {});
    s.categorical.assign(1, {});
    for (std::size_t e = 0; e < len; ++e) {
      t += uniform(rng, 0.01, 0.3);
      s.times.push_back(t);
      for (int f = 0; f < 2; ++f) {
        s.numeric[f].push_back(uniform(rng, -1, 1));
        s.mask[f].push_back(uniform01(rng) < 0.9 ? 1 : 0);
      }
      s.categorical[0].push_back(static_cast<int>(dim(rng, 0, 3)));
    }
    s.target = uniform(rng, -1, 1);
    ds.sequences.push_back(std::move(s));
  }
  return ds;
}

inline models::EncoderConfig random_encoder(models::EncoderKind kind, Rng& rng) {
  models::EncoderConfig c;
  c.kind = kind;
  c.hidden = dim(rng, 2, 4);
  c.embed_dim = dim(rng, 1, 3);
  c.aggregation = uniform01(rng) < 0.5 ? models::Aggregation::kLastHidden : models::Aggregation::kMeanHidden;
  const auto tm = dim(rng, 0, 2);
  c.time_mode = tm == 0 ? models::TimeMode::kNone : tm == 1 ? models::TimeMode::kDelta : models::TimeMode::kAbsolute;
  c.input_batchnorm = uniform01(rng) < 0.3;
  c.n_ref_points = dim(rng, 2, 4);
  c.n_freqs = dim(rng, 1, 3);
  c.n_heads = dim(rng, 1, 2);
  return c;
}

// Full forward pass (encoder and head) of a freshly initialised model on a
// random batch; training mode so batch normalisation uses batch statistics.
inline double encoder_gradcheck(models::EncoderKind kind, Rng& rng) {
  auto ds = toy_dataset(dim(rng, 2, 4), rng);
  auto cfg = random_encoder(kind, rng);
  models::SequenceModel model(ds.schema, cfg, rng());
  // Zero-initialised biases behind a fully dead ReLU layer put the next
  // pre-activation exactly on the kink; jitter every weight off it.
  for (auto& p : model.params())
    if (p.trainable)
      for (auto& v : p.value.vec()) v += uniform(rng, -0.1, 0.1);
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto batch = models::make_batch(ds, idx);
  Rng wrng(rng());
  const ad::Tensor w = random_tensor(batch.size(), models::head_width(ds.schema), wrng, 0.5, 1.5);
  return param_gradcheck(model.params(), [&](ad::Tape& tape) {
    Rng unused(0);
    auto out = model.forward(tape, batch, cfg.input_batchnorm, unused);
    return ad::sum_all(ad::mul(out, tape.constant(w)));
  });
}

inline std::vector<OpCase> encoder_cases() {
  return {{"encoder/mlp", [](Rng& rng) { return encoder_gradcheck(models::EncoderKind::kMlp, rng); }},
          {"encoder/gru", [](Rng& rng) { return encoder_gradcheck(models::EncoderKind::kGru, rng); }},
          {"encoder/time_attention",
           [](Rng& rng) { return encoder_gradcheck(models::EncoderKind::kTimeAttention, rng); }}};
}

}  // namespace evseq::testing
