#pragma once

#include <string>
#include <utility>

#include "hpo/space.hpp"
#include "models/coles.hpp"
#include "models/train.hpp"

namespace evseq::hpo {

// A trainable method: base configs that HPO assignments override, plus
// optional contrastive pretraining before supervised fine-tuning.
struct MethodSpec {
  std::string name = "gru";
  models::EncoderConfig encoder;
  models::TrainConfig train;
  bool coles = false;
  models::ColesConfig coles_config;
  std::size_t coles_epochs = 5;
  bool freeze_encoder = false;

  void validate(const std::string& pointer = "/method") const;
  nlohmann::json to_json() const;
  static MethodSpec from_json(const nlohmann::json& j, const std::string& pointer = "/method");
};

// Tunable names: encoder keys (hidden, aggregation, time_mode,
// input_batchnorm, dropout, n_ref_points, n_freqs, n_heads, embed_dim) and
// train keys (lr, batch_size, patience). Unknown names throw ValidationError.
std::pair<models::EncoderConfig, models::TrainConfig> apply_assignment(const MethodSpec& m, const Assignment& a);

// Builds and trains one model; `seed` drives initialisation and batching.
models::TrainedModel train_method(const seq::Dataset& ds, const seq::IndexSet& train, const seq::IndexSet& train_val,
                                  const MethodSpec& m, const Assignment& a, std::uint64_t seed);

}  // namespace evseq::hpo
