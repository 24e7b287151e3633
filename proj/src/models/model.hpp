#pragma once

#include <cstddef>
#include <vector>

#include "ad/ops.hpp"
#include "ad/tape.hpp"
#include "models/batch.hpp"
#include "models/config.hpp"
#include "seq/dataset.hpp"

namespace evseq::models {

// Per-event input width: numerics + masks + categorical embeddings + time.
std::size_t event_width(const seq::FeatureSchema& schema, const EncoderConfig& cfg);
// Output width of the task head: classes, labels, or 1 for regression.
std::size_t head_width(const seq::FeatureSchema& schema);
// Embedding width per categorical feature after defaulting.
std::vector<std::size_t> resolved_embed_dims(const seq::FeatureSchema& schema, const EncoderConfig& cfg);

// Evenly spaced reference times in [0, 1].
std::vector<double> reference_times(std::size_t n);

// Encoder plus task head. Parameter names starting with "head." belong to the
// head; everything else is the encoder.
class SequenceModel {
 public:
  SequenceModel() = default;
  SequenceModel(const seq::FeatureSchema& schema, const EncoderConfig& cfg, std::uint64_t init_seed);

  // Per-event features: (batchnormed) numerics, masks, categorical
  // embeddings, then the time column selected by time_mode.
  ad::Var embed_events(ad::Tape& tape, const Batch& batch, bool training);
  // Fixed-length sequence embeddings, batch x hidden.
  ad::Var encode(ad::Tape& tape, const Batch& batch, bool training);
  // Head logits (or regression output) before the output nonlinearity.
  ad::Var forward(ad::Tape& tape, const Batch& batch, bool training, Rng& rng);

  // Attention weights of the last time-attention encode when kept: row
  // (k * B + b) * R + r holds head k, sequence b, reference point r.
  const std::vector<std::vector<double>>& last_attention() const { return attention_; }
  void keep_attention(bool on) { keep_attention_ = on; }

  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }
  const EncoderConfig& config() const { return cfg_; }
  const seq::FeatureSchema& schema() const { return schema_; }

 private:
  ad::Var param(ad::Tape& tape, const char* name) { return tape.param(params_.get(name)); }
  ad::Var linear(ad::Tape& tape, ad::Var x, const std::string& prefix);
  // Time-major states -> one row per sequence per the aggregation.
  ad::Var pool(ad::Var states, const std::vector<std::size_t>& lengths);
  ad::Var run_gru(ad::Tape& tape, ad::Var x_time_major, const std::vector<std::size_t>& lengths,
                  const std::string& prefix);
  ad::Var encode_mlp(ad::Tape& tape, ad::Var events, const Batch& batch);
  ad::Var encode_gru(ad::Tape& tape, ad::Var events, const Batch& batch);
  ad::Var encode_time_attention(ad::Tape& tape, ad::Var events, const Batch& batch);
  ad::Var time_embedding(ad::Tape& tape, const std::vector<double>& t);

  seq::FeatureSchema schema_;
  EncoderConfig cfg_;
  ad::ParameterStore params_;
  bool keep_attention_ = false;
  std::vector<std::vector<double>> attention_;
};

}  // namespace evseq::models
