#include "models/model.hpp"

#include <cmath>

#include "common/error.hpp"

namespace evseq::models {

using ad::Tensor;
using ad::Var;

std::vector<std::size_t> resolved_embed_dims(const seq::FeatureSchema& schema, const EncoderConfig& cfg) {
  std::vector<std::size_t> dims(schema.categorical.size(), cfg.embed_dim);
  for (std::size_t i = 0; i < dims.size() && i < cfg.embed_dims.size(); ++i) dims[i] = cfg.embed_dims[i];
  return dims;
}

std::size_t event_width(const seq::FeatureSchema& schema, const EncoderConfig& cfg) {
  std::size_t w = 2 * schema.numeric.size();
  for (auto d : resolved_embed_dims(schema, cfg)) w += d;
  if (cfg.time_mode != TimeMode::kNone) w += 1;
  return w;
}

std::size_t head_width(const seq::FeatureSchema& schema) {
  return schema.target_kind == seq::TargetKind::kRegression ? 1 : static_cast<std::size_t>(schema.num_targets);
}

std::vector<double> reference_times(std::size_t n) {
  std::vector<double> r(n, 0.0);
  for (std::size_t i = 0; n > 1 && i < n; ++i) r[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  return r;
}

namespace {

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.vec()) v = uniform(rng, -bound, bound);
  return t;
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor(fan_in, fan_out, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

void add_linear(ad::ParameterStore& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
  ps.add(prefix + ".w", xavier(in, out, rng));
  ps.add(prefix + ".b", Tensor::matrix(1, out));
}

void add_gru(ad::ParameterStore& ps, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  ps.add(prefix + ".w_ih", uniform_tensor(in, 3 * hidden, k, rng));
  ps.add(prefix + ".w_hh", uniform_tensor(hidden, 3 * hidden, k, rng));
  ps.add(prefix + ".b_ih", uniform_tensor(1, 3 * hidden, k, rng));
  ps.add(prefix + ".b_hh", uniform_tensor(1, 3 * hidden, k, rng));
}

}  // namespace

SequenceModel::SequenceModel(const seq::FeatureSchema& schema, const EncoderConfig& cfg, std::uint64_t init_seed)
    : schema_(schema), cfg_(cfg) {
  schema_.validate();
  cfg_.validate();
  const std::size_t width = event_width(schema_, cfg_);
  if (width == 0) throw ValidationError("/encoder", "no per-event input features (no numerics, categoricals or time)");
  Rng rng = make_rng(init_seed, {sid(Stream::kInit)});
  const auto dims = resolved_embed_dims(schema_, cfg_);
  for (std::size_t f = 0; f < dims.size(); ++f)
    params_.add("embed." + schema_.categorical[f].name,
                uniform_tensor(static_cast<std::size_t>(schema_.categorical[f].cardinality), dims[f], 0.5, rng));
  const std::size_t nf = schema_.numeric.size();
  if (cfg_.input_batchnorm && nf > 0) {
    params_.add("bn.gamma", Tensor::matrix(1, nf, 1.0));
    params_.add("bn.beta", Tensor::matrix(1, nf));
    params_.add("bn.running_mean", Tensor::matrix(1, nf), false);
    params_.add("bn.running_var", Tensor::matrix(1, nf, 1.0), false);
  }
  const std::size_t h = cfg_.hidden;
  switch (cfg_.kind) {
    case EncoderKind::kMlp:
      add_linear(params_, "mlp.l1", width, h, rng);
      add_linear(params_, "mlp.l2", h, h, rng);
      break;
    case EncoderKind::kGru:
      add_gru(params_, "gru", width, h, rng);
      break;
    case EncoderKind::kTimeAttention: {
      const std::size_t f = cfg_.n_freqs;
      params_.add("time.linear_w", uniform_tensor(1, 1, 1.0, rng));
      params_.add("time.linear_b", Tensor::matrix(1, 1));
      if (f > 1) {
        params_.add("time.freq_w", uniform_tensor(1, f - 1, 10.0, rng));
        params_.add("time.freq_b", uniform_tensor(1, f - 1, M_PI, rng));
      }
      for (std::size_t k = 0; k < cfg_.n_heads; ++k) {
        params_.add("attn.q" + std::to_string(k), xavier(f, f, rng));
        params_.add("attn.k" + std::to_string(k), xavier(f, f, rng));
      }
      add_linear(params_, "attn.proj", cfg_.n_heads * width, h, rng);
      add_gru(params_, "ref_gru", h, h, rng);
      break;
    }
  }
  add_linear(params_, "head", h, head_width(schema_), rng);
}

Var SequenceModel::linear(ad::Tape& tape, Var x, const std::string& prefix) {
  return ad::add(ad::matmul(x, tape.param(params_.get(prefix + ".w"))), tape.param(params_.get(prefix + ".b")));
}

Var SequenceModel::embed_events(ad::Tape& tape, const Batch& batch, bool training) {
  if (batch.size() == 0) throw ShapeError("embed_events: empty batch");
  for (std::size_t b = 0; b < batch.size(); ++b)
    if (batch.lengths[b] == 0) throw ShapeError("embed_events: sequence " + std::to_string(b) + " has no valid events");
  const std::size_t n = batch.events();
  std::vector<Var> parts;
  if (!schema_.numeric.empty()) {
    if (batch.numeric.cols() != schema_.numeric.size())
      throw ShapeError("embed_events: batch has " + std::to_string(batch.numeric.cols()) + " numerics, schema " +
                       std::to_string(schema_.numeric.size()));
    Var num = tape.constant(batch.numeric);
    if (cfg_.input_batchnorm)
      num = ad::batchnorm(num, param(tape, "bn.gamma"), param(tape, "bn.beta"), params_.get("bn.running_mean"),
                          params_.get("bn.running_var"), training);
    parts.push_back(num);
    parts.push_back(tape.constant(batch.mask));
  }
  for (std::size_t f = 0; f < schema_.categorical.size(); ++f) {
    for (int c : batch.categorical[f])
      if (c < 0 || c >= schema_.categorical[f].cardinality)
        throw SchemaError("embed_events: feature '" + schema_.categorical[f].name + "' code " + std::to_string(c) +
                          " unseen (cardinality " + std::to_string(schema_.categorical[f].cardinality) + ")");
    parts.push_back(ad::embedding(tape.param(params_.get("embed." + schema_.categorical[f].name)),
                                  batch.categorical[f]));
  }
  if (cfg_.time_mode != TimeMode::kNone) {
    const auto& col = cfg_.time_mode == TimeMode::kAbsolute ? batch.time_abs : batch.time_delta;
    parts.push_back(tape.constant(Tensor({n, 1}, col)));
  }
  return parts.size() == 1 ? parts[0] : ad::concat_cols(parts);
}

Var SequenceModel::pool(Var states, const std::vector<std::size_t>& lengths) {
  const std::size_t B = lengths.size();
  if (cfg_.aggregation == Aggregation::kLastHidden) {
    std::vector<std::size_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) rows[b] = (lengths[b] - 1) * B + b;
    return ad::gather_rows(states, rows);
  }
  std::vector<std::size_t> rows, seg;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < lengths[b]; ++t) {
      rows.push_back(t * B + b);
      seg.push_back(b);
    }
  return ad::segment_mean(ad::gather_rows(states, rows), seg, B);
}

Var SequenceModel::run_gru(ad::Tape& tape, Var x, const std::vector<std::size_t>& lengths, const std::string& prefix) {
  return ad::gru_sequence(x, param(tape, (prefix + ".w_ih").c_str()), param(tape, (prefix + ".w_hh").c_str()),
                          param(tape, (prefix + ".b_ih").c_str()), param(tape, (prefix + ".b_hh").c_str()), lengths);
}

Var SequenceModel::encode_mlp(ad::Tape& tape, Var events, const Batch& batch) {
  const std::size_t B = batch.size();
  Var pooled;
  if (cfg_.aggregation == Aggregation::kLastHidden) {
    std::vector<std::size_t> rows(B);
    for (std::size_t b = 0; b < B; ++b) rows[b] = batch.offsets[b + 1] - 1;
    pooled = ad::gather_rows(events, rows);
  } else {
    std::vector<std::size_t> seg(batch.events());
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = batch.offsets[b]; i < batch.offsets[b + 1]; ++i) seg[i] = b;
    pooled = ad::segment_mean(events, seg, B);
  }
  return ad::relu(linear(tape, ad::relu(linear(tape, pooled, "mlp.l1")), "mlp.l2"));
}

Var SequenceModel::encode_gru(ad::Tape& tape, Var events, const Batch& batch) {
  const std::size_t B = batch.size(), T = batch.max_length(), n = batch.events();
  // Time-major padded layout; row n of the padded source is all zeros.
  std::vector<std::size_t> rows(T * B, n);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < batch.lengths[b]; ++t) rows[t * B + b] = batch.offsets[b] + t;
  Var src = ad::concat_rows({events, tape.constant(Tensor::matrix(1, events.cols()))});
  Var states = run_gru(tape, ad::gather_rows(src, rows), batch.lengths, "gru");
  return pool(states, batch.lengths);
}

Var SequenceModel::time_embedding(ad::Tape& tape, const std::vector<double>& t) {
  Var tv = tape.constant(Tensor({t.size(), 1}, t));
  Var lin = ad::add(ad::matmul(tv, param(tape, "time.linear_w")), param(tape, "time.linear_b"));
  if (cfg_.n_freqs == 1) return lin;
  Var per = ad::sin(ad::add(ad::matmul(tv, param(tape, "time.freq_w")), param(tape, "time.freq_b")));
  return ad::concat_cols({lin, per});
}

Var SequenceModel::encode_time_attention(ad::Tape& tape, Var events, const Batch& batch) {
  const std::size_t B = batch.size(), R = cfg_.n_ref_points;
  std::vector<double> key_times;
  if (cfg_.time_mode == TimeMode::kNone) {
    key_times.resize(batch.events());
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t len = batch.lengths[b];
      for (std::size_t i = 0; i < len; ++i)
        key_times[batch.offsets[b] + i] = len > 1 ? static_cast<double>(i) / static_cast<double>(len - 1) : 0.0;
    }
  } else {
    key_times = batch.time_abs;
  }
  Var q_emb = time_embedding(tape, reference_times(R));
  Var k_emb = time_embedding(tape, key_times);
  std::vector<Var> heads;
  if (keep_attention_) attention_.clear();
  for (std::size_t k = 0; k < cfg_.n_heads; ++k) {
    const std::string id = std::to_string(k);
    Var q = ad::matmul(q_emb, tape.param(params_.get("attn.q" + id)));
    Var key = ad::matmul(k_emb, tape.param(params_.get("attn.k" + id)));
    std::vector<std::vector<double>> w;
    heads.push_back(ad::segment_attention(q, key, events, batch.offsets, keep_attention_ ? &w : nullptr));
    for (auto& row : w) attention_.push_back(std::move(row));
  }
  Var att = heads.size() == 1 ? heads[0] : ad::concat_cols(heads);
  Var proj = linear(tape, att, "attn.proj");  // row b * R + r
  std::vector<std::size_t> rows(R * B);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t b = 0; b < B; ++b) rows[r * B + b] = b * R + r;
  std::vector<std::size_t> lengths(B, R);
  Var states = run_gru(tape, ad::gather_rows(proj, rows), lengths, "ref_gru");
  return pool(states, lengths);
}

Var SequenceModel::encode(ad::Tape& tape, const Batch& batch, bool training) {
  Var events = embed_events(tape, batch, training);
  switch (cfg_.kind) {
    case EncoderKind::kMlp: return encode_mlp(tape, events, batch);
    case EncoderKind::kGru: return encode_gru(tape, events, batch);
    case EncoderKind::kTimeAttention: return encode_time_attention(tape, events, batch);
  }
  throw Error("unknown encoder kind");
}

Var SequenceModel::forward(ad::Tape& tape, const Batch& batch, bool training, Rng& rng) {
  Var z = ad::dropout(encode(tape, batch, training), cfg_.dropout, training, rng);
  return linear(tape, z, "head");
}

}  // namespace evseq::models
