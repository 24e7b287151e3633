#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace evseq::models {

enum class EncoderKind { kMlp, kGru, kTimeAttention };
enum class Aggregation { kLastHidden, kMeanHidden };
enum class TimeMode { kNone, kDelta, kAbsolute };

std::string to_string(EncoderKind k);
std::string to_string(Aggregation a);
std::string to_string(TimeMode m);
EncoderKind parse_encoder_kind(const std::string& s);
Aggregation parse_aggregation(const std::string& s);
TimeMode parse_time_mode(const std::string& s);

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kGru;
  std::size_t hidden = 32;
  // Embedding width per categorical feature; features past the end of
  // embed_dims use embed_dim.
  std::vector<std::size_t> embed_dims;
  std::size_t embed_dim = 4;
  Aggregation aggregation = Aggregation::kLastHidden;
  TimeMode time_mode = TimeMode::kAbsolute;
  bool input_batchnorm = false;
  double dropout = 0.0;
  // Time attention only.
  std::size_t n_ref_points = 16;
  std::size_t n_freqs = 8;
  std::size_t n_heads = 1;

  // Throws ValidationError with a JSON pointer below `pointer`.
  void validate(const std::string& pointer = "") const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j, const std::string& pointer = "");
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 64;
  std::size_t max_iters = 100000;
  std::size_t max_epochs = 1000;
  std::size_t patience = 5;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;

  void validate(const std::string& pointer = "") const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const std::string& pointer = "");
};

}  // namespace evseq::models
