#include "models/config.hpp"

#include "common/error.hpp"

namespace evseq::models {

using nlohmann::json;

std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::kMlp: return "mlp";
    case EncoderKind::kGru: return "gru";
    case EncoderKind::kTimeAttention: return "time_attention";
  }
  return "gru";
}

std::string to_string(Aggregation a) { return a == Aggregation::kLastHidden ? "last_hidden" : "mean_hidden"; }

std::string to_string(TimeMode m) {
  switch (m) {
    case TimeMode::kNone: return "none";
    case TimeMode::kDelta: return "delta";
    case TimeMode::kAbsolute: return "absolute";
  }
  return "none";
}

EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "mlp") return EncoderKind::kMlp;
  if (s == "gru") return EncoderKind::kGru;
  if (s == "time_attention") return EncoderKind::kTimeAttention;
  throw Error("unknown encoder kind '" + s + "'");
}

Aggregation parse_aggregation(const std::string& s) {
  if (s == "last_hidden") return Aggregation::kLastHidden;
  if (s == "mean_hidden") return Aggregation::kMeanHidden;
  throw Error("unknown aggregation '" + s + "'");
}

TimeMode parse_time_mode(const std::string& s) {
  if (s == "none") return TimeMode::kNone;
  if (s == "delta") return TimeMode::kDelta;
  if (s == "absolute") return TimeMode::kAbsolute;
  throw Error("unknown time mode '" + s + "'");
}

void EncoderConfig::validate(const std::string& pointer) const {
  if (hidden < 1) throw ValidationError(pointer + "/hidden", "must be >= 1");
  if (embed_dim < 1) throw ValidationError(pointer + "/embed_dim", "must be >= 1");
  for (std::size_t i = 0; i < embed_dims.size(); ++i)
    if (embed_dims[i] < 1) throw ValidationError(pointer + "/embed_dims/" + std::to_string(i), "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError(pointer + "/dropout", "must lie in [0, 1)");
  if (kind == EncoderKind::kTimeAttention) {
    if (n_ref_points < 1) throw ValidationError(pointer + "/n_ref_points", "must be >= 1");
    if (n_freqs < 1) throw ValidationError(pointer + "/n_freqs", "must be >= 1");
    if (n_heads < 1) throw ValidationError(pointer + "/n_heads", "must be >= 1");
  }
}

json EncoderConfig::to_json() const {
  json j{{"kind", to_string(kind)},
         {"hidden", hidden},
         {"embed_dims", embed_dims},
         {"embed_dim", embed_dim},
         {"aggregation", to_string(aggregation)},
         {"time_mode", to_string(time_mode)},
         {"input_batchnorm", input_batchnorm},
         {"dropout", dropout}};
  if (kind == EncoderKind::kTimeAttention) {
    j["n_ref_points"] = n_ref_points;
    j["n_freqs"] = n_freqs;
    j["n_heads"] = n_heads;
  }
  return j;
}

namespace {

template <typename T>
T field(const json& j, const char* key, T fallback, const std::string& pointer) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(pointer + "/" + key, "has the wrong type");
  }
}

template <typename Parse>
auto enum_field(const json& j, const char* key, decltype(std::declval<Parse>()(std::string())) fallback,
                const std::string& pointer, Parse parse) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ValidationError(pointer + "/" + key, "must be a string");
  try {
    return parse(j.at(key).get<std::string>());
  } catch (const Error& e) {
    throw ValidationError(pointer + "/" + key, e.what());
  }
}

std::size_t count_field(const json& j, const char* key, std::size_t fallback, const std::string& pointer) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    throw ValidationError(pointer + "/" + key, "must be a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

EncoderConfig EncoderConfig::from_json(const json& j, const std::string& pointer) {
  if (!j.is_object()) throw ValidationError(pointer.empty() ? "/" : pointer, "must be an object");
  EncoderConfig c;
  c.kind = enum_field(j, "kind", c.kind, pointer, parse_encoder_kind);
  c.hidden = count_field(j, "hidden", c.hidden, pointer);
  if (j.contains("embed_dims")) {
    if (!j["embed_dims"].is_array()) throw ValidationError(pointer + "/embed_dims", "must be an array");
    c.embed_dims.clear();
    for (std::size_t i = 0; i < j["embed_dims"].size(); ++i) {
      const auto& v = j["embed_dims"][i];
      if (!v.is_number_integer() || v.get<long long>() < 1)
        throw ValidationError(pointer + "/embed_dims/" + std::to_string(i), "must be a positive integer");
      c.embed_dims.push_back(v.get<std::size_t>());
    }
  }
  c.embed_dim = count_field(j, "embed_dim", c.embed_dim, pointer);
  c.aggregation = enum_field(j, "aggregation", c.aggregation, pointer, parse_aggregation);
  c.time_mode = enum_field(j, "time_mode", c.time_mode, pointer, parse_time_mode);
  c.input_batchnorm = field(j, "input_batchnorm", c.input_batchnorm, pointer);
  c.dropout = field(j, "dropout", c.dropout, pointer);
  c.n_ref_points = count_field(j, "n_ref_points", c.n_ref_points, pointer);
  c.n_freqs = count_field(j, "n_freqs", c.n_freqs, pointer);
  c.n_heads = count_field(j, "n_heads", c.n_heads, pointer);
  c.validate(pointer);
  return c;
}

void TrainConfig::validate(const std::string& pointer) const {
  if (!(lr > 0.0)) throw ValidationError(pointer + "/lr", "must be > 0");
  if (batch_size < 1) throw ValidationError(pointer + "/batch_size", "must be >= 1");
  if (max_iters < 1) throw ValidationError(pointer + "/max_iters", "must be >= 1");
  if (max_epochs < 1) throw ValidationError(pointer + "/max_epochs", "must be >= 1");
  if (patience < 1) throw ValidationError(pointer + "/patience", "must be >= 1");
  if (!(grad_clip >= 0.0)) throw ValidationError(pointer + "/grad_clip", "must be >= 0 (0 disables clipping)");
}

json TrainConfig::to_json() const {
  return json{{"lr", lr},         {"batch_size", batch_size}, {"max_iters", max_iters}, {"max_epochs", max_epochs},
              {"patience", patience}, {"grad_clip", grad_clip},   {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j, const std::string& pointer) {
  if (!j.is_object()) throw ValidationError(pointer.empty() ? "/" : pointer, "must be an object");
  TrainConfig c;
  c.lr = field(j, "lr", c.lr, pointer);
  c.batch_size = count_field(j, "batch_size", c.batch_size, pointer);
  c.max_iters = count_field(j, "max_iters", c.max_iters, pointer);
  c.max_epochs = count_field(j, "max_epochs", c.max_epochs, pointer);
  c.patience = count_field(j, "patience", c.patience, pointer);
  c.grad_clip = field(j, "grad_clip", c.grad_clip, pointer);
  c.seed = field(j, "seed", c.seed, pointer);
  c.validate(pointer);
  return c;
}

}  // namespace evseq::models
