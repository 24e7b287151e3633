#include "hpo/method.hpp"

#include "common/error.hpp"

namespace evseq::hpo {

using nlohmann::json;

void MethodSpec::validate(const std::string& pointer) const {
  if (name.empty()) throw ValidationError(pointer + "/name", "must be non-empty");
  encoder.validate(pointer + "/encoder");
  train.validate(pointer + "/train");
  if (coles) {
    if (encoder.kind != models::EncoderKind::kGru)
      throw ValidationError(pointer + "/coles", "contrastive pretraining needs a gru encoder");
    if (coles_epochs < 1) throw ValidationError(pointer + "/coles_epochs", "must be >= 1");
    if (!(coles_config.margin > 0.0)) throw ValidationError(pointer + "/coles_margin", "must be > 0");
  }
}

json MethodSpec::to_json() const {
  json j{{"name", name}, {"encoder", encoder.to_json()}, {"train", train.to_json()}, {"coles", coles}};
  if (coles) {
    j["coles_epochs"] = coles_epochs;
    j["coles_margin"] = coles_config.margin;
    j["freeze_encoder"] = freeze_encoder;
  }
  return j;
}

MethodSpec MethodSpec::from_json(const json& j, const std::string& pointer) {
  if (!j.is_object()) throw ValidationError(pointer, "must be an object");
  MethodSpec m;
  if (j.contains("name")) {
    if (!j["name"].is_string()) throw ValidationError(pointer + "/name", "must be a string");
    m.name = j["name"].get<std::string>();
  }
  if (j.contains("encoder")) m.encoder = models::EncoderConfig::from_json(j["encoder"], pointer + "/encoder");
  if (j.contains("train")) m.train = models::TrainConfig::from_json(j["train"], pointer + "/train");
  try {
    m.coles = j.value("coles", false);
    m.coles_epochs = j.value("coles_epochs", m.coles_epochs);
    m.coles_config.margin = j.value("coles_margin", m.coles_config.margin);
    m.freeze_encoder = j.value("freeze_encoder", false);
  } catch (const json::exception& e) {
    throw ValidationError(pointer, std::string("bad pretraining field: ") + e.what());
  }
  m.validate(pointer);
  return m;
}

std::pair<models::EncoderConfig, models::TrainConfig> apply_assignment(const MethodSpec& m, const Assignment& a) {
  static const char* kEncoderKeys[] = {"hidden",       "aggregation", "time_mode", "input_batchnorm", "dropout",
                                       "n_ref_points", "n_freqs",     "n_heads",   "embed_dim"};
  static const char* kTrainKeys[] = {"lr", "batch_size", "patience"};
  json enc = m.encoder.to_json(), tr = m.train.to_json();
  for (const auto& [key, value] : a) {
    bool known = false;
    for (const char* k : kEncoderKeys)
      if (key == k) {
        enc[key] = value;
        known = true;
      }
    for (const char* k : kTrainKeys)
      if (key == k) {
        tr[key] = value;
        known = true;
      }
    if (!known) throw ValidationError("/space/" + key, "not a tunable parameter");
  }
  return {models::EncoderConfig::from_json(enc, "/encoder"), models::TrainConfig::from_json(tr, "/train")};
}

models::TrainedModel train_method(const seq::Dataset& ds, const seq::IndexSet& train, const seq::IndexSet& train_val,
                                  const MethodSpec& m, const Assignment& a, std::uint64_t seed) {
  auto [ec, tc] = apply_assignment(m, a);
  tc.seed = seed;
  if (!m.coles) return models::train_supervised(ds, train, train_val, ec, tc);
  models::TrainConfig pre = tc;
  pre.max_epochs = m.coles_epochs;
  const auto encoder = models::coles_pretrain(ds, train, ec, pre, m.coles_config);
  models::TrainOptions opts;
  opts.init = &encoder;
  opts.freeze_encoder = m.freeze_encoder;
  return models::train_supervised(ds, train, train_val, ec, tc, opts);
}

}  // namespace evseq::hpo
