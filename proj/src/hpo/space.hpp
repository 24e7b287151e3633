#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "common/rng.hpp"

namespace evseq::hpo {

struct RealRange {
  double lo = 0.0;
  double hi = 1.0;
  bool log = false;
};

struct IntRange {
  long long lo = 0;
  long long hi = 1;
  bool log = false;
};

struct Categorical {
  std::vector<nlohmann::json> choices;
};

using Domain = std::variant<RealRange, IntRange, Categorical>;

struct ParamDef {
  std::string name;
  Domain domain;
};

// Parameter name -> value (JSON number, string or bool).
using Assignment = std::map<std::string, nlohmann::json>;

class ParamSpace {
 public:
  ParamSpace() = default;
  explicit ParamSpace(std::vector<ParamDef> params);

  // Throws ValidationError for degenerate ranges, non-positive log bounds,
  // empty categorical sets or duplicate names.
  void validate(const std::string& pointer = "/space") const;
  const std::vector<ParamDef>& params() const { return params_; }
  bool empty() const { return params_.empty(); }
  const ParamDef* find(const std::string& name) const;
  bool contains(const Assignment& a) const;
  // Uniform draw (log-uniform on log ranges).
  Assignment sample_uniform(Rng& rng) const;
  ParamSpace without(const std::string& name) const;

  // {"lr": {"type": "real", "low": 1e-4, "high": 1e-2, "log": true},
  //  "hidden": {"type": "int", "low": 16, "high": 64},
  //  "aggregation": {"type": "categorical", "choices": ["last_hidden", "mean_hidden"]}}
  nlohmann::json to_json() const;
  static ParamSpace from_json(const nlohmann::json& j, const std::string& pointer = "/space");

 private:
  std::vector<ParamDef> params_;
};

// Index of `value` in the categorical choices, or -1.
int choice_index(const Categorical& c, const nlohmann::json& value);

}  // namespace evseq::hpo
