#include "hpo/space.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "common/error.hpp"

namespace evseq::hpo {

using nlohmann::json;

ParamSpace::ParamSpace(std::vector<ParamDef> params) : params_(std::move(params)) {}

void ParamSpace::validate(const std::string& pointer) const {
  std::set<std::string> seen;
  for (const auto& p : params_) {
    const std::string at = pointer + "/" + p.name;
    if (p.name.empty()) throw ValidationError(pointer, "parameter names must be non-empty");
    if (!seen.insert(p.name).second) throw ValidationError(at, "duplicate parameter");
    if (const auto* r = std::get_if<RealRange>(&p.domain)) {
      if (!std::isfinite(r->lo) || !std::isfinite(r->hi) || !(r->lo < r->hi))
        throw ValidationError(at, "real range must satisfy low < high");
      if (r->log && r->lo <= 0.0) throw ValidationError(at + "/low", "log range needs low > 0");
    } else if (const auto* i = std::get_if<IntRange>(&p.domain)) {
      if (!(i->lo < i->hi)) throw ValidationError(at, "int range must satisfy low < high");
      if (i->log && i->lo <= 0) throw ValidationError(at + "/low", "log range needs low > 0");
    } else {
      const auto& c = std::get<Categorical>(p.domain);
      if (c.choices.empty()) throw ValidationError(at + "/choices", "categorical set is empty");
    }
  }
}

const ParamDef* ParamSpace::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

int choice_index(const Categorical& c, const json& value) {
  for (std::size_t i = 0; i < c.choices.size(); ++i)
    if (c.choices[i] == value) return static_cast<int>(i);
  return -1;
}

bool ParamSpace::contains(const Assignment& a) const {
  for (const auto& p : params_) {
    auto it = a.find(p.name);
    if (it == a.end()) return false;
    const json& v = it->second;
    if (const auto* r = std::get_if<RealRange>(&p.domain)) {
      if (!v.is_number()) return false;
      const double x = v.get<double>();
      if (!(x >= r->lo && x <= r->hi)) return false;
    } else if (const auto* i = std::get_if<IntRange>(&p.domain)) {
      if (!v.is_number_integer()) return false;
      const auto x = v.get<long long>();
      if (x < i->lo || x > i->hi) return false;
    } else if (choice_index(std::get<Categorical>(p.domain), v) < 0) {
      return false;
    }
  }
  return true;
}

Assignment ParamSpace::sample_uniform(Rng& rng) const {
  Assignment a;
  for (const auto& p : params_) {
    if (const auto* r = std::get_if<RealRange>(&p.domain)) {
      double x = r->log ? std::exp(uniform(rng, std::log(r->lo), std::log(r->hi))) : uniform(rng, r->lo, r->hi);
      a[p.name] = std::clamp(x, r->lo, r->hi);
    } else if (const auto* i = std::get_if<IntRange>(&p.domain)) {
      const double lo = static_cast<double>(i->lo) - 0.5, hi = static_cast<double>(i->hi) + 0.5;
      double x = i->log ? std::exp(uniform(rng, std::log(lo), std::log(hi)))
                        : uniform(rng, lo, hi);
      a[p.name] = std::clamp(std::llround(x), i->lo, i->hi);
    } else {
      const auto& c = std::get<Categorical>(p.domain);
      a[p.name] = c.choices[static_cast<std::size_t>(rng() % c.choices.size())];
    }
  }
  return a;
}

ParamSpace ParamSpace::without(const std::string& name) const {
  std::vector<ParamDef> out;
  for (const auto& p : params_)
    if (p.name != name) out.push_back(p);
  return ParamSpace(std::move(out));
}

json ParamSpace::to_json() const {
  json j = json::object();
  for (const auto& p : params_) {
    if (const auto* r = std::get_if<RealRange>(&p.domain))
      j[p.name] = {{"type", "real"}, {"low", r->lo}, {"high", r->hi}, {"log", r->log}};
    else if (const auto* i = std::get_if<IntRange>(&p.domain))
      j[p.name] = {{"type", "int"}, {"low", i->lo}, {"high", i->hi}, {"log", i->log}};
    else
      j[p.name] = {{"type", "categorical"}, {"choices", std::get<Categorical>(p.domain).choices}};
  }
  return j;
}

ParamSpace ParamSpace::from_json(const json& j, const std::string& pointer) {
  if (!j.is_object()) throw ValidationError(pointer, "must be an object");
  std::vector<ParamDef> defs;
  for (const auto& [name, d] : j.items()) {
    const std::string at = pointer + "/" + name;
    if (!d.is_object() || !d.contains("type") || !d["type"].is_string())
      throw ValidationError(at, "needs a string \"type\"");
    const auto type = d["type"].get<std::string>();
    auto num = [&](const char* key) {
      if (!d.contains(key) || !d[key].is_number()) throw ValidationError(at + "/" + key, "must be a number");
      return d[key];
    };
    const bool log = d.value("log", false);
    if (type == "real") {
      defs.push_back({name, RealRange{num("low").get<double>(), num("high").get<double>(), log}});
    } else if (type == "int") {
      if (!num("low").is_number_integer() || !num("high").is_number_integer())
        throw ValidationError(at, "int bounds must be integers");
      defs.push_back({name, IntRange{d["low"].get<long long>(), d["high"].get<long long>(), log}});
    } else if (type == "categorical") {
      if (!d.contains("choices") || !d["choices"].is_array()) throw ValidationError(at + "/choices", "must be an array");
      defs.push_back({name, Categorical{d["choices"].get<std::vector<json>>()}});
    } else {
      throw ValidationError(at + "/type", "unknown type '" + type + "'");
    }
  }
  ParamSpace s(std::move(defs));
  s.validate(pointer);
  return s;
}

}  // namespace evseq::hpo
