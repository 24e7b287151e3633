#include "seq/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "common/error.hpp"

namespace evseq::seq {

void FeatureSchema::validate() const {
  std::set<std::string> names;
  for (const auto& f : numeric) {
    if (f.name.empty()) throw SchemaError("empty numeric feature name");
    if (!names.insert(f.name).second) throw SchemaError("duplicate feature name '" + f.name + "'");
  }
  for (const auto& f : categorical) {
    if (f.name.empty()) throw SchemaError("empty categorical feature name");
    if (!names.insert(f.name).second) throw SchemaError("duplicate feature name '" + f.name + "'");
    if (f.cardinality < 2)
      throw SchemaError("categorical feature '" + f.name + "' needs cardinality >= 2 (real categories + missing)");
  }
  if (num_targets < 1) throw SchemaError("number of targets must be >= 1");
  if (target_kind == TargetKind::kRegression && num_targets != 1)
    throw SchemaError("regression schema must have exactly one target");
}

int FeatureSchema::numeric_index(const std::string& name) const {
  for (std::size_t i = 0; i < numeric.size(); ++i)
    if (numeric[i].name == name) return static_cast<int>(i);
  return -1;
}

int FeatureSchema::categorical_index(const std::string& name) const {
  for (std::size_t i = 0; i < categorical.size(); ++i)
    if (categorical[i].name == name) return static_cast<int>(i);
  return -1;
}

bool FeatureSchema::operator==(const FeatureSchema& o) const {
  if (numeric.size() != o.numeric.size() || categorical.size() != o.categorical.size()) return false;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const auto &a = numeric[i], &b = o.numeric[i];
    if (a.name != b.name || a.imputation != b.imputation || a.log_transform != b.log_transform) return false;
  }
  for (std::size_t i = 0; i < categorical.size(); ++i) {
    if (categorical[i].name != o.categorical[i].name || categorical[i].cardinality != o.categorical[i].cardinality)
      return false;
  }
  return time_field == o.time_field && target_kind == o.target_kind && num_targets == o.num_targets;
}

bool EventSequence::operator==(const EventSequence& o) const {
  if (id != o.id || times != o.times || mask != o.mask || categorical != o.categorical || target != o.target)
    return false;
  if (numeric.size() != o.numeric.size()) return false;
  for (std::size_t f = 0; f < numeric.size(); ++f) {
    if (numeric[f].size() != o.numeric[f].size()) return false;
    for (std::size_t i = 0; i < numeric[f].size(); ++i) {
      double a = numeric[f][i], b = o.numeric[f][i];
      if (std::isnan(a) && std::isnan(b)) continue;
      if (a != b) return false;
    }
  }
  bool ta = traveling_time.has_value(), tb = o.traveling_time.has_value();
  if (ta != tb) return false;
  if (ta && (traveling_time->absolute != o.traveling_time->absolute || traveling_time->delta != o.traveling_time->delta))
    return false;
  return true;
}

void Dataset::validate() const {
  schema.validate();
  for (const auto& s : sequences) {
    const std::size_t n = s.length();
    if (n == 0) throw SchemaError("sequence '" + s.id + "' is empty");
    if (s.numeric.size() != schema.numeric.size() || s.mask.size() != schema.numeric.size())
      throw SchemaError("sequence '" + s.id + "' numeric feature count mismatch");
    if (s.categorical.size() != schema.categorical.size())
      throw SchemaError("sequence '" + s.id + "' categorical feature count mismatch");
    for (std::size_t f = 0; f < s.numeric.size(); ++f)
      if (s.numeric[f].size() != n || s.mask[f].size() != n)
        throw SchemaError("sequence '" + s.id + "' feature '" + schema.numeric[f].name + "' length mismatch");
    for (std::size_t f = 0; f < s.categorical.size(); ++f) {
      if (s.categorical[f].size() != n)
        throw SchemaError("sequence '" + s.id + "' feature '" + schema.categorical[f].name + "' length mismatch");
      for (int c : s.categorical[f])
        if (c < 0 || c >= schema.categorical[f].cardinality)
          throw SchemaError("sequence '" + s.id + "' feature '" + schema.categorical[f].name + "' code " +
                            std::to_string(c) + " outside [0, " + std::to_string(schema.categorical[f].cardinality) +
                            ")");
    }
    for (std::size_t i = 1; i < n; ++i)
      if (s.times[i] < s.times[i - 1]) throw SchemaError("sequence '" + s.id + "' times are not sorted");
    switch (schema.target_kind) {
      case TargetKind::kClassification: {
        const int* c = std::get_if<int>(&s.target);
        if (!c || *c < 0 || *c >= schema.num_targets)
          throw SchemaError("sequence '" + s.id + "' has an invalid class target");
        break;
      }
      case TargetKind::kRegression:
        if (!std::holds_alternative<double>(s.target))
          throw SchemaError("sequence '" + s.id + "' has a non-numeric regression target");
        break;
      case TargetKind::kMultilabel: {
        const auto* v = std::get_if<std::vector<int>>(&s.target);
        if (!v || static_cast<int>(v->size()) != schema.num_targets)
          throw SchemaError("sequence '" + s.id + "' has an invalid multilabel target");
        break;
      }
    }
  }
}

double target_value(const Target& t) {
  if (const int* c = std::get_if<int>(&t)) return *c;
  if (const double* v = std::get_if<double>(&t)) return *v;
  throw Error("multilabel target has no scalar value");
}

std::vector<double> quartile_cuts(const Dataset& ds, const std::vector<std::size_t>& pool) {
  if (ds.schema.target_kind != TargetKind::kRegression) return {};
  std::vector<double> v;
  v.reserve(pool.size());
  for (auto i : pool) v.push_back(std::get<double>(ds.target(i, "split")));
  if (v.empty()) return {};
  std::sort(v.begin(), v.end());
  std::vector<double> cuts;
  for (int q = 1; q <= 3; ++q) cuts.push_back(v[(v.size() * q) / 4 < v.size() ? (v.size() * q) / 4 : v.size() - 1]);
  return cuts;
}

std::string stratum_key(const Target& t, const std::vector<double>& cuts) {
  if (const int* c = std::get_if<int>(&t)) return "class " + std::to_string(*c);
  if (const double* v = std::get_if<double>(&t)) {
    int bin = 0;
    for (double c : cuts)
      if (*v >= c) ++bin;
    return "quartile " + std::to_string(bin);
  }
  std::string key = "labels ";
  for (int b : std::get<std::vector<int>>(t)) key += b ? '1' : '0';
  return key;
}

TargetAudit::TargetAudit(std::size_t n, const std::vector<std::size_t>& protected_indices) : protected_(n, false) {
  for (auto i : protected_indices) {
    if (i >= n) throw Error("target audit: index " + std::to_string(i) + " out of range");
    protected_[i] = true;
  }
}

void TargetAudit::record(std::size_t index, const std::string& context) {
  std::lock_guard lock(mu_);
  if (open_ || index >= protected_.size() || !protected_[index]) return;
  violations_.push_back(std::to_string(index) + ":" + context);
}

void TargetAudit::open_scoring() {
  std::lock_guard lock(mu_);
  open_ = true;
}

bool TargetAudit::scoring_open() const {
  std::lock_guard lock(mu_);
  return open_;
}

std::vector<std::string> TargetAudit::violations() const {
  std::lock_guard lock(mu_);
  return violations_;
}

}  // namespace evseq::seq
