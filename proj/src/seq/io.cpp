#include "seq/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "common/error.hpp"
#include "common/log.hpp"

namespace evseq::seq {
namespace {

using nlohmann::json;

const char* imputation_name(Imputation i) { return i == Imputation::kForwardFill ? "forward_fill" : "constant"; }

const char* kind_name(TargetKind k) {
  switch (k) {
    case TargetKind::kClassification: return "classification";
    case TargetKind::kRegression: return "regression";
    case TargetKind::kMultilabel: return "multilabel";
  }
  return "regression";
}

Target parse_target(const json& j, const FeatureSchema& schema, std::size_t line) {
  switch (schema.target_kind) {
    case TargetKind::kClassification:
      if (!j.is_number_integer()) throw ParseError(line, "classification target must be an integer");
      if (j.get<long long>() < 0 || j.get<long long>() >= schema.num_targets)
        throw SchemaError("line " + std::to_string(line) + ": class " + j.dump() + " outside [0, " +
                          std::to_string(schema.num_targets) + ")");
      return j.get<int>();
    case TargetKind::kRegression:
      if (!j.is_number()) throw ParseError(line, "regression target must be a number");
      if (!std::isfinite(j.get<double>())) throw ParseError(line, "regression target is not finite");
      return j.get<double>();
    case TargetKind::kMultilabel: {
      if (!j.is_array()) throw ParseError(line, "multilabel target must be an array");
      if (j.size() != static_cast<std::size_t>(schema.num_targets))
        throw SchemaError("line " + std::to_string(line) + ": expected " + std::to_string(schema.num_targets) +
                          " labels, got " + std::to_string(j.size()));
      std::vector<int> v;
      for (const auto& e : j) {
        if (!e.is_number_integer()) throw ParseError(line, "multilabel entries must be integers");
        v.push_back(e.get<int>() ? 1 : 0);
      }
      return v;
    }
  }
  return 0.0;
}

EventSequence parse_record(const json& rec, const FeatureSchema& schema, std::size_t line, bool& resorted) {
  if (!rec.is_object()) throw ParseError(line, "record is not a JSON object");
  EventSequence s;
  auto id_it = rec.find("id");
  if (id_it == rec.end() || !id_it->is_string()) throw ParseError(line, "missing string field 'id'");
  s.id = id_it->get<std::string>();
  auto t_it = rec.find(schema.time_field);
  if (t_it == rec.end() || !t_it->is_array())
    throw ParseError(line, "missing array field '" + schema.time_field + "'");
  for (const auto& v : *t_it) {
    if (!v.is_number()) throw ParseError(line, "non-numeric timestamp");
    s.times.push_back(v.get<double>());
  }
  const std::size_t n = s.times.size();
  if (n == 0) throw SchemaError("sequence '" + s.id + "' is empty (line " + std::to_string(line) + ")");

  s.numeric.assign(schema.numeric.size(), std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  s.mask.assign(schema.numeric.size(), std::vector<std::uint8_t>(n, 0));
  s.categorical.assign(schema.categorical.size(), std::vector<int>(n, 0));

  if (auto it = rec.find("num"); it != rec.end()) {
    if (!it->is_object()) throw ParseError(line, "'num' must be an object");
    for (const auto& [name, arr] : it->items()) {
      int f = schema.numeric_index(name);
      if (f < 0) throw SchemaError("line " + std::to_string(line) + ": unknown numeric feature '" + name + "'");
      if (!arr.is_array() || arr.size() != n)
        throw ParseError(line, "numeric feature '" + name + "' must be an array of length " + std::to_string(n));
      for (std::size_t i = 0; i < n; ++i) {
        if (arr[i].is_null()) continue;
        if (!arr[i].is_number()) throw ParseError(line, "numeric feature '" + name + "' has a non-numeric value");
        s.numeric[f][i] = arr[i].get<double>();
        s.mask[f][i] = 1;
      }
    }
  }
  if (auto it = rec.find("cat"); it != rec.end()) {
    if (!it->is_object()) throw ParseError(line, "'cat' must be an object");
    for (const auto& [name, arr] : it->items()) {
      int f = schema.categorical_index(name);
      if (f < 0) throw SchemaError("line " + std::to_string(line) + ": unknown categorical feature '" + name + "'");
      if (!arr.is_array() || arr.size() != n)
        throw ParseError(line, "categorical feature '" + name + "' must be an array of length " + std::to_string(n));
      for (std::size_t i = 0; i < n; ++i) {
        if (arr[i].is_null()) continue;
        if (!arr[i].is_number_integer())
          throw ParseError(line, "categorical feature '" + name + "' has a non-integer code");
        int c = arr[i].get<int>();
        if (c < 0 || c >= schema.categorical[f].cardinality)
          throw SchemaError("line " + std::to_string(line) + ": category code " + std::to_string(c) +
                            " outside cardinality of '" + name + "'");
        s.categorical[f][i] = c;
      }
    }
  }
  auto tg = rec.find("target");
  if (tg == rec.end()) throw ParseError(line, "missing field 'target'");
  s.target = parse_target(*tg, schema, line);

  if (!std::is_sorted(s.times.begin(), s.times.end())) {
    resorted = true;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return s.times[a] < s.times[b]; });
    auto apply = [&](auto& v) {
      auto copy = v;
      for (std::size_t i = 0; i < n; ++i) v[i] = copy[order[i]];
    };
    apply(s.times);
    for (auto& v : s.numeric) apply(v);
    for (auto& v : s.mask) apply(v);
    for (auto& v : s.categorical) apply(v);
  }
  return s;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

FeatureSchema parse_schema(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("schema is not valid JSON: ") + e.what());
  }
  FeatureSchema s;
  try {
    for (const auto& f : j.value("numeric", json::array())) {
      NumericFeature nf;
      nf.name = f.at("name").get<std::string>();
      std::string imp = f.value("imputation", "constant");
      if (imp == "forward_fill") nf.imputation = Imputation::kForwardFill;
      else if (imp == "constant") nf.imputation = Imputation::kConstant;
      else throw SchemaError("unknown imputation '" + imp + "'");
      nf.log_transform = f.value("log_transform", false);
      s.numeric.push_back(nf);
    }
    for (const auto& f : j.value("categorical", json::array())) {
      s.categorical.push_back({f.at("name").get<std::string>(), f.at("cardinality").get<int>()});
    }
    s.time_field = j.value("time_field", "t");
    const auto& tg = j.at("target");
    std::string kind = tg.at("kind").get<std::string>();
    if (kind == "classification") {
      s.target_kind = TargetKind::kClassification;
      s.num_targets = tg.at("classes").get<int>();
    } else if (kind == "multilabel") {
      s.target_kind = TargetKind::kMultilabel;
      s.num_targets = tg.at("labels").get<int>();
    } else if (kind == "regression") {
      s.target_kind = TargetKind::kRegression;
      s.num_targets = 1;
    } else {
      throw SchemaError("unknown target kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
  s.validate();
  return s;
}

std::string schema_to_json(const FeatureSchema& s) {
  json j;
  j["numeric"] = json::array();
  for (const auto& f : s.numeric)
    j["numeric"].push_back({{"name", f.name}, {"imputation", imputation_name(f.imputation)}, {"log_transform", f.log_transform}});
  j["categorical"] = json::array();
  for (const auto& f : s.categorical) j["categorical"].push_back({{"name", f.name}, {"cardinality", f.cardinality}});
  j["time_field"] = s.time_field;
  json tg{{"kind", kind_name(s.target_kind)}};
  if (s.target_kind == TargetKind::kClassification) tg["classes"] = s.num_targets;
  if (s.target_kind == TargetKind::kMultilabel) tg["labels"] = s.num_targets;
  j["target"] = tg;
  return j.dump(2);
}

FeatureSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open schema file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str());
}

void save_schema(const FeatureSchema& schema, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write schema file '" + path + "'");
  out << schema_to_json(schema) << '\n';
}

Dataset ingest_jsonl(std::istream& in, const FeatureSchema& schema, IngestStats* stats) {
  schema.validate();
  Dataset ds;
  ds.schema = schema;
  IngestStats local;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::exception&) {
      throw ParseError(line, "malformed JSON record");
    }
    bool resorted = false;
    ds.sequences.push_back(parse_record(rec, schema, line, resorted));
    ++local.records;
    if (resorted) ++local.resorted;
  }
  if (local.resorted)
    log::warn(std::to_string(local.resorted) + " sequence(s) had unsorted timestamps and were reordered");
  if (stats) *stats = local;
  return ds;
}

Dataset ingest_jsonl(const std::string& path, const FeatureSchema& schema, IngestStats* stats) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file '" + path + "'");
  return ingest_jsonl(in, schema, stats);
}

void emit_jsonl(const Dataset& ds, std::ostream& out) {
  const auto& schema = ds.schema;
  std::string buf;
  for (const auto& s : ds.sequences) {
    buf.clear();
    buf += "{\"id\":";
    buf += json(s.id).dump();
    buf += ',' + json(ds.schema.time_field).dump() + ":[";
    for (std::size_t i = 0; i < s.times.size(); ++i) {
      if (i) buf += ',';
      buf += format_double(s.times[i]);
    }
    buf += "],\"num\":{";
    for (std::size_t f = 0; f < schema.numeric.size(); ++f) {
      if (f) buf += ',';
      buf += json(schema.numeric[f].name).dump();
      buf += ":[";
      for (std::size_t i = 0; i < s.times.size(); ++i) {
        if (i) buf += ',';
        buf += s.mask[f][i] ? format_double(s.numeric[f][i]) : "null";
      }
      buf += ']';
    }
    buf += "},\"cat\":{";
    for (std::size_t f = 0; f < schema.categorical.size(); ++f) {
      if (f) buf += ',';
      buf += json(schema.categorical[f].name).dump();
      buf += ":[";
      for (std::size_t i = 0; i < s.times.size(); ++i) {
        if (i) buf += ',';
        buf += std::to_string(s.categorical[f][i]);
      }
      buf += ']';
    }
    buf += "},\"target\":";
    if (const int* c = std::get_if<int>(&s.target)) {
      buf += std::to_string(*c);
    } else if (const double* v = std::get_if<double>(&s.target)) {
      buf += format_double(*v);
    } else {
      buf += '[';
      const auto& labels = std::get<std::vector<int>>(s.target);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) buf += ',';
        buf += std::to_string(labels[i]);
      }
      buf += ']';
    }
    buf += "}\n";
    out << buf;
  }
}

void emit_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset file '" + path + "'");
  emit_jsonl(ds, out);
}

}  // namespace evseq::seq
