#include "stats/compare.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "common/error.hpp"
#include "seq/io.hpp"
#include "stats/tests.hpp"

namespace evseq::stats {

using nlohmann::json;

std::string RunRecord::to_json() const {
  json j;
  j["method"] = method;
  j["dataset"] = dataset;
  j["seed"] = seed;
  j["metric"] = metric_name;
  j["splits"] = json::object();
  for (const auto& [k, v] : split_metrics) j["splits"][k] = v;
  if (!tag.empty()) j["tag"] = tag;
  if (failed) {
    j["failed"] = true;
    j["error"] = error;
  }
  return j.dump();
}

RunRecord RunRecord::from_json(const std::string& line) {
  RunRecord r;
  try {
    auto j = json::parse(line);
    r.method = j.at("method").get<std::string>();
    r.dataset = j.value("dataset", "");
    r.seed = j.value("seed", std::uint64_t{0});
    r.metric_name = j.value("metric", "r2");
    for (const auto& [k, v] : j.at("splits").items()) {
      if (!std::count(kSplitNames.begin(), kSplitNames.end(), k)) throw Error("unknown split name '" + k + "'");
      r.split_metrics[k] = v.get<double>();
    }
    r.tag = j.value("tag", "");
    r.failed = j.value("failed", false);
    r.error = j.value("error", "");
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("malformed run record: ") + e.what());
  }
  return r;
}

std::vector<RunRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open records file '" + path + "'");
  std::vector<RunRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(RunRecord::from_json(line));
    } catch (const ParseError& e) {
      throw ParseError(n, e.what());
    }
  }
  return out;
}

void append_record(const std::string& path, const RunRecord& r) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to '" + path + "'");
  out << r.to_json() << '\n';
}

ComparisonReport rank_groups(const std::map<std::string, std::vector<double>>& per_method, bool higher_is_better,
                             double alpha) {
  if (per_method.size() < 2) throw Error("rank_groups: need at least two methods");
  ComparisonReport rep;
  rep.higher_is_better = higher_is_better;
  rep.alpha = alpha;
  std::vector<const std::vector<double>*> samples;
  for (const auto& [name, values] : per_method) {
    if (values.size() < 2) throw Error("rank_groups: method '" + name + "' has fewer than 2 seeds");
    MethodSummary s;
    s.name = name;
    s.mean = mean(values);
    s.std = stddev(values);
    s.n = values.size();
    rep.methods.push_back(s);
  }
  std::stable_sort(rep.methods.begin(), rep.methods.end(), [&](const auto& a, const auto& b) {
    if (a.mean != b.mean) return higher_is_better ? a.mean > b.mean : a.mean < b.mean;
    return a.name < b.name;
  });
  const std::size_t k = rep.methods.size();
  for (const auto& m : rep.methods) samples.push_back(&per_method.at(m.name));

  rep.p_raw.assign(k, std::vector<double>(k, 1.0));
  rep.p_adjusted.assign(k, std::vector<double>(k, 1.0));
  std::vector<double> flat;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      flat.push_back(mann_whitney_u(*samples[i], *samples[j]).p);
      pairs.emplace_back(i, j);
    }
  auto adj = holm_bonferroni(flat);
  for (std::size_t q = 0; q < pairs.size(); ++q) {
    auto [i, j] = pairs[q];
    rep.p_raw[i][j] = rep.p_raw[j][i] = flat[q];
    rep.p_adjusted[i][j] = rep.p_adjusted[j][i] = adj[q];
  }

  struct Group {
    int rank;
    std::size_t representative;
  };
  std::vector<Group> groups;
  int max_rank = 0;
  for (std::size_t i = 0; i < k; ++i) {
    for (const auto& g : groups)
      if (rep.p_adjusted[i][g.representative] > alpha) rep.methods[i].ranks.insert(g.rank);
    if (rep.methods[i].ranks.empty()) {
      groups.push_back({++max_rank, i});
      rep.methods[i].ranks.insert(max_rank);
    }
  }
  return rep;
}

std::map<std::string, std::vector<double>> metrics_by_method(const std::vector<RunRecord>& records,
                                                             const std::string& split) {
  std::map<std::string, std::vector<std::pair<std::uint64_t, double>>> tmp;
  for (const auto& r : records) {
    if (r.failed) continue;
    auto it = r.split_metrics.find(split);
    if (it != r.split_metrics.end()) tmp[r.method].emplace_back(r.seed, it->second);
  }
  std::map<std::string, std::vector<double>> out;
  for (auto& [name, v] : tmp) {
    // Seed order makes downstream statistics independent of record order.
    std::sort(v.begin(), v.end());
    for (const auto& p : v) out[name].push_back(p.second);
  }
  return out;
}

std::string format_fixed(double v, int digits) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

namespace {

std::string ranks_str(const std::set<int>& ranks) {
  std::string s;
  for (int r : ranks) {
    if (!s.empty()) s += ",";
    s += std::to_string(r);
  }
  return s;
}

}  // namespace

std::string report_csv(const ComparisonReport& r) {
  std::ostringstream out;
  out << "dataset,metric,method,mean,std,n,ranks";
  for (const auto& m : r.methods) out << ",p_adj:" << m.name;
  out << '\n';
  for (std::size_t i = 0; i < r.methods.size(); ++i) {
    const auto& m = r.methods[i];
    out << r.dataset << ',' << r.metric << ',' << m.name << ',' << seq::format_double(m.mean) << ','
        << (std::isnan(m.std) ? std::string("NA") : seq::format_double(m.std)) << ',' << m.n << ",\""
        << ranks_str(m.ranks) << '"';
    for (std::size_t j = 0; j < r.methods.size(); ++j) out << ',' << seq::format_double(r.p_adjusted[i][j]);
    out << '\n';
  }
  out << "# raw p-values\n";
  for (std::size_t i = 0; i < r.methods.size(); ++i) {
    out << r.methods[i].name;
    for (std::size_t j = 0; j < r.methods.size(); ++j) out << ',' << seq::format_double(r.p_raw[i][j]);
    out << '\n';
  }
  return out.str();
}

std::string report_markdown(const std::vector<ComparisonReport>& reports) {
  std::set<std::string> names;
  for (const auto& r : reports)
    for (const auto& m : r.methods) names.insert(m.name);
  std::ostringstream out;
  out << "| Method |";
  for (const auto& r : reports) out << " **" << r.dataset << "** |";
  out << "\n|---|";
  for (std::size_t i = 0; i < reports.size(); ++i) out << "---|";
  out << "\n| *Metric* |";
  for (const auto& r : reports) out << " " << r.metric << " |";
  out << '\n';
  for (const auto& name : names) {
    out << "| **" << name << "** |";
    for (const auto& r : reports) {
      auto it = std::find_if(r.methods.begin(), r.methods.end(), [&](const auto& m) { return m.name == name; });
      if (it == r.methods.end()) {
        out << " - |";
        continue;
      }
      const bool best = it->ranks.count(1) > 0;
      std::string cell = format_fixed(it->mean) + " ± " + format_fixed(it->std);
      if (best) cell = "**" + cell + "**";
      out << " " << cell << "<sup>" << ranks_str(it->ranks) << "</sup> |";
    }
    out << '\n';
  }
  return out.str();
}

std::vector<CorrelationRow> subset_correlation(const std::vector<RunRecord>& records) {
  static const std::vector<std::pair<std::string, std::string>> kPairs = {
      {"train", "train-val"}, {"train-val", "hpo-val"}, {"hpo-val", "test"}, {"train-val", "test"}};
  std::size_t usable = 0;
  for (const auto& r : records)
    if (!r.failed) ++usable;
  if (usable < 3) throw Error("subset_correlation: need at least 3 records");
  std::vector<CorrelationRow> out;
  for (const auto& [a, b] : kPairs) {
    std::vector<double> x, y;
    for (const auto& r : records) {
      if (r.failed) continue;
      auto ia = r.split_metrics.find(a), ib = r.split_metrics.find(b);
      if (ia == r.split_metrics.end() || ib == r.split_metrics.end()) continue;
      x.push_back(ia->second);
      y.push_back(ib->second);
    }
    CorrelationRow row{a, b, x.size(), std::nullopt, std::nullopt};
    if (x.size() >= 3) {
      double p = pearson(x, y), s = spearman(x, y);
      if (!std::isnan(p)) row.pearson = p;
      if (!std::isnan(s)) row.spearman = s;
    }
    out.push_back(row);
  }
  return out;
}

std::string correlation_csv(const std::vector<CorrelationRow>& rows) {
  std::ostringstream out;
  out << "split_a,split_b,n,pearson,spearman\n";
  for (const auto& r : rows)
    out << r.split_a << ',' << r.split_b << ',' << r.n << ','
        << (r.pearson ? seq::format_double(*r.pearson) : "undefined") << ','
        << (r.spearman ? seq::format_double(*r.spearman) : "undefined") << '\n';
  return out.str();
}

}  // namespace evseq::stats
