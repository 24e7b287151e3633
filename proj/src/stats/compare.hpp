#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace evseq::stats {

inline const std::vector<std::string> kSplitNames = {"train", "train-val", "hpo-val", "test"};

struct RunRecord {
  std::string method;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string metric_name = "r2";
  std::map<std::string, double> split_metrics;
  std::string tag;  // free-form experiment label, e.g. "final-eval"
  bool failed = false;
  std::string error;

  std::string to_json() const;
  static RunRecord from_json(const std::string& line);
};

std::vector<RunRecord> read_records(const std::string& path);
void append_record(const std::string& path, const RunRecord& r);

struct MethodSummary {
  std::string name;
  double mean = 0.0;
  double std = 0.0;  // NaN with fewer than two seeds
  std::size_t n = 0;
  std::set<int> ranks;
};

inline constexpr double kSignificance = 0.01;

struct ComparisonReport {
  std::string dataset;
  std::string metric;
  bool higher_is_better = true;
  double alpha = kSignificance;
  std::vector<MethodSummary> methods;          // best mean first
  std::vector<std::vector<double>> p_raw;      // indexed like `methods`
  std::vector<std::vector<double>> p_adjusted;
};

// Sorts methods by mean (descending when higher is better, ties by name),
// Holm-adjusts all pairwise Mann-Whitney p-values jointly, and assigns rank
// groups: the best method opens rank 1; each later method joins every earlier
// group whose representative (the group's first, best-mean member) it is
// indistinguishable from (adjusted p > alpha), otherwise it opens rank
// max + 1.
ComparisonReport rank_groups(const std::map<std::string, std::vector<double>>& per_method, bool higher_is_better = true,
                             double alpha = kSignificance);

// Groups test metrics of successful records by method.
std::map<std::string, std::vector<double>> metrics_by_method(const std::vector<RunRecord>& records,
                                                             const std::string& split = "test");

std::string report_csv(const ComparisonReport& r);
// One column per report (dataset), one row per method; ranks rendered as
// superscripts.
std::string report_markdown(const std::vector<ComparisonReport>& reports);

struct CorrelationRow {
  std::string split_a, split_b;
  std::size_t n = 0;
  std::optional<double> pearson;
  std::optional<double> spearman;
};

// Pairs (train, train-val), (train-val, hpo-val), (hpo-val, test), (train-val, test).
std::vector<CorrelationRow> subset_correlation(const std::vector<RunRecord>& records);
std::string correlation_csv(const std::vector<CorrelationRow>& rows);

std::string format_fixed(double v, int digits = 3);

}  // namespace evseq::stats
