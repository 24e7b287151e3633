#include "stats/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"

namespace evseq::stats {

std::string metric_name(MetricKind k) {
  switch (k) {
    case MetricKind::kAccuracy: return "accuracy";
    case MetricKind::kRocAuc: return "roc_auc";
    case MetricKind::kMeanRocAuc: return "mean_roc_auc";
    case MetricKind::kR2: return "r2";
  }
  return "r2";
}

MetricKind parse_metric(const std::string& name) {
  if (name == "accuracy") return MetricKind::kAccuracy;
  if (name == "roc_auc") return MetricKind::kRocAuc;
  if (name == "mean_roc_auc") return MetricKind::kMeanRocAuc;
  if (name == "r2") return MetricKind::kR2;
  throw Error("unknown metric '" + name + "'");
}

double accuracy(std::span<const int> predicted, std::span<const int> labels) {
  if (predicted.size() != labels.size()) throw Error("accuracy: length mismatch");
  if (labels.empty()) throw Error("accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double r2(std::span<const double> predicted, std::span<const double> targets) {
  if (predicted.size() != targets.size()) throw Error("r2: length mismatch");
  if (targets.empty()) throw Error("r2: empty input");
  const double mean = std::accumulate(targets.begin(), targets.end(), 0.0) / static_cast<double>(targets.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ss_res += (targets[i] - predicted[i]) * (targets[i] - predicted[i]);
    ss_tot += (targets[i] - mean) * (targets[i] - mean);
  }
  if (ss_tot == 0.0) throw Error("r2: targets have zero variance");
  return 1.0 - ss_res / ss_tot;
}

std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("roc_auc: length mismatch");
  double n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) throw Error("roc_auc: labels contain a single class");
  auto ranks = midranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i]) rank_sum += ranks[i];
  return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg);
}

MeanAucResult mean_roc_auc(std::span<const double> scores, std::span<const int> labels, std::size_t k) {
  if (k == 0 || scores.size() != labels.size() || scores.size() % k != 0)
    throw Error("mean_roc_auc: score/label matrices must be n x k");
  const std::size_t n = scores.size() / k;
  MeanAucResult res;
  double total = 0.0;
  std::vector<double> s(n);
  std::vector<int> l(n);
  for (std::size_t j = 0; j < k; ++j) {
    int pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = scores[i * k + j];
      l[i] = labels[i * k + j] ? 1 : 0;
      pos += l[i];
    }
    if (pos == 0 || pos == static_cast<int>(n)) {
      ++res.skipped_labels;
      continue;
    }
    total += roc_auc(s, l);
    ++res.used_labels;
  }
  if (res.used_labels == 0) throw Error("mean_roc_auc: every label has a single class");
  res.value = total / static_cast<double>(res.used_labels);
  return res;
}

}  // namespace evseq::stats
