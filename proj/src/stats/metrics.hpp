#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace evseq::stats {

enum class MetricKind { kAccuracy, kRocAuc, kMeanRocAuc, kR2 };

std::string metric_name(MetricKind k);
MetricKind parse_metric(const std::string& name);

double accuracy(std::span<const int> predicted, std::span<const int> labels);

// R^2 = 1 - SS_res / SS_tot. Throws when the targets have zero variance.
double r2(std::span<const double> predicted, std::span<const double> targets);

// Rank-statistic AUC with midranks for ties, equal to the fraction of
// (positive, negative) pairs ordered correctly with ties worth 1/2.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct MeanAucResult {
  double value = 0.0;
  std::size_t used_labels = 0;
  std::size_t skipped_labels = 0;  // labels with a single class present
};

// scores and labels are row-major n x k. Unweighted mean over labels that
// have both classes present.
MeanAucResult mean_roc_auc(std::span<const double> scores, std::span<const int> labels, std::size_t k);

// 1-based midranks.
std::vector<double> midranks(std::span<const double> values);

}  // namespace evseq::stats
