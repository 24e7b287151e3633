#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "models/model.hpp"
#include "seq/dataset.hpp"
#include "seq/split.hpp"
#include "stats/metrics.hpp"

namespace evseq::models {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_val_metric = 0.0;
  std::size_t iterations = 0;  // cumulative optimizer steps
};

struct TrainedModel {
  SequenceModel model;
  TrainConfig train;
  stats::MetricKind metric = stats::MetricKind::kR2;
  std::optional<seq::TimeScale> time_scale;
  // Regression targets are standardized for training; predictions undo it.
  double target_mean = 0.0;
  double target_std = 1.0;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

// Default task metric: r2 for regression, roc_auc for two classes, accuracy
// for more, mean_roc_auc for multilabel.
stats::MetricKind default_metric(const seq::FeatureSchema& schema);

struct TrainOptions {
  // Encoder parameters to start from; the head is always freshly initialised.
  const TrainedModel* init = nullptr;
  bool freeze_encoder = false;
  // Replaces the train-val metric (higher is better) when set.
  std::function<double(const TrainedModel&, std::size_t epoch)> validation;
};

// Mini-batch Adam with early stopping on the train-val metric. Parameters of
// the best epoch are restored. Throws TrainingError with lr and batch index
// on a non-finite loss.
TrainedModel train_supervised(const seq::Dataset& ds, const seq::IndexSet& train, const seq::IndexSet& train_val,
                              const EncoderConfig& enc, const TrainConfig& tc, const TrainOptions& opts = {});

// Scores per sequence in input order: class probabilities (rows sum to 1),
// per-label probabilities, or regression values (n x 1).
ad::Tensor predict(const TrainedModel& m, const seq::Dataset& ds, const seq::IndexSet& indices);

// Task metric of `m` on `indices`; targets are read through the audited accessor.
double evaluate(const TrainedModel& m, const seq::Dataset& ds, const seq::IndexSet& indices,
                const char* context = "evaluate");
double score_predictions(stats::MetricKind metric, const seq::FeatureSchema& schema, const ad::Tensor& scores,
                         const seq::Dataset& ds, const seq::IndexSet& indices, const char* context);

// Binary checkpoint: "EVSM", u32 version, u32 JSON header length, JSON header,
// then every parameter as little-endian f64 in registration order.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const TrainedModel& m, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

}  // namespace evseq::models
