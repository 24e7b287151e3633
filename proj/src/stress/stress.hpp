#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "common/rng.hpp"
#include "hpo/protocol.hpp"
#include "seq/dataset.hpp"
#include "stats/compare.hpp"

namespace evseq::stress {

enum class StressKind { kPermute, kRandomTimestamps };
std::string to_string(StressKind k);
StressKind parse_stress_kind(const std::string& s);

// Copies the positional time axis into a traveling time feature (delta of the
// first event is its absolute time). No-op when already materialized.
void materialize_time(seq::EventSequence& s);

// Uniform shuffle of events 0..n-2; event n-1 stays put. Every per-event
// column moves with its event, including the traveling time, which is
// materialized first. `times` keeps the original positional axis.
seq::EventSequence permute_events(const seq::EventSequence& s, Rng& rng);

// Replaces `times` by n sorted Uniform(0,1) draws. Values, masks and any
// traveling time are untouched.
seq::EventSequence randomize_timestamps(const seq::EventSequence& s, Rng& rng);

// Copy of a preprocessed dataset with the listed sequences stressed; sequence
// i uses make_rng(seed, {stress, kind, i}). The target audit is shared.
seq::Dataset apply_stress(const seq::Dataset& ds, const seq::IndexSet& indices, StressKind kind, std::uint64_t seed);

// Largest per-sequence absolute difference in predictions between two
// datasets over the same indices.
double max_prediction_shift(const models::TrainedModel& m, const seq::Dataset& a, const seq::Dataset& b,
                            const seq::IndexSet& indices);

struct StressRow {
  std::string method;
  std::string dataset;
  std::string kind;  // "permute", "random-timestamps", "retrain-permuted", ...
  std::vector<double> baseline;
  std::vector<double> stressed;
  double baseline_mean = 0.0, baseline_std = 0.0;
  double stressed_mean = 0.0, stressed_std = 0.0;
  // (stressed - baseline) / |baseline| * 100; negative when stress hurts.
  double relative_drop = 0.0;
  double p = 1.0;
  double p_adjusted = 1.0;
  double sign_test_p = 1.0;  // informational; NaN when samples are unpaired
  bool significant = false;
};

// Fills summary fields from baseline/stressed; p_adjusted = p.
StressRow make_row(std::string method, std::string dataset, std::string kind, std::vector<double> baseline,
                   std::vector<double> stressed, bool paired);

struct StressReport {
  std::string metric = "r2";
  double alpha = stats::kSignificance;
  std::vector<StressRow> rows;

  // Holm across the report's rows, then flags rows with adjusted p < alpha.
  void adjust();
  std::string csv() const;
  // Significant rows have their drop marked with an asterisk.
  std::string markdown() const;
};

struct StressInput {
  std::string method;
  std::string dataset;
  // Trained models from final_eval; missing entries (failed seeds) are skipped.
  const std::vector<std::optional<models::TrainedModel>>* models = nullptr;
};

// Scores every seed's model on the clean and the stressed test set. Throws
// when fewer than `min_seeds` models are present or when the stress cannot
// affect a model (random timestamps on an encoder that ignores time).
StressReport stress_eval(const std::vector<StressInput>& inputs, const seq::Dataset& ds, const seq::IndexSet& test,
                         StressKind kind, std::uint64_t seed, int jobs = 1, std::size_t min_seeds = 10);

// Retrains `method` with time_mode forced to none on a dataset whose pool and
// test sequences are all permuted, and compares its test metrics with the
// vanilla records.
struct RetrainResult {
  StressRow row;
  hpo::FinalEvalResult permuted;
};
RetrainResult retrain_permuted(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                               const hpo::MethodSpec& method, const hpo::Assignment& params,
                               const std::vector<stats::RunRecord>& vanilla, std::size_t n_seeds, std::uint64_t seed,
                               const hpo::EvalOptions& opts = {});

// Categorical ablation: HPO trials are partitioned by the value of `param`
// into labelled options; the top_k completed trials of each option (by
// hpo-val) are retrained and their test metrics pooled per option.
struct AblationOption {
  std::string label;
  std::vector<nlohmann::json> levels;
};

struct AblationArm {
  std::string label;
  std::vector<std::size_t> trials;
  std::vector<double> values;
  double mean = 0.0, std = 0.0;
};

struct AblationReport {
  std::string method;
  std::string param;
  std::vector<AblationArm> arms;
  double difference = 0.0;  // last arm mean minus first arm mean
  double p = 1.0;
  bool significant = false;  // last arm better at p < alpha
  std::string csv() const;
};

AblationReport categorical_ablation(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                                    const hpo::MethodSpec& method, const std::vector<hpo::Trial>& trials,
                                    const std::string& param, const std::vector<AblationOption>& options,
                                    std::size_t top_k, std::size_t seeds_per_trial, std::uint64_t seed,
                                    const hpo::EvalOptions& opts = {});

// time_mode partitioned into "w/o time" {none} and "with time" {delta, absolute}.
AblationReport time_ablation(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                             const hpo::MethodSpec& method, const std::vector<hpo::Trial>& trials,
                             std::size_t top_k, std::size_t seeds_per_trial, std::uint64_t seed,
                             const hpo::EvalOptions& opts = {});

}  // namespace evseq::stress
