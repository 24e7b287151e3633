#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hpo/method.hpp"
#include "hpo/tpe.hpp"
#include "seq/split.hpp"
#include "stats/compare.hpp"

namespace evseq::hpo {

struct HpoOptions {
  TPEConfig tpe;
  // JSONL trial log; appended one line per finished trial when non-empty.
  std::string log_path;
  // Continue from the trials already in log_path.
  bool resume = false;
  // Keep each trial's trained model in HpoResult::models.
  bool keep_models = false;
};

struct HpoResult {
  std::vector<Trial> trials;
  Assignment best_params;
  std::size_t best_trial = 0;
  std::size_t n_hpo = 0;
  std::vector<std::optional<models::TrainedModel>> models;  // by trial number, when kept
};

// Picks the completed trial with the highest hpo-val metric (ties: earliest).
// Throws when no trial completed.
std::size_t best_trial_index(const std::vector<Trial>& trials);

std::string trial_to_json(const Trial& t);
Trial trial_from_json(const std::string& line);
// Reads a trial log. A malformed final line (interrupted write) is dropped;
// malformed earlier lines throw ParseError.
std::vector<Trial> read_trial_log(const std::string& path, bool* dropped_tail = nullptr);

// Sequential TPE loop on a fixed split: each trial trains with early stopping
// on split.train_val and is scored on split.hpo_val. Trials whose training
// diverges are recorded as failed. Trial k suggests from
// make_rng(seed, {tpe, k}) and trains with derive_seed(seed, {trial, k}), so a
// resumed run reproduces an uninterrupted one.
HpoResult hpo_run(const seq::Dataset& ds, const seq::SplitAssignment& split, const MethodSpec& method,
                  const ParamSpace& space, std::size_t n_hpo, std::uint64_t seed, const HpoOptions& opts = {});

struct EvalOptions {
  std::string dataset_name = "dataset";
  std::string tag = "final-eval";
  int jobs = 1;
  bool keep_models = false;
};

struct FinalEvalResult {
  std::vector<stats::RunRecord> records;  // one per seed, in seed order
  std::vector<std::optional<models::TrainedModel>> models;
  std::vector<seq::IndexSet> train_splits;
};

// Monte-Carlo evaluation: per seed a fresh stratified 85/15 resplit of the
// (sorted) pool, training from scratch with `params`, and scoring on `test`.
// All seeds train before the dataset's target audit opens scoring. Seeds whose
// training diverges are marked failed; fewer than ceil(0.75 * n_seeds)
// successes throws.
FinalEvalResult final_eval(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                           const MethodSpec& method, const Assignment& params, std::size_t n_seeds,
                           std::uint64_t seed, const EvalOptions& opts = {});

// Per-(method, size, seed) records tagged "scaling:<size>". Each cell
// subsamples the pool (target-stratified) and then runs the final_eval seed
// procedure on the subsample, so size == pool size reproduces final_eval.
std::vector<stats::RunRecord> scaling_study(const seq::Dataset& ds, const seq::IndexSet& pool,
                                            const seq::IndexSet& test,
                                            const std::vector<std::pair<MethodSpec, Assignment>>& methods,
                                            const std::vector<std::size_t>& sizes, std::size_t n_seeds,
                                            std::uint64_t seed, const EvalOptions& opts = {});
// method,size,mean,std,n rows sorted by method then size.
std::string scaling_csv(const std::vector<stats::RunRecord>& records);

// Absolute Spearman correlation between each parameter and the metric over
// completed trials (categoricals encoded by their level's mean metric),
// normalised to sum to 1. Needs at least 20 completed trials.
std::vector<std::pair<std::string, double>> param_importance(const std::vector<Trial>& trials);

}  // namespace evseq::hpo
