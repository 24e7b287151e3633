#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "hpo/space.hpp"

namespace evseq::hpo {

enum class TrialState { kCompleted, kFailed, kPrunedByBudget };
std::string to_string(TrialState s);
TrialState parse_trial_state(const std::string& s);

struct Trial {
  std::size_t number = 0;
  Assignment params;
  TrialState state = TrialState::kCompleted;
  double hpo_val_metric = 0.0;  // meaningful for completed trials only
  std::map<std::string, double> split_metrics;  // train, train-val, hpo-val
  bool random_phase = false;
  std::string error;
};

struct TPEConfig {
  double gamma = 0.25;
  std::size_t n_startup = 10;
  std::size_t n_candidates = 24;
  // Kernel bandwidth floor as a fraction of the (transformed) range.
  double bandwidth_floor = 1e-3;

  void validate(const std::string& pointer = "/tpe") const;
};

struct Suggestion {
  Assignment params;
  bool random_phase = false;
};

// Univariate TPE. Completed trials are ranked by metric (higher is better,
// ties by trial number); the top ceil(gamma * n) form the good set. Each
// dimension gets Parzen estimators l (good) and g (bad): truncated Gaussian
// kernels plus one uniform prior component for numeric parameters (log ranges
// in log space, integers on a +-0.5 widened range). The shared bandwidth is
// Scott's factor applied to the range, 0.2 * range * n^(-1/5), floored at
// bandwidth_floor * range; the sample spread is not used because a cluster
// of near-identical good trials would shrink it to the floor and stall.
// add-one smoothed frequencies for categoricals. The candidate among
// n_candidates draws from l maximizing sum(log l - log g) is returned.
Suggestion tpe_suggest(const ParamSpace& space, const std::vector<Trial>& history, const TPEConfig& cfg, Rng& rng);

}  // namespace evseq::hpo
