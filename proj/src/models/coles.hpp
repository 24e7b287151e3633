#pragma once

#include <cstddef>
#include <utility>

#include "models/train.hpp"

namespace evseq::models {

struct ColesConfig {
  double margin = 0.5;
  double min_fraction = 0.25;
  double max_fraction = 0.75;
};

// Contiguous [begin, end) slice of a length-n sequence whose length is drawn
// uniformly from [ceil(min_frac * n), floor(max_frac * n)] (at least 1).
// Throws for n < 2.
std::pair<std::size_t, std::size_t> sample_subsequence(std::size_t n, const ColesConfig& cfg, Rng& rng);

// Contrastive pretraining of a GRU encoder on subsequence pairs. The history
// records the mean contrastive loss per epoch (train_val_metric is its
// negation). Runs tc.max_epochs epochs, bounded by tc.max_iters.
TrainedModel coles_pretrain(const seq::Dataset& ds, const seq::IndexSet& train, const EncoderConfig& enc,
                            const TrainConfig& tc, const ColesConfig& cc = {});

struct PairDistances {
  double positive = 0.0;
  double negative = 0.0;
};

// Mean L2-normalized embedding distance between two sampled subsequences of the
// same sequence vs. subsequences of different sequences.
PairDistances embedding_pair_distances(const TrainedModel& m, const seq::Dataset& ds, const seq::IndexSet& indices,
                                       std::uint64_t seed, const ColesConfig& cc = {});

}  // namespace evseq::models
