#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "seq/dataset.hpp"

namespace evseq::seq {

using IndexSet = std::vector<std::size_t>;

struct SplitAssignment {
  IndexSet train;
  IndexSet train_val;
  IndexSet hpo_val;
  IndexSet test;
  std::uint64_t seed = 0;
};

// Partitions `pool` into fractions.size() disjoint parts, stratified on the
// target (regression: quartile bins of the pool). Each stratum is shuffled
// with a seed-derived stream and apportioned by largest remainder, so the
// result is a pure function of (dataset order, pool, fractions, seed).
// Throws Error naming the stratum when it has fewer members than there are
// non-empty parts.
std::vector<IndexSet> stratified_partition(const Dataset& ds, const IndexSet& pool,
                                           const std::vector<double>& fractions, std::uint64_t seed);

// train / train-val / hpo-val split of the pool (default: every sequence).
SplitAssignment stratified_split(const Dataset& ds, double train, double train_val, double hpo_val,
                                 std::uint64_t seed);
SplitAssignment stratified_split(const Dataset& ds, const IndexSet& pool, double train, double train_val,
                                 double hpo_val, std::uint64_t seed);

// Held-out test set first, then the non-test pool split into the remaining parts.
SplitAssignment holdout_split(const Dataset& ds, double test_fraction, double train, double train_val,
                              double hpo_val, std::uint64_t seed);

// Uniform target-stratified sample of exactly n indices from the pool.
IndexSet subsample_indices(const Dataset& ds, const IndexSet& pool, std::size_t n, std::uint64_t seed);
Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed);

IndexSet all_indices(const Dataset& ds);

}  // namespace evseq::seq
