#include "seq/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "common/error.hpp"
#include "common/rng.hpp"

namespace evseq::seq {
namespace {

std::map<std::string, IndexSet> strata(const Dataset& ds, const IndexSet& pool) {
  auto cuts = quartile_cuts(ds, pool);
  std::map<std::string, IndexSet> out;
  for (auto i : pool) out[stratum_key(ds.target(i, "split"), cuts)].push_back(i);
  return out;
}

// Largest-remainder apportionment of n items over weights; ties favour the
// earlier part.
std::vector<std::size_t> apportion(std::size_t n, const std::vector<double>& weights) {
  double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t used = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    double exact = static_cast<double>(n) * weights[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    used += counts[k];
    rem.emplace_back(exact - static_cast<double>(counts[k]), k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < n; ++r, ++used) ++counts[rem[r % rem.size()].second];
  return counts;
}

}  // namespace

IndexSet all_indices(const Dataset& ds) {
  IndexSet v(ds.size());
  std::iota(v.begin(), v.end(), 0);
  return v;
}

std::vector<IndexSet> stratified_partition(const Dataset& ds, const IndexSet& pool,
                                           const std::vector<double>& fractions, std::uint64_t seed) {
  if (fractions.empty()) throw Error("stratified split needs at least one fraction");
  double sum = 0.0;
  std::size_t parts = 0;
  for (double f : fractions) {
    if (f < 0.0) throw Error("split fractions must be non-negative");
    sum += f;
    if (f > 0.0) ++parts;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("split fractions must sum to 1");
  auto groups = strata(ds, pool);
  for (const auto& [key, members] : groups) {
    if (members.size() < parts)
      throw Error("stratum '" + key + "' has " + std::to_string(members.size()) + " member(s), fewer than the " +
                  std::to_string(parts) + " splits");
  }
  Rng rng = make_rng(seed, {sid(Stream::kSplit)});
  std::vector<IndexSet> out(fractions.size());
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    auto counts = apportion(members.size(), fractions);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      out[k].insert(out[k].end(), members.begin() + pos, members.begin() + pos + counts[k]);
      pos += counts[k];
    }
  }
  for (auto& part : out) std::sort(part.begin(), part.end());
  return out;
}

SplitAssignment stratified_split(const Dataset& ds, const IndexSet& pool, double train, double train_val,
                                 double hpo_val, std::uint64_t seed) {
  auto parts = stratified_partition(ds, pool, {train, train_val, hpo_val}, seed);
  SplitAssignment a;
  a.train = std::move(parts[0]);
  a.train_val = std::move(parts[1]);
  a.hpo_val = std::move(parts[2]);
  a.seed = seed;
  return a;
}

SplitAssignment stratified_split(const Dataset& ds, double train, double train_val, double hpo_val,
                                 std::uint64_t seed) {
  return stratified_split(ds, all_indices(ds), train, train_val, hpo_val, seed);
}

SplitAssignment holdout_split(const Dataset& ds, double test_fraction, double train, double train_val,
                              double hpo_val, std::uint64_t seed) {
  auto outer = stratified_partition(ds, all_indices(ds), {1.0 - test_fraction, test_fraction},
                                    derive_seed(seed, {sid(Stream::kTestHoldout)}));
  SplitAssignment a = stratified_split(ds, outer[0], train, train_val, hpo_val, seed);
  a.test = std::move(outer[1]);
  return a;
}

IndexSet subsample_indices(const Dataset& ds, const IndexSet& pool, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error("subsample size must be positive");
  if (n > pool.size())
    throw Error("subsample size " + std::to_string(n) + " exceeds pool size " + std::to_string(pool.size()));
  auto groups = strata(ds, pool);
  std::vector<double> weights;
  for (const auto& [key, members] : groups) weights.push_back(static_cast<double>(members.size()));
  auto counts = apportion(n, weights);
  Rng rng = make_rng(seed, {sid(Stream::kSubsample)});
  IndexSet out;
  out.reserve(n);
  std::size_t g = 0;
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    std::size_t take = std::min(counts[g++], members.size());
    out.insert(out.end(), members.begin(), members.begin() + take);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset subsample(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  auto idx = subsample_indices(ds, all_indices(ds), n, seed);
  Dataset out;
  out.schema = ds.schema;
  out.time_scale = ds.time_scale;
  out.preprocessed = ds.preprocessed;
  out.sequences.reserve(idx.size());
  for (auto i : idx) out.sequences.push_back(ds.sequences[i]);
  return out;
}

}  // namespace evseq::seq
