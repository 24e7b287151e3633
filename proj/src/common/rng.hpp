#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace evseq {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed and a path of
// counters (e.g. {stage, seed index, sequence index}). Pure function, so the
// streams do not depend on the order in which workers consume them.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(master);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_rng(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  return Rng(derive_seed(master, path));
}

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Stable stream ids for derive_seed paths.
enum class Stream : std::uint64_t {
  kSplit = 1,
  kTestHoldout,
  kSubsample,
  kSynthSequence,
  kTrain,
  kInit,
  kHpoTrial,
  kTpe,
  kFinalEval,
  kStress,
  kScaling,
  kColes,
  kAblation,
};

inline std::uint64_t sid(Stream s) { return static_cast<std::uint64_t>(s); }

}  // namespace evseq
