#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "common/rng.hpp"
#include "seq/dataset.hpp"

namespace evseq::synth {

struct HawkesParams {
  double mu = 1.0;     // base intensity
  double alpha = 0.5;  // excitation jump
  double beta = 1.0;   // decay rate
  double end_time = 4.0;

  void validate() const;
};

// Ogata thinning for lambda(t) = mu + sum_{t_i < t} alpha exp(-beta (t - t_i)).
// Between events the intensity only decays, so the intensity just after the
// current point bounds it until the next candidate.
std::vector<double> sample_hawkes_times(const HawkesParams& p, Rng& rng);

// Base intensity that keeps about `target_points` events per sequence.
double adjust_base_intensity(double target_points, double alpha, double end_time);

struct PendulumParams {
  double b = 1.0;   // damping factor
  double m = 1.0;   // bob mass
  double g = 9.81;
  double L = 1.0;   // length
  double theta0 = 0.0;
  double omega0 = 0.0;
};

using PendulumState = std::array<double, 2>;  // (angle, angular velocity)

inline constexpr double kRk4Step = 1e-3;

// Fixed-step RK4 from t = 0, linearly interpolated at each query time.
std::vector<PendulumState> integrate_pendulum(const PendulumParams& p, const std::vector<double>& query_times,
                                              double step = kRk4Step);

struct SynthConfig {
  std::size_t n_sequences = 1000;
  double target_points = 30.0;
  double alpha = 0.5;
  double beta = 1.0;
  std::array<double, 2> end_time_range{3.0, 5.0};
  std::array<double, 2> b_range{1.0, 3.0};
  std::array<double, 2> L_range{0.5, 10.0};
  std::array<double, 2> theta0_range{0.0, 6.283185307179586};
  std::array<double, 2> omega0_range{-3.141592653589793, 3.141592653589793};
  double mass = 1.0;
  double drop_prob = 0.1;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

// Each sequence draws from its own stream derived from (seed, index), so the
// dataset does not depend on `jobs`.
seq::Dataset generate_pendulum_dataset(const SynthConfig& cfg);

// Control dataset where time carries no signal: uniform sorted timestamps,
// i.i.d. values, target = mean of feature "v".
seq::Dataset generate_time_irrelevant_dataset(std::size_t n, std::uint64_t seed);

}  // namespace evseq::synth
