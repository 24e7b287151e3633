#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "common/error.hpp"
#include "synth/pendulum.hpp"
#include "support/synth_oracles.hpp"

using namespace evseq;

using testing::hawkes_expected_count;
using testing::ks_exponential;
using testing::measured_period;

TEST_CASE("Hawkes with alpha = 0 has exponential gaps (KS at 0.01 on 10k gaps)") {
  for (std::uint64_t seed : {1, 2, 3}) {
    synth::HawkesParams p;
    p.mu = 2.0;
    p.alpha = 0.0;
    p.end_time = 5200.0;
    Rng rng(seed);
    const auto t = synth::sample_hawkes_times(p, rng);
    REQUIRE(t.size() > 10000);
    std::vector<double> gaps;
    for (std::size_t i = 0; i < 10000; ++i) gaps.push_back(t[i] - (i ? t[i - 1] : 0.0));
    const double d = ks_exponential(gaps, p.mu);
    // Asymptotic critical value of the KS statistic at level 0.01.
    CHECK(d < 1.6276 / std::sqrt(10000.0));
  }
}

TEST_CASE("sampled times are sorted and inside the window") {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    synth::HawkesParams p;
    p.mu = uniform(rng, 0.5, 10);
    p.alpha = uniform(rng, 0, 0.9);
    p.end_time = uniform(rng, 1, 6);
    const auto t = synth::sample_hawkes_times(p, rng);
    CHECK(std::is_sorted(t.begin(), t.end()));
    if (!t.empty()) {
      CHECK(t.front() >= 0.0);
      CHECK(t.back() <= p.end_time);
    }
  }
}

TEST_CASE("Hawkes event counts match the mean-intensity solution") {
  for (double alpha : {0.0, 0.5, 0.8}) {
    synth::HawkesParams p;
    p.mu = 3.0;
    p.alpha = alpha;
    p.beta = 1.0;
    p.end_time = 4.0;
    Rng rng(17);
    const int reps = 4000;
    double sum = 0.0, sq = 0.0;
    for (int k = 0; k < reps; ++k) {
      const double n = static_cast<double>(synth::sample_hawkes_times(p, rng).size());
      sum += n;
      sq += n * n;
    }
    const double mean = sum / reps, var = sq / reps - mean * mean;
    const double expect = hawkes_expected_count(p.mu, p.alpha, p.beta, p.end_time);
    INFO("alpha " << alpha << " mean " << mean << " expected " << expect);
    CHECK(std::abs(mean - expect) < 4.0 * std::sqrt(var / reps));
  }
}

TEST_CASE("base intensity follows the constant-count rule") {
  CHECK(synth::adjust_base_intensity(30, 0.5, 4.0) == doctest::Approx(5.0));
  CHECK(synth::adjust_base_intensity(30, 0.0, 3.0) == doctest::Approx(15.0));
  CHECK_THROWS(synth::adjust_base_intensity(30, 1.0, 4.0));
  CHECK_THROWS(synth::adjust_base_intensity(30, 0.5, 1.0));
}

TEST_CASE("invalid Hawkes parameters are rejected") {
  synth::HawkesParams p;
  p.alpha = 1.0;  // branching ratio alpha / beta must stay below 1
  CHECK_THROWS(p.validate());
  p.alpha = 0.5;
  p.mu = -1.0;
  CHECK_THROWS(p.validate());
}

TEST_CASE("small-angle period of the undamped pendulum is within 1 %") {
  for (double L : {0.5, 1.0, 4.0, 10.0}) {
    synth::PendulumParams p;
    p.b = 0.0;
    p.L = L;
    p.theta0 = 0.01;
    const double expect = 2.0 * std::numbers::pi * std::sqrt(L / p.g);
    const double got = measured_period(p, 6.0 * expect, expect / 2000.0);
    INFO("L " << L << " period " << got << " expected " << expect);
    CHECK(std::abs(got - expect) / expect < 0.01);
  }
}

TEST_CASE("damped small oscillations follow the damped frequency") {
  synth::PendulumParams p;
  p.b = 1.0;
  p.m = 1.0;
  p.L = 2.0;
  p.theta0 = 0.01;
  const double w = std::sqrt(p.g / p.L - std::pow(p.b / (2.0 * p.m), 2));
  const double expect = 2.0 * std::numbers::pi / w;
  CHECK(std::abs(measured_period(p, 3.5 * expect, expect / 2000.0) - expect) / expect < 0.01);
}

TEST_CASE("undamped large swings conserve energy under RK4") {
  synth::PendulumParams p;
  p.b = 0.0;
  p.theta0 = 2.5;
  p.omega0 = 1.0;
  std::vector<double> q;
  for (int i = 0; i <= 100; ++i) q.push_back(0.05 * i);
  const auto s = synth::integrate_pendulum(p, q);
  auto energy = [&](const synth::PendulumState& x) { return 0.5 * p.L * x[1] * x[1] - p.g * std::cos(x[0]); };
  for (const auto& x : s) CHECK(std::abs(energy(x) - energy(s[0])) < 1e-8);
}

TEST_CASE("pendulum dataset matches its generative description") {
  synth::SynthConfig cfg;
  cfg.n_sequences = 2000;
  cfg.seed = 11;
  const auto ds = synth::generate_pendulum_dataset(cfg);
  REQUIRE(ds.size() == 2000);
  CHECK(ds.schema.numeric.size() == 2);
  double events = 0.0, dropped = 0.0, values = 0.0;
  for (const auto& s : ds.sequences) {
    const double b = std::get<double>(s.target);
    CHECK(b >= 1.0);
    CHECK(b <= 3.0);
    CHECK(std::is_sorted(s.times.begin(), s.times.end()));
    CHECK(s.times.back() <= 5.0);
    events += static_cast<double>(s.length());
    for (std::size_t i = 0; i < s.length(); ++i) {
      for (int f = 0; f < 2; ++f) {
        values += 1;
        dropped += s.mask[f][i] ? 0 : 1;
      }
      // (x, y) = (sin theta, -cos theta) lies on the unit circle.
      if (s.mask[0][i] && s.mask[1][i])
        CHECK(std::abs(s.numeric[0][i] * s.numeric[0][i] + s.numeric[1][i] * s.numeric[1][i] - 1.0) < 1e-12);
    }
  }
  const double mean_events = events / 2000.0;
  INFO("mean events per sequence " << mean_events);
  CHECK(mean_events >= 25.0);
  CHECK(mean_events <= 45.0);
  CHECK(std::abs(dropped / values - 0.1) < 0.01);
}

TEST_CASE("generation does not depend on the number of workers") {
  synth::SynthConfig a;
  a.n_sequences = 300;
  a.seed = 3;
  auto b = a;
  b.jobs = 4;
  const auto x = synth::generate_pendulum_dataset(a), y = synth::generate_pendulum_dataset(b);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x.sequences[i] == y.sequences[i]);
  a.seed = 4;
  CHECK(!(synth::generate_pendulum_dataset(a).sequences[0] == x.sequences[0]));
}

TEST_CASE("synth config validation") {
  synth::SynthConfig c;
  c.b_range = {3.0, 1.0};
  CHECK_THROWS(c.validate());
  c = {};
  c.drop_prob = 1.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.n_sequences = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("the time-irrelevant control targets the mean of its values") {
  const auto ds = synth::generate_time_irrelevant_dataset(200, 7);
  for (const auto& s : ds.sequences) {
    double sum = 0.0, n = 0.0;
    for (std::size_t i = 0; i < s.length(); ++i)
      if (s.mask[0][i]) {
        sum += s.numeric[0][i];
        n += 1;
      }
    CHECK(std::get<double>(s.target) == doctest::Approx(sum / n));
  }
}

TEST_CASE("Poisson case: mu = 2 on [0, 5] averages 10 events") {
  synth::HawkesParams p;
  p.mu = 2.0;
  p.alpha = 0.0;
  p.end_time = 5.0;
  Rng rng(23);
  double sum = 0.0;
  for (int k = 0; k < 10000; ++k) sum += static_cast<double>(synth::sample_hawkes_times(p, rng).size());
  CHECK(std::abs(sum / 10000.0 - 10.0) < 0.3);
}

TEST_CASE("self-excited case: mu = 5, alpha = 0.5, T = 4 averages the transient mean") {
  // From an empty history the mean is 31.35, below the stationary mu T / (1 - alpha) = 40.
  const double expect = hawkes_expected_count(5.0, 0.5, 1.0, 4.0);
  CHECK(expect == doctest::Approx(31.35).epsilon(1e-3));
  synth::HawkesParams p;
  p.mu = synth::adjust_base_intensity(30, 0.5, 4.0);
  p.alpha = 0.5;
  p.end_time = 4.0;
  Rng rng(29);
  const int reps = 10000;
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < reps; ++k) {
    const double n = static_cast<double>(synth::sample_hawkes_times(p, rng).size());
    sum += n;
    sq += n * n;
  }
  const double mean = sum / reps, sd = std::sqrt(sq / reps - mean * mean);
  INFO("mean " << mean << " sd " << sd);
  CHECK(std::abs(mean - expect) < 4.0 * sd / std::sqrt(double(reps)));
  CHECK(mean >= 25.0);
  CHECK(mean <= 45.0);
}

TEST_CASE("L = g gives a small-angle period of 2 pi") {
  synth::PendulumParams p;
  p.b = 0.0;
  p.L = p.g;
  p.theta0 = 0.01;
  const double tau = 2.0 * std::numbers::pi;
  CHECK(std::abs(measured_period(p, 6.0 * tau, tau / 2000.0) - tau) / tau < 0.01);
}
