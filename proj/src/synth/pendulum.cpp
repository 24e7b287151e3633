#include "synth/pendulum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "common/error.hpp"
#include "common/parallel.hpp"

namespace evseq::synth {

void HawkesParams::validate() const {
  if (!(mu > 0.0)) throw Error("hawkes: mu must be positive");
  if (!(alpha >= 0.0 && alpha < beta)) throw Error("hawkes: need 0 <= alpha < beta");
  if (!(end_time > 1.0)) throw Error("hawkes: end_time must exceed 1");
}

std::vector<double> sample_hawkes_times(const HawkesParams& p, Rng& rng) {
  p.validate();
  std::vector<double> times;
  double t = 0.0;
  double excitation = 0.0;  // sum of alpha exp(-beta (t - t_i)) at the current t
  for (;;) {
    const double bound = p.mu + excitation;
    const double wait = -std::log1p(-uniform01(rng)) / bound;
    t += wait;
    if (t > p.end_time) break;
    excitation *= std::exp(-p.beta * wait);
    const double intensity = p.mu + excitation;
    if (uniform01(rng) * bound <= intensity) {
      times.push_back(t);
      excitation += p.alpha;
    }
  }
  return times;
}

double adjust_base_intensity(double target_points, double alpha, double end_time) {
  if (!(end_time > 1.0)) throw Error("adjust_base_intensity: end_time must exceed 1");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw Error("adjust_base_intensity: alpha must lie in [0, 1)");
  return target_points * (1.0 - alpha) / (end_time - 1.0);
}

namespace {

PendulumState derivative(const PendulumParams& p, const PendulumState& s) {
  return {s[1], -(p.b / p.m) * s[1] - (p.g / p.L) * std::sin(s[0])};
}

PendulumState rk4(const PendulumParams& p, const PendulumState& s, double h) {
  auto add = [](const PendulumState& a, const PendulumState& d, double k) {
    return PendulumState{a[0] + k * d[0], a[1] + k * d[1]};
  };
  auto k1 = derivative(p, s);
  auto k2 = derivative(p, add(s, k1, h / 2));
  auto k3 = derivative(p, add(s, k2, h / 2));
  auto k4 = derivative(p, add(s, k3, h));
  return {s[0] + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
          s[1] + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])};
}

}  // namespace

std::vector<PendulumState> integrate_pendulum(const PendulumParams& p, const std::vector<double>& query_times,
                                              double step) {
  if (!(p.m > 0.0) || !(p.L > 0.0) || p.b < 0.0) throw Error("pendulum: need m > 0, L > 0, b >= 0");
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    if (query_times[i] < 0.0) throw Error("pendulum: query times must be non-negative");
    if (i && query_times[i] < query_times[i - 1]) throw Error("pendulum: query times must be ascending");
  }
  std::vector<PendulumState> out;
  out.reserve(query_times.size());
  PendulumState prev{p.theta0, p.omega0};
  PendulumState cur = prev;
  double t_prev = 0.0;
  double t_cur = 0.0;
  std::size_t k = 0;
  for (double q : query_times) {
    while (t_cur < q) {
      prev = cur;
      t_prev = t_cur;
      cur = rk4(p, cur, step);
      ++k;
      t_cur = static_cast<double>(k) * step;
    }
    if (t_cur == q || t_cur == t_prev) {
      out.push_back(cur);
    } else {
      const double w = (q - t_prev) / (t_cur - t_prev);
      out.push_back({prev[0] + w * (cur[0] - prev[0]), prev[1] + w * (cur[1] - prev[1])});
    }
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_sequences == 0) throw Error("synth: n_sequences must be positive");
  if (!(drop_prob >= 0.0 && drop_prob < 1.0)) throw Error("synth: drop_prob must lie in [0, 1)");
  if (!(end_time_range[0] > 1.0 && end_time_range[1] >= end_time_range[0]))
    throw Error("synth: end time range must lie above 1");
  if (!(alpha >= 0.0 && alpha < beta && alpha < 1.0)) throw Error("synth: need 0 <= alpha < min(beta, 1)");
  auto ordered = [](const std::array<double, 2>& r) { return std::isfinite(r[0]) && std::isfinite(r[1]) && r[0] <= r[1]; };
  if (!ordered(b_range) || !ordered(L_range) || !ordered(theta0_range) || !ordered(omega0_range))
    throw Error("synth: ranges must be finite with low <= high");
  if (!(L_range[0] > 0.0) || b_range[0] < 0.0 || !(mass > 0.0)) throw Error("synth: invalid pendulum ranges");
  if (!(target_points > 0.0)) throw Error("synth: target_points must be positive");
}

seq::Dataset generate_pendulum_dataset(const SynthConfig& cfg) {
  cfg.validate();
  seq::Dataset ds;
  ds.schema.numeric = {{"x", seq::Imputation::kForwardFill, false}, {"y", seq::Imputation::kForwardFill, false}};
  ds.schema.target_kind = seq::TargetKind::kRegression;
  ds.schema.num_targets = 1;
  ds.sequences.resize(cfg.n_sequences);
  constexpr int kMaxRetries = 100;

  parallel_for(cfg.n_sequences, cfg.jobs, [&](std::size_t i) {
    Rng rng = make_rng(cfg.seed, {sid(Stream::kSynthSequence), i});
    std::vector<double> times;
    for (int attempt = 0; times.empty(); ++attempt) {
      if (attempt == kMaxRetries)
        throw Error("pendulum sequence " + std::to_string(i) + " produced no events after retries");
      HawkesParams hp;
      hp.alpha = cfg.alpha;
      hp.beta = cfg.beta;
      hp.end_time = uniform(rng, cfg.end_time_range[0], cfg.end_time_range[1]);
      hp.mu = adjust_base_intensity(cfg.target_points, cfg.alpha, hp.end_time);
      times = sample_hawkes_times(hp, rng);
    }
    PendulumParams pp;
    pp.m = cfg.mass;
    pp.b = uniform(rng, cfg.b_range[0], cfg.b_range[1]);
    pp.L = uniform(rng, cfg.L_range[0], cfg.L_range[1]);
    pp.theta0 = uniform(rng, cfg.theta0_range[0], cfg.theta0_range[1]);
    pp.omega0 = uniform(rng, cfg.omega0_range[0], cfg.omega0_range[1]);
    auto states = integrate_pendulum(pp, times);

    seq::EventSequence s;
    s.id = "pendulum-" + std::to_string(i);
    const std::size_t n = times.size();
    s.times = std::move(times);
    s.numeric.assign(2, std::vector<double>(n));
    s.mask.assign(2, std::vector<std::uint8_t>(n, 1));
    for (std::size_t e = 0; e < n; ++e) {
      s.numeric[0][e] = std::sin(states[e][0]);
      s.numeric[1][e] = -std::cos(states[e][0]);
    }
    for (std::size_t e = 0; e < n; ++e) {
      for (int f = 0; f < 2; ++f) {
        if (uniform01(rng) < cfg.drop_prob) {
          s.numeric[f][e] = std::numeric_limits<double>::quiet_NaN();
          s.mask[f][e] = 0;
        }
      }
    }
    s.target = pp.b;
    ds.sequences[i] = std::move(s);
  });
  return ds;
}

seq::Dataset generate_time_irrelevant_dataset(std::size_t n, std::uint64_t seed) {
  seq::Dataset ds;
  ds.schema.numeric = {{"v", seq::Imputation::kForwardFill, false}};
  ds.schema.target_kind = seq::TargetKind::kRegression;
  ds.sequences.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {sid(Stream::kSynthSequence), i, 7});
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t len = 20 + static_cast<std::size_t>(uniform01(rng) * 21.0);
    seq::EventSequence s;
    s.id = "control-" + std::to_string(i);
    s.times.resize(len);
    for (auto& t : s.times) t = uniform01(rng);
    std::sort(s.times.begin(), s.times.end());
    const double shift = normal(rng);
    s.numeric.assign(1, std::vector<double>(len));
    s.mask.assign(1, std::vector<std::uint8_t>(len, 1));
    double sum = 0.0;
    for (auto& v : s.numeric[0]) {
      v = shift + 0.5 * normal(rng);
      sum += v;
    }
    s.target = sum / static_cast<double>(len);
    ds.sequences[i] = std::move(s);
  }
  return ds;
}

}  // namespace evseq::synth
