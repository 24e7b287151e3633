#include "hpo/tpe.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "common/log.hpp"

namespace evseq::hpo {

using nlohmann::json;

std::string to_string(TrialState s) {
  switch (s) {
    case TrialState::kCompleted: return "completed";
    case TrialState::kFailed: return "failed";
    case TrialState::kPrunedByBudget: return "pruned-by-budget";
  }
  return "failed";
}

TrialState parse_trial_state(const std::string& s) {
  if (s == "completed") return TrialState::kCompleted;
  if (s == "failed") return TrialState::kFailed;
  if (s == "pruned-by-budget") return TrialState::kPrunedByBudget;
  throw Error("unknown trial state '" + s + "'");
}

void TPEConfig::validate(const std::string& pointer) const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ValidationError(pointer + "/gamma", "must lie in (0, 1)");
  if (n_startup < 2) throw ValidationError(pointer + "/n_startup", "must be >= 2");
  if (n_candidates < 1) throw ValidationError(pointer + "/n_candidates", "must be >= 1");
  if (!(bandwidth_floor > 0.0)) throw ValidationError(pointer + "/bandwidth_floor", "must be > 0");
}

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kScale = 0.2;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Mixture of truncated Gaussians on [lo, hi] plus a uniform prior component.
struct Parzen {
  double lo = 0.0, hi = 1.0;
  std::vector<double> mu;
  double sigma = 1.0;

  Parzen(std::vector<double> obs, double a, double b, double floor_frac) : lo(a), hi(b), mu(std::move(obs)) {
    const double range = hi - lo;
    const double n = static_cast<double>(std::max<std::size_t>(mu.size(), 1));
    sigma = std::max(kScale * std::pow(n, -0.2) * range, floor_frac * range);
  }

  double density(double x) const {
    const double w = 1.0 / static_cast<double>(mu.size() + 1);
    double p = w / (hi - lo);
    for (double m : mu) {
      const double z = (x - m) / sigma;
      const double mass = normal_cdf((hi - m) / sigma) - normal_cdf((lo - m) / sigma);
      p += w * kInvSqrt2Pi * std::exp(-0.5 * z * z) / sigma / std::max(mass, 1e-300);
    }
    return p;
  }

  double sample(Rng& rng) const {
    const std::size_t k = static_cast<std::size_t>(rng() % (mu.size() + 1));
    if (k == mu.size()) return uniform(rng, lo, hi);
    std::normal_distribution<double> nd(mu[k], sigma);
    for (int tries = 0; tries < 100; ++tries) {
      const double x = nd(rng);
      if (x >= lo && x <= hi) return x;
    }
    return std::clamp(mu[k], lo, hi);
  }
};

struct Transform {
  double lo, hi;
  bool log;
  bool integer;
  long long ilo = 0, ihi = 0;
  double rlo = 0.0, rhi = 0.0;  // untransformed real bounds

  double forward(const json& v) const {
    const double x = v.get<double>();
    return log ? std::log(x) : x;
  }
  json backward(double u) const {
    const double x = log ? std::exp(u) : u;
    if (integer) return std::clamp(static_cast<long long>(std::llround(x)), ilo, ihi);
    return std::clamp(x, rlo, rhi);
  }
};

Transform transform_of(const Domain& d) {
  if (const auto* r = std::get_if<RealRange>(&d))
    return r->log ? Transform{std::log(r->lo), std::log(r->hi), true, false, 0, 0, r->lo, r->hi}
                  : Transform{r->lo, r->hi, false, false, 0, 0, r->lo, r->hi};
  const auto& i = std::get<IntRange>(d);
  const double lo = static_cast<double>(i.lo) - 0.5, hi = static_cast<double>(i.hi) + 0.5;
  if (i.log) return Transform{std::log(std::max(lo, 0.5)), std::log(hi), true, true, i.lo, i.hi};
  return Transform{lo, hi, false, true, i.lo, i.hi};
}

}  // namespace

Suggestion tpe_suggest(const ParamSpace& space, const std::vector<Trial>& history, const TPEConfig& cfg, Rng& rng) {
  space.validate();
  cfg.validate();
  std::vector<const Trial*> done;
  for (const auto& t : history)
    if (t.state == TrialState::kCompleted && std::isfinite(t.hpo_val_metric) && space.contains(t.params))
      done.push_back(&t);
  if (done.size() < cfg.n_startup) {
    if (done.empty() && history.size() >= cfg.n_startup)
      log::warn("tpe: no completed trials in a history of " + std::to_string(history.size()) +
                "; sampling at random");
    return {space.sample_uniform(rng), true};
  }
  std::stable_sort(done.begin(), done.end(), [](const Trial* a, const Trial* b) {
    if (a->hpo_val_metric != b->hpo_val_metric) return a->hpo_val_metric > b->hpo_val_metric;
    return a->number < b->number;
  });
  const auto n_good = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(cfg.gamma * static_cast<double>(done.size()))));
  const std::vector<const Trial*> good(done.begin(), done.begin() + static_cast<std::ptrdiff_t>(n_good));
  const std::vector<const Trial*> bad(done.begin() + static_cast<std::ptrdiff_t>(n_good), done.end());

  std::vector<Assignment> candidates(cfg.n_candidates);
  std::vector<double> score(cfg.n_candidates, 0.0);
  for (const auto& p : space.params()) {
    if (const auto* c = std::get_if<Categorical>(&p.domain)) {
      const std::size_t k = c->choices.size();
      std::vector<double> lw(k, 1.0), gw(k, 1.0);
      for (const auto* t : good) lw[static_cast<std::size_t>(choice_index(*c, t->params.at(p.name)))] += 1.0;
      for (const auto* t : bad) gw[static_cast<std::size_t>(choice_index(*c, t->params.at(p.name)))] += 1.0;
      const double lz = static_cast<double>(good.size() + k), gz = static_cast<double>(bad.size() + k);
      std::discrete_distribution<std::size_t> pick(lw.begin(), lw.end());
      for (std::size_t j = 0; j < cfg.n_candidates; ++j) {
        const std::size_t ci = pick(rng);
        candidates[j][p.name] = c->choices[ci];
        score[j] += std::log(lw[ci] / lz) - std::log(gw[ci] / gz);
      }
      continue;
    }
    const Transform tf = transform_of(p.domain);
    std::vector<double> gu, bu;
    for (const auto* t : good) gu.push_back(tf.forward(t->params.at(p.name)));
    for (const auto* t : bad) bu.push_back(tf.forward(t->params.at(p.name)));
    const Parzen l(gu, tf.lo, tf.hi, cfg.bandwidth_floor), g(bu, tf.lo, tf.hi, cfg.bandwidth_floor);
    for (std::size_t j = 0; j < cfg.n_candidates; ++j) {
      const json v = tf.backward(l.sample(rng));
      candidates[j][p.name] = v;
      const double u = tf.forward(v);
      score[j] += std::log(l.density(u)) - std::log(g.density(u));
    }
  }
  const auto best = static_cast<std::size_t>(std::max_element(score.begin(), score.end()) - score.begin());
  return {candidates[best], false};
}

}  // namespace evseq::hpo
