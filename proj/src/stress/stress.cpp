#include "stress/stress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "common/log.hpp"
#include "common/parallel.hpp"
#include "stats/tests.hpp"

namespace evseq::stress {

using nlohmann::json;

std::string to_string(StressKind k) {
  return k == StressKind::kPermute ? "permute" : "random-timestamps";
}

StressKind parse_stress_kind(const std::string& s) {
  if (s == "permute") return StressKind::kPermute;
  if (s == "random-timestamps") return StressKind::kRandomTimestamps;
  throw Error("unknown stress kind '" + s + "' (expected permute or random-timestamps)");
}

void materialize_time(seq::EventSequence& s) {
  if (s.traveling_time) return;
  seq::TravelingTime tt;
  tt.absolute = s.times;
  tt.delta.resize(s.times.size());
  for (std::size_t i = 0; i < s.times.size(); ++i) tt.delta[i] = i ? s.times[i] - s.times[i - 1] : s.times[i];
  s.traveling_time = std::move(tt);
}

namespace {

template <typename T>
void apply_order(std::vector<T>& v, const std::vector<std::size_t>& order) {
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) out[i] = v[order[i]];
  v = std::move(out);
}

}  // namespace

seq::EventSequence permute_events(const seq::EventSequence& s, Rng& rng) {
  seq::EventSequence out = s;
  const std::size_t n = s.length();
  if (n < 2) return out;
  materialize_time(out);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end() - 1, rng);
  for (auto& col : out.numeric) apply_order(col, order);
  for (auto& col : out.mask) apply_order(col, order);
  for (auto& col : out.categorical) apply_order(col, order);
  apply_order(out.traveling_time->absolute, order);
  apply_order(out.traveling_time->delta, order);
  return out;
}

seq::EventSequence randomize_timestamps(const seq::EventSequence& s, Rng& rng) {
  seq::EventSequence out = s;
  for (auto& t : out.times) t = uniform01(rng);
  std::sort(out.times.begin(), out.times.end());
  return out;
}

seq::Dataset apply_stress(const seq::Dataset& ds, const seq::IndexSet& indices, StressKind kind, std::uint64_t seed) {
  if (!ds.preprocessed) throw Error("stress transforms need a preprocessed dataset");
  seq::Dataset out = ds;
  for (auto i : indices) {
    if (i >= ds.size()) throw Error("stress index " + std::to_string(i) + " out of range");
    Rng rng = make_rng(seed, {sid(Stream::kStress), static_cast<std::uint64_t>(kind), i});
    out.sequences[i] = kind == StressKind::kPermute ? permute_events(ds.sequences[i], rng)
                                                    : randomize_timestamps(ds.sequences[i], rng);
  }
  return out;
}

double max_prediction_shift(const models::TrainedModel& m, const seq::Dataset& a, const seq::Dataset& b,
                            const seq::IndexSet& indices) {
  auto pa = models::predict(m, a, indices);
  auto pb = models::predict(m, b, indices);
  double worst = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::abs(pa.data()[i] - pb.data()[i]));
  return worst;
}

StressRow make_row(std::string method, std::string dataset, std::string kind, std::vector<double> baseline,
                   std::vector<double> stressed, bool paired) {
  if (baseline.empty() || stressed.empty()) throw Error("stress row '" + method + "': empty metric sample");
  StressRow r;
  r.method = std::move(method);
  r.dataset = std::move(dataset);
  r.kind = std::move(kind);
  r.baseline = std::move(baseline);
  r.stressed = std::move(stressed);
  r.baseline_mean = stats::mean(r.baseline);
  r.baseline_std = stats::stddev(r.baseline);
  r.stressed_mean = stats::mean(r.stressed);
  r.stressed_std = stats::stddev(r.stressed);
  r.relative_drop = (r.stressed_mean - r.baseline_mean) / std::abs(r.baseline_mean) * 100.0;
  r.p = stats::mann_whitney_u(r.stressed, r.baseline).p;
  r.p_adjusted = r.p;
  r.sign_test_p = paired && r.baseline.size() == r.stressed.size() ? stats::sign_test(r.stressed, r.baseline)
                                                                    : std::nan("");
  return r;
}

void StressReport::adjust() {
  std::vector<double> p;
  for (const auto& r : rows) p.push_back(r.p);
  auto adj = stats::holm_bonferroni(p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].p_adjusted = adj[i];
    rows[i].significant = adj[i] < alpha;
  }
}

namespace {

std::string num(double v, int digits = 3) {
  return std::isnan(v) ? std::string("NA") : stats::format_fixed(v, digits);
}

std::string sci(double v) {
  if (std::isnan(v)) return "NA";
  std::ostringstream s;
  s.precision(3);
  s << v;
  return s.str();
}

}  // namespace

std::string StressReport::csv() const {
  std::ostringstream out;
  out << "method,dataset,kind,metric,n_baseline,n_stressed,baseline_mean,baseline_std,stressed_mean,stressed_std,"
         "relative_drop_pct,p,p_adjusted,sign_test_p,significant\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.dataset << ',' << r.kind << ',' << metric << ',' << r.baseline.size() << ','
        << r.stressed.size() << ',' << num(r.baseline_mean, 6) << ',' << num(r.baseline_std, 6) << ','
        << num(r.stressed_mean, 6) << ',' << num(r.stressed_std, 6) << ',' << num(r.relative_drop, 2) << ','
        << sci(r.p) << ',' << sci(r.p_adjusted) << ',' << sci(r.sign_test_p) << ','
        << (r.significant ? "true" : "false") << '\n';
  }
  return out.str();
}

std::string StressReport::markdown() const {
  std::ostringstream out;
  out << "| Method | Dataset | Stress | Baseline | Stressed | Change | p (Holm) |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    std::string drop = num(r.relative_drop, 2) + " %";
    if (r.significant) drop = "**" + drop + "\\***";
    out << "| " << r.method << " | " << r.dataset << " | " << r.kind << " | " << num(r.baseline_mean) << " ± "
        << num(r.baseline_std) << " | " << num(r.stressed_mean) << " ± " << num(r.stressed_std) << " | " << drop
        << " | " << sci(r.p_adjusted) << " |\n";
  }
  return out.str();
}

StressReport stress_eval(const std::vector<StressInput>& inputs, const seq::Dataset& ds, const seq::IndexSet& test,
                         StressKind kind, std::uint64_t seed, int jobs, std::size_t min_seeds) {
  if (inputs.empty()) throw Error("stress_eval: no methods given");
  if (test.empty()) throw Error("stress_eval: empty test set");
  const seq::Dataset stressed = apply_stress(ds, test, kind, seed);
  StressReport report;
  for (const auto& in : inputs) {
    if (!in.models) throw Error("stress_eval: method '" + in.method + "' has no models");
    std::vector<const models::TrainedModel*> ms;
    for (const auto& m : *in.models)
      if (m) ms.push_back(&*m);
    if (ms.size() < min_seeds)
      throw Error("stress_eval: method '" + in.method + "' has " + std::to_string(ms.size()) +
                  " trained seeds, need " + std::to_string(min_seeds));
    for (const auto* m : ms) {
      if (kind == StressKind::kRandomTimestamps && m->model.config().time_mode == models::TimeMode::kNone)
        throw Error("stress_eval: random timestamps cannot affect '" + in.method + "', which ignores time");
    }
    report.metric = stats::metric_name(ms.front()->metric);
    std::vector<double> base(ms.size()), str(ms.size());
    parallel_for(ms.size(), jobs, [&](std::size_t s) {
      base[s] = models::evaluate(*ms[s], ds, test, "stress-baseline");
      str[s] = models::evaluate(*ms[s], stressed, test, "stress");
    });
    report.rows.push_back(make_row(in.method, in.dataset, to_string(kind), std::move(base), std::move(str), true));
  }
  report.adjust();
  return report;
}

RetrainResult retrain_permuted(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                               const hpo::MethodSpec& method, const hpo::Assignment& params,
                               const std::vector<stats::RunRecord>& vanilla, std::size_t n_seeds, std::uint64_t seed,
                               const hpo::EvalOptions& opts) {
  std::vector<double> base;
  for (const auto& r : vanilla) {
    if (r.method != method.name || r.failed) continue;
    auto it = r.split_metrics.find("test");
    if (it != r.split_metrics.end()) base.push_back(it->second);
  }
  if (base.empty()) throw Error("retrain_permuted: no vanilla test records for '" + method.name + "'");
  seq::IndexSet all = pool;
  all.insert(all.end(), test.begin(), test.end());
  const seq::Dataset permuted = apply_stress(ds, all, StressKind::kPermute, seed);
  hpo::MethodSpec m = method;
  m.encoder.time_mode = models::TimeMode::kNone;
  hpo::Assignment a = params;
  if (a.count("time_mode")) a["time_mode"] = "none";
  hpo::EvalOptions o = opts;
  o.tag = "retrain-permuted";
  RetrainResult res;
  res.permuted = hpo::final_eval(permuted, pool, test, m, a, n_seeds, seed, o);
  std::vector<double> str;
  for (const auto& r : res.permuted.records)
    if (!r.failed) str.push_back(r.split_metrics.at("test"));
  res.row = make_row(method.name, opts.dataset_name, "retrain-permuted", std::move(base), std::move(str), false);
  res.row.significant = res.row.p < stats::kSignificance;
  return res;
}

namespace {

json effective_value(const hpo::MethodSpec& m, const hpo::Trial& t, const std::string& param) {
  if (auto it = t.params.find(param); it != t.params.end()) return it->second;
  const json enc = m.encoder.to_json();
  if (enc.contains(param)) return enc[param];
  const json tr = m.train.to_json();
  if (tr.contains(param)) return tr[param];
  throw ValidationError("/param", "'" + param + "' is neither tuned nor a method setting");
}

}  // namespace

std::string AblationReport::csv() const {
  std::ostringstream out;
  out << "method,param,option,trials,n,mean,std\n";
  for (const auto& a : arms) {
    std::string ts;
    for (auto t : a.trials) ts += (ts.empty() ? "" : " ") + std::to_string(t);
    out << method << ',' << param << ',' << a.label << ',' << ts << ',' << a.values.size() << ','
        << num(a.mean, 6) << ',' << num(a.std, 6) << '\n';
  }
  out << method << ',' << param << ",difference,,," << num(difference, 6) << ",p=" << sci(p)
      << (significant ? " *" : "") << '\n';
  return out.str();
}

AblationReport categorical_ablation(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                                    const hpo::MethodSpec& method, const std::vector<hpo::Trial>& trials,
                                    const std::string& param, const std::vector<AblationOption>& options,
                                    std::size_t top_k, std::size_t seeds_per_trial, std::uint64_t seed,
                                    const hpo::EvalOptions& opts) {
  if (options.size() < 2) throw ValidationError("/options", "need at least two options");
  if (top_k == 0) throw ValidationError("/top_k", "must be >= 1");
  AblationReport rep;
  rep.method = method.name;
  rep.param = param;
  std::map<std::size_t, std::vector<double>> retrained;
  for (const auto& opt : options) {
    std::vector<const hpo::Trial*> members;
    for (const auto& t : trials) {
      if (t.state != hpo::TrialState::kCompleted || !std::isfinite(t.hpo_val_metric)) continue;
      const json v = effective_value(method, t, param);
      if (std::find(opt.levels.begin(), opt.levels.end(), v) != opt.levels.end()) members.push_back(&t);
    }
    if (members.empty()) throw Error("ablation option '" + opt.label + "' has no completed trials");
    std::stable_sort(members.begin(), members.end(),
                     [](const auto* a, const auto* b) { return a->hpo_val_metric > b->hpo_val_metric; });
    if (members.size() < top_k)
      log::warn("ablation option '" + opt.label + "': only " + std::to_string(members.size()) +
                " completed trial(s), using all");
    members.resize(std::min(members.size(), top_k));
    AblationArm arm;
    arm.label = opt.label;
    for (const auto* t : members) {
      arm.trials.push_back(t->number);
      auto it = retrained.find(t->number);
      if (it == retrained.end()) {
        hpo::EvalOptions o = opts;
        o.tag = "ablation:" + opt.label;
        o.keep_models = false;
        auto res = hpo::final_eval(ds, pool, test, method, t->params, seeds_per_trial,
                                   derive_seed(seed, {sid(Stream::kAblation), t->number}), o);
        std::vector<double> vals;
        for (const auto& r : res.records)
          if (!r.failed) vals.push_back(r.split_metrics.at("test"));
        it = retrained.emplace(t->number, std::move(vals)).first;
      }
      arm.values.insert(arm.values.end(), it->second.begin(), it->second.end());
    }
    arm.mean = stats::mean(arm.values);
    arm.std = stats::stddev(arm.values);
    rep.arms.push_back(std::move(arm));
  }
  const auto& first = rep.arms.front();
  const auto& last = rep.arms.back();
  rep.difference = last.mean - first.mean;
  rep.p = stats::mann_whitney_u(last.values, first.values).p;
  rep.significant = rep.difference > 0.0 && rep.p < stats::kSignificance;
  return rep;
}

AblationReport time_ablation(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                             const hpo::MethodSpec& method, const std::vector<hpo::Trial>& trials,
                             std::size_t top_k, std::size_t seeds_per_trial, std::uint64_t seed,
                             const hpo::EvalOptions& opts) {
  return categorical_ablation(ds, pool, test, method, trials, "time_mode",
                              {{"w/o time", {json("none")}}, {"with time", {json("delta"), json("absolute")}}},
                              top_k, seeds_per_trial, seed, opts);
}

}  // namespace evseq::stress
