#include "hpo/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "common/error.hpp"
#include "common/log.hpp"
#include "common/parallel.hpp"
#include "seq/io.hpp"
#include "stats/tests.hpp"

namespace evseq::hpo {

using nlohmann::json;

std::size_t best_trial_index(const std::vector<Trial>& trials) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& t = trials[i];
    if (t.state != TrialState::kCompleted || !std::isfinite(t.hpo_val_metric)) continue;
    if (!best || t.hpo_val_metric > trials[*best].hpo_val_metric) best = i;
  }
  if (!best) throw TrainingError("hpo: no completed trials");
  return *best;
}

std::string trial_to_json(const Trial& t) {
  json j{{"number", t.number},
         {"params", json(t.params)},
         {"state", to_string(t.state)},
         {"random_phase", t.random_phase}};
  if (t.state == TrialState::kCompleted) j["hpo_val"] = t.hpo_val_metric;
  j["splits"] = json(t.split_metrics);
  if (!t.error.empty()) j["error"] = t.error;
  return j.dump();
}

Trial trial_from_json(const std::string& line) {
  Trial t;
  try {
    const json j = json::parse(line);
    t.number = j.at("number").get<std::size_t>();
    for (const auto& [k, v] : j.at("params").items()) t.params[k] = v;
    t.state = parse_trial_state(j.at("state").get<std::string>());
    t.random_phase = j.value("random_phase", false);
    if (t.state == TrialState::kCompleted) t.hpo_val_metric = j.at("hpo_val").get<double>();
    if (j.contains("splits"))
      for (const auto& [k, v] : j["splits"].items()) t.split_metrics[k] = v.get<double>();
    t.error = j.value("error", "");
  } catch (const json::exception& e) {
    throw ParseError(0, std::string("malformed trial record: ") + e.what());
  }
  return t;
}

std::vector<Trial> read_trial_log(const std::string& path, bool* dropped_tail) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trial log '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  std::vector<Trial> out;
  if (dropped_tail) *dropped_tail = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      out.push_back(trial_from_json(lines[i]));
    } catch (const ParseError& e) {
      if (i + 1 == lines.size()) {
        log::warn("trial log '" + path + "': dropping truncated final line");
        if (dropped_tail) *dropped_tail = true;
        break;
      }
      throw ParseError(i + 1, e.what());
    }
    if (out.back().number != i)
      throw ParseError(i + 1, "trial number " + std::to_string(out.back().number) + " out of sequence");
  }
  return out;
}

namespace {

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to '" + path + "'");
  out << line << '\n';
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace

HpoResult hpo_run(const seq::Dataset& ds, const seq::SplitAssignment& split, const MethodSpec& method,
                  const ParamSpace& space, std::size_t n_hpo, std::uint64_t seed, const HpoOptions& opts) {
  method.validate();
  space.validate();
  opts.tpe.validate();
  if (n_hpo == 0) throw ValidationError("/n_hpo", "must be >= 1");
  if (split.train.empty() || split.train_val.empty() || split.hpo_val.empty())
    throw Error("hpo: train, train-val and hpo-val splits must be non-empty");
  HpoResult res;
  res.n_hpo = n_hpo;
  if (!opts.log_path.empty()) {
    if (opts.resume && std::filesystem::exists(opts.log_path)) {
      bool dropped = false;
      res.trials = read_trial_log(opts.log_path, &dropped);
      if (res.trials.size() > n_hpo)
        throw ValidationError("/n_hpo", "log already holds " + std::to_string(res.trials.size()) + " trials");
      if (dropped) {
        std::ofstream out(opts.log_path, std::ios::trunc | std::ios::binary);
        for (const auto& t : res.trials) out << trial_to_json(t) << '\n';
      }
      log::info("hpo: resuming at trial " + std::to_string(res.trials.size()));
    } else {
      std::ofstream out(opts.log_path, std::ios::trunc | std::ios::binary);
      if (!out) throw IoError("cannot create trial log '" + opts.log_path + "'");
    }
  }
  res.models.resize(n_hpo);
  for (std::size_t k = res.trials.size(); k < n_hpo; ++k) {
    Rng rng = make_rng(seed, {sid(Stream::kTpe), k});
    auto suggestion = tpe_suggest(space, res.trials, opts.tpe, rng);
    Trial t;
    t.number = k;
    t.params = std::move(suggestion.params);
    t.random_phase = suggestion.random_phase;
    try {
      auto model = train_method(ds, split.train, split.train_val, method, t.params,
                                derive_seed(seed, {sid(Stream::kHpoTrial), k}));
      t.hpo_val_metric = models::evaluate(model, ds, split.hpo_val, "hpo-val");
      t.split_metrics["train"] = models::evaluate(model, ds, split.train, "train");
      t.split_metrics["train-val"] = models::evaluate(model, ds, split.train_val, "train-val");
      t.split_metrics["hpo-val"] = t.hpo_val_metric;
      if (!std::isfinite(t.hpo_val_metric)) throw TrainingError("non-finite hpo-val metric");
      if (opts.keep_models) res.models[k] = std::move(model);
    } catch (const TrainingError& e) {
      t.state = TrialState::kFailed;
      t.error = e.what();
      t.split_metrics.clear();
      log::warn("hpo trial " + std::to_string(k) + " failed: " + e.what());
    }
    if (!opts.log_path.empty()) append_line(opts.log_path, trial_to_json(t));
    res.trials.push_back(std::move(t));
  }
  res.best_trial = best_trial_index(res.trials);
  res.best_params = res.trials[res.best_trial].params;
  return res;
}

namespace {

struct SeedRun {
  stats::RunRecord record;
  std::optional<models::TrainedModel> model;
  seq::IndexSet train;
};

// Resplit + train for one Monte-Carlo seed. Test targets are not touched.
SeedRun train_seed(const seq::Dataset& ds, seq::IndexSet pool, const MethodSpec& method, const Assignment& params,
                   std::uint64_t master, std::size_t s, const EvalOptions& opts) {
  std::sort(pool.begin(), pool.end());
  SeedRun run;
  run.record.method = method.name;
  run.record.dataset = opts.dataset_name;
  run.record.seed = s;
  run.record.metric_name = stats::metric_name(models::default_metric(ds.schema));
  run.record.tag = opts.tag;
  try {
    auto parts = seq::stratified_partition(ds, pool, {0.85, 0.15}, derive_seed(master, {sid(Stream::kFinalEval), s}));
    auto model = train_method(ds, parts[0], parts[1], method, params,
                              derive_seed(master, {sid(Stream::kFinalEval), s, 1}));
    run.record.split_metrics["train"] = models::evaluate(model, ds, parts[0], "train");
    run.record.split_metrics["train-val"] = models::evaluate(model, ds, parts[1], "train-val");
    run.model = std::move(model);
    run.train = std::move(parts[0]);
  } catch (const TrainingError& e) {
    run.record.failed = true;
    run.record.error = e.what();
    log::warn("seed " + std::to_string(s) + " of " + method.name + " failed: " + e.what());
  }
  return run;
}

void score_on_test(const seq::Dataset& ds, const seq::IndexSet& test, std::vector<SeedRun>& runs, int jobs) {
  if (ds.audit) ds.audit->open_scoring();
  parallel_for(runs.size(), jobs, [&](std::size_t i) {
    auto& r = runs[i];
    if (!r.model) return;
    const double v = models::evaluate(*r.model, ds, test, "test");
    if (!std::isfinite(v)) {
      r.record.failed = true;
      r.record.error = "non-finite test metric";
      return;
    }
    r.record.split_metrics["test"] = v;
  });
}

}  // namespace

FinalEvalResult final_eval(const seq::Dataset& ds, const seq::IndexSet& pool, const seq::IndexSet& test,
                           const MethodSpec& method, const Assignment& params, std::size_t n_seeds,
                           std::uint64_t seed, const EvalOptions& opts) {
  method.validate();
  if (n_seeds == 0) throw ValidationError("/n_seeds", "must be >= 1");
  if (test.empty()) throw Error("final_eval: empty test set");
  std::vector<SeedRun> runs(n_seeds);
  parallel_for(n_seeds, opts.jobs,
               [&](std::size_t s) { runs[s] = train_seed(ds, pool, method, params, seed, s, opts); });
  score_on_test(ds, test, runs, opts.jobs);
  FinalEvalResult out;
  std::size_t ok = 0;
  for (auto& r : runs) {
    ok += !r.record.failed;
    out.records.push_back(r.record);
    out.models.push_back(opts.keep_models && !r.record.failed ? std::move(r.model) : std::nullopt);
    out.train_splits.push_back(std::move(r.train));
  }
  const auto need = static_cast<std::size_t>(std::ceil(0.75 * static_cast<double>(n_seeds)));
  if (ok < need)
    throw TrainingError("final_eval: only " + std::to_string(ok) + " of " + std::to_string(n_seeds) +
                        " seeds succeeded (need " + std::to_string(need) + ")");
  return out;
}

std::vector<stats::RunRecord> scaling_study(const seq::Dataset& ds, const seq::IndexSet& pool,
                                            const seq::IndexSet& test,
                                            const std::vector<std::pair<MethodSpec, Assignment>>& methods,
                                            const std::vector<std::size_t>& sizes, std::size_t n_seeds,
                                            std::uint64_t seed, const EvalOptions& opts) {
  if (sizes.empty() || n_seeds == 0) throw ValidationError("/sizes", "need at least one size and one seed");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] > pool.size())
      throw ValidationError("/sizes/" + std::to_string(i), "must lie in [1, " + std::to_string(pool.size()) + "]");
    if (i && sizes[i] <= sizes[i - 1]) throw ValidationError("/sizes/" + std::to_string(i), "sizes must ascend");
  }
  struct Cell {
    std::size_t method, size, seed;
  };
  std::vector<Cell> cells;
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (auto z : sizes)
      for (std::size_t s = 0; s < n_seeds; ++s) cells.push_back({m, z, s});
  std::vector<SeedRun> runs(cells.size());
  parallel_for(cells.size(), opts.jobs, [&](std::size_t c) {
    const auto& cell = cells[c];
    auto sub = seq::subsample_indices(ds, pool, cell.size, derive_seed(seed, {sid(Stream::kScaling), cell.size, cell.seed}));
    EvalOptions o = opts;
    o.tag = "scaling:" + std::to_string(cell.size);
    runs[c] = train_seed(ds, std::move(sub), methods[cell.method].first, methods[cell.method].second, seed, cell.seed, o);
  });
  score_on_test(ds, test, runs, opts.jobs);
  std::vector<stats::RunRecord> out;
  for (auto& r : runs) out.push_back(std::move(r.record));
  return out;
}

std::string scaling_csv(const std::vector<stats::RunRecord>& records) {
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> cells;
  for (const auto& r : records) {
    if (r.failed || r.tag.rfind("scaling:", 0) != 0) continue;
    auto it = r.split_metrics.find("test");
    if (it == r.split_metrics.end()) continue;
    cells[{r.method, std::stoul(r.tag.substr(8))}].push_back(it->second);
  }
  std::ostringstream out;
  out << "method,size,mean,std,n\n";
  for (const auto& [key, v] : cells) {
    const double sd = stats::stddev(v);
    out << key.first << ',' << key.second << ',' << seq::format_double(stats::mean(v)) << ','
        << (std::isnan(sd) ? std::string("NA") : seq::format_double(sd)) << ',' << v.size() << '\n';
  }
  return out.str();
}

std::vector<std::pair<std::string, double>> param_importance(const std::vector<Trial>& trials) {
  std::vector<const Trial*> done;
  for (const auto& t : trials)
    if (t.state == TrialState::kCompleted && std::isfinite(t.hpo_val_metric)) done.push_back(&t);
  if (done.size() < 20)
    throw Error("param_importance: need at least 20 completed trials, got " + std::to_string(done.size()));
  std::vector<double> y;
  for (const auto* t : done) y.push_back(t->hpo_val_metric);
  std::map<std::string, bool> names;
  for (const auto* t : done)
    for (const auto& [k, v] : t->params) names[k] = true;
  std::vector<std::pair<std::string, double>> out;
  double total = 0.0;
  for (const auto& [name, unused] : names) {
    std::vector<json> vals;
    bool numeric = true;
    for (const auto* t : done) {
      auto it = t->params.find(name);
      vals.push_back(it == t->params.end() ? json(nullptr) : it->second);
      numeric = numeric && vals.back().is_number();
    }
    std::vector<double> x;
    if (numeric) {
      for (const auto& v : vals) x.push_back(v.get<double>());
    } else {
      std::map<std::string, std::pair<double, std::size_t>> level;
      for (std::size_t i = 0; i < vals.size(); ++i) {
        auto& l = level[vals[i].dump()];
        l.first += y[i];
        ++l.second;
      }
      for (const auto& v : vals) {
        const auto& l = level[v.dump()];
        x.push_back(l.first / static_cast<double>(l.second));
      }
    }
    const double rho = stats::spearman(x, y);
    const double imp = std::isnan(rho) ? 0.0 : std::abs(rho);
    out.emplace_back(name, imp);
    total += imp;
  }
  if (total > 0.0)
    for (auto& [name, v] : out) v /= total;
  return out;
}

}  // namespace evseq::hpo
