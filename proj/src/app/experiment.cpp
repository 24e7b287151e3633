#include "app/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "common/log.hpp"
#include "seq/io.hpp"
#include "seq/preprocess.hpp"
#include "stats/tests.hpp"

namespace evseq::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& ptr, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ValidationError(ptr.empty() ? "/" : ptr, "must be an object");
  for (const auto& [key, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError(ptr + "/" + key, "unknown key");
  }
}

double real_field(const json& j, const char* key, const std::string& ptr, double def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) throw ValidationError(ptr + "/" + key, "must be a number");
  return j[key].get<double>();
}

std::size_t count_field(const json& j, const char* key, const std::string& ptr, std::size_t def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_unsigned()) throw ValidationError(ptr + "/" + key, "must be a non-negative integer");
  return j[key].get<std::size_t>();
}

std::array<double, 2> range_field(const json& j, const char* key, const std::string& ptr, std::array<double, 2> def) {
  if (!j.contains(key)) return def;
  const auto& v = j[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number() || v[0].get<double>() > v[1].get<double>())
    throw ValidationError(ptr + "/" + key, "must be an ascending pair of numbers");
  return {v[0].get<double>(), v[1].get<double>()};
}

std::vector<std::string> string_list(const json& j, const char* key, const std::string& ptr) {
  std::vector<std::string> out;
  if (!j.contains(key)) return out;
  if (!j[key].is_array()) throw ValidationError(ptr + "/" + key, "must be an array of strings");
  for (std::size_t i = 0; i < j[key].size(); ++i) {
    if (!j[key][i].is_string()) throw ValidationError(ptr + "/" + key + "/" + std::to_string(i), "must be a string");
    out.push_back(j[key][i].get<std::string>());
  }
  return out;
}

}  // namespace

synth::SynthConfig synth_from_json(const json& j, const std::string& ptr) {
  check_keys(j, ptr,
             {"kind", "n_sequences", "target_points", "alpha", "beta", "end_time_range", "b_range", "L_range",
              "theta0_range", "omega0_range", "mass", "drop_prob", "seed"});
  synth::SynthConfig c;
  c.n_sequences = count_field(j, "n_sequences", ptr, c.n_sequences);
  c.target_points = real_field(j, "target_points", ptr, c.target_points);
  c.alpha = real_field(j, "alpha", ptr, c.alpha);
  c.beta = real_field(j, "beta", ptr, c.beta);
  c.end_time_range = range_field(j, "end_time_range", ptr, c.end_time_range);
  c.b_range = range_field(j, "b_range", ptr, c.b_range);
  c.L_range = range_field(j, "L_range", ptr, c.L_range);
  c.theta0_range = range_field(j, "theta0_range", ptr, c.theta0_range);
  c.omega0_range = range_field(j, "omega0_range", ptr, c.omega0_range);
  c.mass = real_field(j, "mass", ptr, c.mass);
  c.drop_prob = real_field(j, "drop_prob", ptr, c.drop_prob);
  c.seed = count_field(j, "seed", ptr, c.seed);
  try {
    c.validate();
  } catch (const ValidationError&) {
    throw;
  } catch (const Error& e) {
    throw ValidationError(ptr, e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const fs::path& base_dir,
                                         std::optional<std::uint64_t> seed_override) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("/", std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "", {"seed", "dataset", "split", "methods", "protocol", "stress", "scaling"});
  if (seed_override) j["seed"] = *seed_override;
  if (!j.contains("seed")) throw ValidationError("/seed", "is required");
  ExperimentConfig c;
  c.seed = count_field(j, "seed", "", 0);

  if (!j.contains("dataset")) throw ValidationError("/dataset", "is required");
  const json& d = j["dataset"];
  check_keys(d, "/dataset", {"name", "path", "schema", "synth"});
  if (d.contains("synth") == d.contains("path"))
    throw ValidationError("/dataset", "needs exactly one of \"path\" or \"synth\"");
  if (d.contains("synth")) {
    const json& s = d["synth"];
    if (!s.is_object()) throw ValidationError("/dataset/synth", "must be an object");
    c.dataset.synth_kind = s.value("kind", std::string("pendulum"));
    if (c.dataset.synth_kind != "pendulum" && c.dataset.synth_kind != "time-irrelevant")
      throw ValidationError("/dataset/synth/kind", "must be \"pendulum\" or \"time-irrelevant\"");
    json sj = s;
    if (!sj.contains("seed")) sj["seed"] = c.seed;
    c.dataset.synth = synth_from_json(sj, "/dataset/synth");
    c.dataset.name = c.dataset.synth_kind;
  } else {
    if (!d["path"].is_string()) throw ValidationError("/dataset/path", "must be a string");
    if (!d.contains("schema") || !d["schema"].is_string()) throw ValidationError("/dataset/schema", "must be a string");
    c.dataset.path = base_dir / d["path"].get<std::string>();
    c.dataset.schema = base_dir / d["schema"].get<std::string>();
    if (!fs::exists(c.dataset.path)) throw ValidationError("/dataset/path", "file not found: " + c.dataset.path.string());
    if (!fs::exists(c.dataset.schema))
      throw ValidationError("/dataset/schema", "file not found: " + c.dataset.schema.string());
    c.dataset.name = c.dataset.path.stem().string();
  }
  if (d.contains("name")) {
    if (!d["name"].is_string()) throw ValidationError("/dataset/name", "must be a string");
    c.dataset.name = d["name"].get<std::string>();
  }

  if (j.contains("split")) {
    const json& s = j["split"];
    check_keys(s, "/split", {"test", "train", "train_val", "hpo_val"});
    c.test_fraction = real_field(s, "test", "/split", c.test_fraction);
    c.train = real_field(s, "train", "/split", c.train);
    c.train_val = real_field(s, "train_val", "/split", c.train_val);
    c.hpo_val = real_field(s, "hpo_val", "/split", c.hpo_val);
  }
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ValidationError("/split/test", "must lie in (0, 1)");
  if (!(c.train > 0.0 && c.train_val > 0.0 && c.hpo_val >= 0.0) ||
      std::abs(c.train + c.train_val + c.hpo_val - 1.0) > 1e-9)
    throw ValidationError("/split", "train, train_val and hpo_val must be positive and sum to 1");

  if (!j.contains("methods") || !j["methods"].is_array() || j["methods"].empty())
    throw ValidationError("/methods", "must be a non-empty array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < j["methods"].size(); ++i) {
    const std::string ptr = "/methods/" + std::to_string(i);
    const json& m = j["methods"][i];
    check_keys(m, ptr, {"name", "encoder", "train", "coles", "coles_epochs", "coles_margin", "freeze_encoder", "space",
                        "params"});
    MethodEntry e;
    e.spec = hpo::MethodSpec::from_json(m, ptr);
    if (!names.insert(e.spec.name).second) throw ValidationError(ptr + "/name", "duplicate method name");
    if (m.contains("space")) {
      e.space = hpo::ParamSpace::from_json(m["space"], ptr + "/space");
      // Every bound and choice must be accepted by the method's configs.
      for (const auto& def : e.space->params()) {
        std::vector<json> probes;
        if (auto* cat = std::get_if<hpo::Categorical>(&def.domain)) probes = cat->choices;
        if (auto* r = std::get_if<hpo::RealRange>(&def.domain)) probes = {r->lo, r->hi};
        if (auto* r = std::get_if<hpo::IntRange>(&def.domain)) probes = {r->lo, r->hi};
        for (const auto& v : probes) {
          try {
            hpo::apply_assignment(e.spec, {{def.name, v}});
          } catch (const Error& err) {
            throw ValidationError(ptr + "/space/" + def.name, err.what());
          }
        }
      }
    }
    if (m.contains("params")) {
      if (!m["params"].is_object()) throw ValidationError(ptr + "/params", "must be an object");
      for (const auto& [k, v] : m["params"].items()) e.params[k] = v;
      try {
        hpo::apply_assignment(e.spec, e.params);
      } catch (const ValidationError& err) {
        throw ValidationError(ptr + "/params", err.what());
      }
    }
    c.methods.push_back(std::move(e));
  }

  if (j.contains("protocol")) {
    const json& p = j["protocol"];
    check_keys(p, "/protocol", {"n_hpo", "n_seeds", "tpe"});
    c.n_hpo = count_field(p, "n_hpo", "/protocol", c.n_hpo);
    c.n_seeds = count_field(p, "n_seeds", "/protocol", c.n_seeds);
    if (p.contains("tpe")) {
      const json& t = p["tpe"];
      check_keys(t, "/protocol/tpe", {"gamma", "n_startup", "n_candidates", "bandwidth_floor"});
      c.tpe.gamma = real_field(t, "gamma", "/protocol/tpe", c.tpe.gamma);
      c.tpe.n_startup = count_field(t, "n_startup", "/protocol/tpe", c.tpe.n_startup);
      c.tpe.n_candidates = count_field(t, "n_candidates", "/protocol/tpe", c.tpe.n_candidates);
      c.tpe.bandwidth_floor = real_field(t, "bandwidth_floor", "/protocol/tpe", c.tpe.bandwidth_floor);
    }
  }
  if (c.n_hpo == 0) throw ValidationError("/protocol/n_hpo", "must be >= 1");
  if (c.n_seeds == 0) throw ValidationError("/protocol/n_seeds", "must be >= 1");
  c.tpe.validate("/protocol/tpe");

  if (j.contains("stress")) {
    const json& s = j["stress"];
    check_keys(s, "/stress", {"kinds", "retrain_permuted", "min_seeds", "time_ablation"});
    auto kinds = string_list(s, "kinds", "/stress");
    for (std::size_t i = 0; i < kinds.size(); ++i) {
      try {
        c.stress_kinds.push_back(stress::parse_stress_kind(kinds[i]));
      } catch (const Error& e) {
        throw ValidationError("/stress/kinds/" + std::to_string(i), e.what());
      }
    }
    c.retrain_permuted = string_list(s, "retrain_permuted", "/stress");
    for (std::size_t i = 0; i < c.retrain_permuted.size(); ++i)
      if (!names.count(c.retrain_permuted[i]))
        throw ValidationError("/stress/retrain_permuted/" + std::to_string(i), "names no configured method");
    c.stress_min_seeds = count_field(s, "min_seeds", "/stress", c.stress_min_seeds);
    if (s.contains("time_ablation")) {
      const json& a = s["time_ablation"];
      check_keys(a, "/stress/time_ablation", {"top_k", "seeds_per_trial"});
      c.time_ablation = true;
      c.ablation_top_k = count_field(a, "top_k", "/stress/time_ablation", c.ablation_top_k);
      c.ablation_seeds = count_field(a, "seeds_per_trial", "/stress/time_ablation", c.ablation_seeds);
      if (c.ablation_top_k == 0 || c.ablation_seeds == 0)
        throw ValidationError("/stress/time_ablation", "top_k and seeds_per_trial must be >= 1");
    }
  }

  if (j.contains("scaling")) {
    const json& s = j["scaling"];
    check_keys(s, "/scaling", {"sizes", "n_seeds"});
    if (!s.contains("sizes") || !s["sizes"].is_array() || s["sizes"].empty())
      throw ValidationError("/scaling/sizes", "must be a non-empty array");
    for (std::size_t i = 0; i < s["sizes"].size(); ++i) {
      const std::string ptr = "/scaling/sizes/" + std::to_string(i);
      if (!s["sizes"][i].is_number_unsigned() || s["sizes"][i].get<std::size_t>() == 0)
        throw ValidationError(ptr, "must be a positive integer");
      c.scaling_sizes.push_back(s["sizes"][i].get<std::size_t>());
      if (i && c.scaling_sizes[i] <= c.scaling_sizes[i - 1]) throw ValidationError(ptr, "sizes must ascend");
    }
    c.scaling_seeds = count_field(s, "n_seeds", "/scaling", c.scaling_seeds);
    if (c.scaling_seeds == 0) throw ValidationError("/scaling/n_seeds", "must be >= 1");
  }
  c.resolved = std::move(j);
  return c;
}

std::string ExperimentConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : resolved.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

const MethodEntry& ExperimentConfig::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.spec.name == name) return m;
  throw Error("no method named '" + name + "'");
}

Prepared prepare(const ExperimentConfig& cfg) {
  seq::Dataset raw;
  if (cfg.dataset.synth_kind == "pendulum") {
    raw = synth::generate_pendulum_dataset(cfg.dataset.synth);
  } else if (cfg.dataset.synth_kind == "time-irrelevant") {
    raw = synth::generate_time_irrelevant_dataset(cfg.dataset.synth.n_sequences, cfg.dataset.synth.seed);
  } else {
    raw = seq::ingest_jsonl(cfg.dataset.path.string(), seq::load_schema(cfg.dataset.schema.string()));
  }
  Prepared p;
  p.split = seq::holdout_split(raw, cfg.test_fraction, cfg.train, cfg.train_val, cfg.hpo_val, cfg.seed);
  p.pool = p.split.train;
  p.pool.insert(p.pool.end(), p.split.train_val.begin(), p.split.train_val.end());
  p.pool.insert(p.pool.end(), p.split.hpo_val.begin(), p.split.hpo_val.end());
  std::sort(p.pool.begin(), p.pool.end());
  p.ds = seq::preprocess(raw, p.pool);
  p.ds.audit = std::make_shared<seq::TargetAudit>(p.ds.size(), p.split.test);
  return p;
}

void write_new_file(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) throw IoError("refusing to overwrite '" + path.string() + "'");
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

namespace {

const std::vector<std::string> kStages = {"split", "hpo", "final-eval", "stress", "scaling"};

std::vector<fs::path> run_dirs(const fs::path& root, const std::string& hash) {
  std::vector<fs::path> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (e.is_directory() && name.rfind(hash + "-", 0) == 0) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool done(const fs::path& run, const std::string& stage) { return fs::exists(run / stage / "DONE"); }

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  return s.str();
}

fs::path new_run_dir(const ExperimentConfig& cfg, const fs::path& root) {
  const std::string base = cfg.hash() + "-" + utc_stamp();
  fs::path dir = root / base;
  for (int k = 2; fs::exists(dir); ++k) {
    std::ostringstream s;
    s << base << '-' << std::setw(2) << std::setfill('0') << k;
    dir = root / s.str();
  }
  fs::create_directories(dir);
  write_new_file(dir / "config.json", cfg.resolved.dump(2) + "\n");
  return dir;
}

// Newest run directory of this config holding a finished `stage`.
std::optional<fs::path> find_finished(const std::vector<fs::path>& dirs, const std::string& stage) {
  for (auto it = dirs.rbegin(); it != dirs.rend(); ++it)
    if (done(*it, stage)) return *it;
  return std::nullopt;
}

std::string split_json(const seq::SplitAssignment& s) {
  json j{{"seed", s.seed}, {"train", s.train}, {"train_val", s.train_val}, {"hpo_val", s.hpo_val}, {"test", s.test}};
  return j.dump() + "\n";
}

void write_file(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// Fresh audit for a training phase; returns the violations it collected.
struct AuditPhase {
  seq::Dataset& ds;
  explicit AuditPhase(seq::Dataset& d, const seq::IndexSet& test) : ds(d) {
    ds.audit = std::make_shared<seq::TargetAudit>(ds.size(), test);
  }
};

void check_audit(const std::vector<std::string>& violations, const fs::path& file, const std::string& phase) {
  json j{{"phase", phase}, {"violations_before_scoring", violations}};
  std::ofstream out(file, std::ios::app | std::ios::binary);
  out << j.dump() << '\n';
  if (!violations.empty())
    throw Error(phase + ": " + std::to_string(violations.size()) + " test target read(s) before scoring, first " +
                violations.front());
}

hpo::Assignment best_params(const MethodEntry& m, const std::vector<fs::path>& dirs) {
  if (auto hdir = find_finished(dirs, "hpo")) {
    const fs::path best = *hdir / "hpo" / (m.spec.name + ".best.json");
    if (fs::exists(best)) {
      hpo::Assignment a;
      for (const auto& [k, v] : json::parse(read_file(best)).at("params").items()) a[k] = v;
      return a;
    }
  }
  return m.params;
}

std::string record_lines(const std::vector<stats::RunRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json() + "\n";
  return out;
}

void stage_split(const ExperimentConfig&, Prepared& p, const fs::path& dir) {
  write_file(dir / "split.json", split_json(p.split));
}

void stage_hpo(const ExperimentConfig& cfg, Prepared& p, const fs::path& dir, const RunOptions& opts) {
  bool any = false;
  for (const auto& m : cfg.methods) {
    if (!m.space) continue;
    any = true;
    hpo::HpoOptions ho;
    ho.tpe = cfg.tpe;
    ho.log_path = (dir / (m.spec.name + ".trials.jsonl")).string();
    ho.resume = opts.resume;
    auto res = hpo::hpo_run(p.ds, p.split, m.spec, *m.space, cfg.n_hpo, cfg.seed, ho);
    json best{{"method", m.spec.name},
              {"trial", res.best_trial},
              {"hpo_val", res.trials[res.best_trial].hpo_val_metric},
              {"params", json(res.best_params)}};
    try {
      json imp = json::object();
      for (const auto& [name, v] : hpo::param_importance(res.trials)) imp[name] = v;
      best["importance"] = imp;
    } catch (const Error& e) {
      log::info(std::string("importance skipped: ") + e.what());
    }
    write_file(dir / (m.spec.name + ".best.json"), best.dump(2) + "\n");
  }
  if (!any) throw ValidationError("/methods", "no method declares a search space");
  check_audit(p.ds.audit->violations(), dir / "audit.jsonl", "hpo");
}

void stage_final_eval(const ExperimentConfig& cfg, Prepared& p, const fs::path& dir, const RunOptions& opts,
                      const std::vector<fs::path>& dirs) {
  std::vector<stats::RunRecord> all;
  for (const auto& m : cfg.methods) {
    AuditPhase phase(p.ds, p.split.test);
    hpo::EvalOptions eo;
    eo.dataset_name = cfg.dataset.name;
    eo.jobs = opts.jobs;
    eo.keep_models = true;
    // Violations are only recorded while scoring is closed, i.e. during training.
    auto res = hpo::final_eval(p.ds, p.pool, p.split.test, m.spec, best_params(m, dirs), cfg.n_seeds, cfg.seed, eo);
    check_audit(p.ds.audit->violations(), dir / "audit.jsonl", "final-eval:" + m.spec.name);
    fs::create_directories(dir / "models" / m.spec.name);
    for (std::size_t s = 0; s < res.models.size(); ++s)
      if (res.models[s])
        models::save_checkpoint(*res.models[s],
                                (dir / "models" / m.spec.name / ("seed-" + std::to_string(s) + ".evsm")).string());
    all.insert(all.end(), res.records.begin(), res.records.end());
  }
  write_file(dir / "records.jsonl", record_lines(all));
  auto per = stats::metrics_by_method(all);
  bool comparable = per.size() >= 2;
  for (const auto& [name, v] : per) comparable = comparable && v.size() >= 2;
  if (comparable) {
    auto rep = stats::rank_groups(per);
    rep.dataset = cfg.dataset.name;
    rep.metric = all.front().metric_name;
    write_file(dir / "comparison.csv", stats::report_csv(rep));
    write_file(dir / "comparison.md", stats::report_markdown({rep}));
  }
  try {
    write_file(dir / "correlation.csv", stats::correlation_csv(stats::subset_correlation(all)));
  } catch (const Error& e) {
    log::info(std::string("subset correlation skipped: ") + e.what());
  }
}

void stage_stress(const ExperimentConfig& cfg, Prepared& p, const fs::path& dir, const RunOptions& opts,
                  const std::vector<fs::path>& dirs) {
  auto fe = find_finished(dirs, "final-eval");
  if (!fe) throw Error("stress needs a finished final-eval stage for this config");
  const auto vanilla = stats::read_records((*fe / "final-eval" / "records.jsonl").string());
  stress::StressReport retrain;
  std::string ablation_csv;
  for (const auto& name : cfg.retrain_permuted) {
    AuditPhase phase(p.ds, p.split.test);
    hpo::EvalOptions eo;
    eo.dataset_name = cfg.dataset.name;
    eo.jobs = opts.jobs;
    const auto& m = cfg.method(name);
    auto r = stress::retrain_permuted(p.ds, p.pool, p.split.test, m.spec, best_params(m, dirs), vanilla, cfg.n_seeds,
                                      cfg.seed, eo);
    check_audit(p.ds.audit->violations(), dir / "audit.jsonl", "retrain-permuted:" + name);
    retrain.rows.push_back(r.row);
    write_file(dir / ("retrain-" + name + ".jsonl"), record_lines(r.permuted.records));
  }
  if (cfg.time_ablation) {
    auto hdir = find_finished(dirs, "hpo");
    if (!hdir) throw Error("time ablation needs a finished hpo stage for this config");
    for (const auto& m : cfg.methods) {
      if (!m.space || !m.space->find("time_mode")) continue;
      AuditPhase phase(p.ds, p.split.test);
      auto trials = hpo::read_trial_log((*hdir / "hpo" / (m.spec.name + ".trials.jsonl")).string());
      hpo::EvalOptions eo;
      eo.dataset_name = cfg.dataset.name;
      eo.jobs = opts.jobs;
      auto rep = stress::time_ablation(p.ds, p.pool, p.split.test, m.spec, trials, cfg.ablation_top_k,
                                       cfg.ablation_seeds, cfg.seed, eo);
      check_audit(p.ds.audit->violations(), dir / "audit.jsonl", "time-ablation:" + m.spec.name);
      ablation_csv += ablation_csv.empty() ? rep.csv() : rep.csv().substr(rep.csv().find('\n') + 1);
    }
  }
  // Remaining work only scores already trained models.
  AuditPhase phase(p.ds, p.split.test);
  p.ds.audit->open_scoring();
  stress::StressReport all;
  std::map<std::string, std::vector<std::optional<models::TrainedModel>>> loaded;
  for (const auto& m : cfg.methods) {
    auto& v = loaded[m.spec.name];
    for (std::size_t s = 0; s < cfg.n_seeds; ++s) {
      const fs::path f = *fe / "final-eval" / "models" / m.spec.name / ("seed-" + std::to_string(s) + ".evsm");
      v.push_back(fs::exists(f) ? std::optional(models::load_checkpoint(f.string())) : std::nullopt);
    }
  }
  for (auto kind : cfg.stress_kinds) {
    std::vector<stress::StressInput> inputs;
    for (const auto& m : cfg.methods) {
      const auto& v = loaded[m.spec.name];
      const bool uses_time = std::any_of(v.begin(), v.end(), [](const auto& x) {
        return x && x->model.config().time_mode != models::TimeMode::kNone;
      });
      if (kind == stress::StressKind::kRandomTimestamps && !uses_time) continue;
      inputs.push_back({m.spec.name, cfg.dataset.name, &v});
    }
    if (inputs.empty()) continue;
    auto rep = stress::stress_eval(inputs, p.ds, p.split.test, kind, cfg.seed, opts.jobs, cfg.stress_min_seeds);
    all.metric = rep.metric;
    all.rows.insert(all.rows.end(), rep.rows.begin(), rep.rows.end());
  }
  for (auto& r : retrain.rows) all.rows.push_back(r);
  if (!all.rows.empty()) {
    write_file(dir / "stress.csv", all.csv());
    write_file(dir / "stress.md", all.markdown());
  }
  if (!ablation_csv.empty()) write_file(dir / "ablation.csv", ablation_csv);
}

void stage_scaling(const ExperimentConfig& cfg, Prepared& p, const fs::path& dir, const RunOptions& opts,
                   const std::vector<fs::path>& dirs) {
  if (cfg.scaling_sizes.empty()) throw ValidationError("/scaling", "is required for the scaling stage");
  if (cfg.scaling_sizes.back() > p.pool.size())
    throw ValidationError("/scaling/sizes", "largest size exceeds the " + std::to_string(p.pool.size()) +
                                                "-sequence non-test pool");
  std::vector<std::pair<hpo::MethodSpec, hpo::Assignment>> methods;
  for (const auto& m : cfg.methods) methods.emplace_back(m.spec, best_params(m, dirs));
  hpo::EvalOptions eo;
  eo.dataset_name = cfg.dataset.name;
  eo.jobs = opts.jobs;
  auto records = hpo::scaling_study(p.ds, p.pool, p.split.test, methods, cfg.scaling_sizes, cfg.scaling_seeds,
                                    cfg.seed, eo);
  check_audit({}, dir / "audit.jsonl", "scaling");
  write_file(dir / "records.jsonl", record_lines(records));
  write_file(dir / "scaling.csv", hpo::scaling_csv(records));
}

}  // namespace

fs::path run_stage(const std::string& stage, const ExperimentConfig& cfg, const fs::path& out_root,
                   const RunOptions& opts) {
  if (std::find(kStages.begin(), kStages.end(), stage) == kStages.end())
    throw ValidationError("/stage", "unknown stage '" + stage + "'");
  const auto hash = cfg.hash();
  auto dirs = run_dirs(out_root, hash);
  std::optional<fs::path> run;
  if (opts.resume)
    for (auto it = dirs.rbegin(); it != dirs.rend() && !run; ++it)
      if (fs::exists(*it / stage) && !done(*it, stage)) run = *it;
  if (!run && !dirs.empty() && !fs::exists(dirs.back() / stage)) run = dirs.back();
  if (!run) {
    run = new_run_dir(cfg, out_root);
    dirs.push_back(*run);
  }
  const fs::path dir = *run / stage;
  fs::create_directories(dir);
  log::info("stage " + stage + " in " + run->string());
  Prepared p = prepare(cfg);
  if (stage == "split") stage_split(cfg, p, dir);
  if (stage == "hpo") stage_hpo(cfg, p, dir, opts);
  if (stage == "final-eval") stage_final_eval(cfg, p, dir, opts, dirs);
  if (stage == "stress") stage_stress(cfg, p, dir, opts, dirs);
  if (stage == "scaling") stage_scaling(cfg, p, dir, opts, dirs);
  write_new_file(dir / "DONE", "");
  return *run;
}

namespace {

std::string csv_to_markdown(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string row = "|";
    std::size_t cols = 0, pos = 0;
    for (;;) {
      auto next = line.find(',', pos);
      row += " " + line.substr(pos, next == std::string::npos ? std::string::npos : next - pos) + " |";
      ++cols;
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    out += row + "\n";
    if (header) {
      out += "|";
      for (std::size_t c = 0; c < cols; ++c) out += "---|";
      out += "\n";
      header = false;
    }
  }
  return out;
}

void section(std::string& out, const fs::path& file, const std::string& title, bool csv) {
  if (!fs::exists(file)) return;
  out += "\n## " + title + "\n\n";
  out += csv ? csv_to_markdown(read_file(file)) : read_file(file);
}

}  // namespace

std::string render_report(const fs::path& run_dir) {
  if (!fs::exists(run_dir / "config.json")) throw IoError("'" + run_dir.string() + "' is not a run directory");
  const json cfg = json::parse(read_file(run_dir / "config.json"));
  std::string out = "# Run " + run_dir.filename().string() + "\n\n";
  out += "seed " + cfg.at("seed").dump() + "\n\nstages:";
  for (const auto& s : kStages)
    if (done(run_dir, s)) out += " " + s;
  out += "\n";
  if (done(run_dir, "hpo")) {
    std::vector<fs::path> bests;
    for (const auto& e : fs::directory_iterator(run_dir / "hpo"))
      if (e.path().string().size() > 10 && e.path().filename().string().find(".best.json") != std::string::npos)
        bests.push_back(e.path());
    std::sort(bests.begin(), bests.end());
    out += "\n## Best hyperparameters\n\n| Method | Trial | hpo-val | Params |\n|---|---|---|---|\n";
    for (const auto& b : bests) {
      const json j = json::parse(read_file(b));
      out += "| " + j.at("method").get<std::string>() + " | " + j.at("trial").dump() + " | " +
             stats::format_fixed(j.at("hpo_val").get<double>()) + " | `" + j.at("params").dump() + "` |\n";
    }
  }
  if (done(run_dir, "final-eval")) {
    section(out, run_dir / "final-eval" / "comparison.md", "Final evaluation", false);
    if (!fs::exists(run_dir / "final-eval" / "comparison.md")) {
      const auto recs = stats::read_records((run_dir / "final-eval" / "records.jsonl").string());
      out += "\n## Final evaluation\n\n| Method | Mean | Std | n |\n|---|---|---|---|\n";
      for (const auto& [name, v] : stats::metrics_by_method(recs)) {
        const double sd = stats::stddev(v);
        out += "| " + name + " | " + stats::format_fixed(stats::mean(v)) + " | " +
               (std::isnan(sd) ? std::string("NA") : stats::format_fixed(sd)) + " | " + std::to_string(v.size()) +
               " |\n";
      }
    }
    section(out, run_dir / "final-eval" / "correlation.csv", "Subset correlation", true);
  }
  if (done(run_dir, "stress")) {
    section(out, run_dir / "stress" / "stress.md", "Stress tests", false);
    section(out, run_dir / "stress" / "ablation.csv", "Time ablation", true);
  }
  if (done(run_dir, "scaling")) section(out, run_dir / "scaling" / "scaling.csv", "Scaling", true);
  return out;
}

}  // namespace evseq::app
