// Command-line front end over the evseq C API.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evseq/evseq.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  int code;
};

int exit_code(evseq_status s) {
  return s == EVSEQ_ERR_VALIDATION || s == EVSEQ_ERR_ARGUMENT ? kExitValidation : kExitRuntime;
}

void check(evseq_status s) {
  if (s == EVSEQ_OK) return;
  const std::string ptr = evseq_last_error_pointer();
  std::cerr << "evbench: " << evseq_status_name(s) << ": " << evseq_last_error() << '\n';
  if (s == EVSEQ_ERR_VALIDATION && !ptr.empty()) std::cerr << "  at " << ptr << '\n';
  throw Failure{exit_code(s)};
}

struct Owned {
  char* p = nullptr;
  ~Owned() { evseq_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "evbench: cannot read '" << path << "'\n";
    throw Failure{kExitValidation};
  }
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_new(const fs::path& path, const std::string& content) {
  if (fs::exists(path)) {
    std::cerr << "evbench: refusing to overwrite '" << path.string() << "'\n";
    throw Failure{kExitRuntime};
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
}

struct Common {
  std::string config;
  std::string out = "runs";
  std::optional<std::uint64_t> seed;
  int jobs = 0;
  bool resume = false;
};

void add_common(CLI::App* sub, Common& c, bool with_resume) {
  sub->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", c.out, "Root directory for run directories")->capture_default_str();
  sub->add_option("--seed", c.seed, "Override the config's master seed");
  sub->add_option("--jobs", c.jobs, "Worker threads (default: every core)");
  if (with_resume) sub->add_flag("--resume", c.resume, "Continue the newest unfinished attempt of this stage");
}

int run_stage(const std::string& stage, const Common& c) {
  const std::string text = slurp(c.config);
  const std::string base = fs::absolute(c.config).parent_path().string();
  const std::int64_t seed = c.seed ? static_cast<std::int64_t>(*c.seed) : -1;
  Owned resolved;
  check(evseq_config_check(text.c_str(), base.c_str(), seed, &resolved.p));
  std::cout << "resolved config:\n" << resolved.str() << '\n';
  evseq_run_options opts{c.jobs, c.resume ? 1 : 0, seed};
  Owned dir;
  check(evseq_experiment_run(stage.c_str(), text.c_str(), base.c_str(), c.out.c_str(), &opts, &dir.p));
  std::cout << stage << " finished: " << dir.str() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-sequence assessment benchmark"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate-pendulum", "Generate a synthetic Pendulum dataset");
  std::size_t gen_n = 1000;
  std::uint64_t gen_seed = 0;
  std::string gen_out = ".", gen_config, gen_kind = "pendulum";
  gen->add_option("--n", gen_n, "Number of sequences")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--config", gen_config, "Generator settings (JSON object)")->check(CLI::ExistingFile);
  gen->add_option("--kind", gen_kind, "pendulum or time-irrelevant")->capture_default_str();

  auto* ingest = app.add_subcommand("ingest", "Validate a JSONL dataset and write its canonical form");
  std::string in_data, in_schema, in_out;
  ingest->add_option("--data", in_data, "Dataset JSONL")->required()->check(CLI::ExistingFile);
  ingest->add_option("--schema", in_schema, "Feature schema JSON")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", in_out, "Output directory (omit to only validate)");

  Common split_c, hpo_c, eval_c, stress_c, scaling_c;
  add_common(app.add_subcommand("split", "Write the stratified split of an experiment"), split_c, false);
  add_common(app.add_subcommand("hpo", "Run TPE hyperparameter search"), hpo_c, true);
  add_common(app.add_subcommand("final-eval", "Monte-Carlo evaluation with the best hyperparameters"), eval_c, true);
  add_common(app.add_subcommand("stress", "Permutation, timestamp and ablation stress tests"), stress_c, true);
  add_common(app.add_subcommand("scaling", "Train on growing subsets"), scaling_c, true);

  auto* compare = app.add_subcommand("compare", "Rank methods from accumulated run records");
  std::vector<std::string> cmp_records;
  std::string cmp_out;
  compare->add_option("--records", cmp_records, "RunRecord JSONL files")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", cmp_out, "Directory for comparison.md/.csv (omit to print)");

  auto* report = app.add_subcommand("report", "Render a run directory as markdown");
  std::string rep_run, rep_out;
  report->add_option("--run", rep_run, "Run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", rep_out, "Markdown file to create (omit to print)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (gen->parsed()) {
      nlohmann::json j = nlohmann::json::object();
      if (!gen_config.empty()) {
        try {
          j = nlohmann::json::parse(slurp(gen_config));
        } catch (const nlohmann::json::parse_error& e) {
          std::cerr << "evbench: " << gen_config << ": " << e.what() << '\n';
          return kExitValidation;
        }
      }
      if (gen->count("--n") || !j.contains("n_sequences")) j["n_sequences"] = gen_n;
      if (gen->count("--seed") || !j.contains("seed")) j["seed"] = gen_seed;
      if (gen->count("--kind") || !j.contains("kind")) j["kind"] = gen_kind;
      const fs::path data = fs::path(gen_out) / (j["kind"].get<std::string>() + ".jsonl");
      const fs::path schema = fs::path(gen_out) / "schema.json";
      fs::create_directories(gen_out);
      evseq_dataset* ds = nullptr;
      check(evseq_dataset_generate(j.dump().c_str(), &ds));
      std::unique_ptr<evseq_dataset, decltype(&evseq_dataset_free)> hold(ds, evseq_dataset_free);
      check(evseq_dataset_save(ds, data.string().c_str(), schema.string().c_str()));
      Owned st;
      check(evseq_dataset_stats(ds, &st.p));
      std::cout << data.string() << '\n' << st.str() << '\n';
      return 0;
    }
    if (ingest->parsed()) {
      evseq_dataset* ds = nullptr;
      std::size_t resorted = 0;
      check(evseq_dataset_load(in_data.c_str(), in_schema.c_str(), &ds, &resorted));
      std::unique_ptr<evseq_dataset, decltype(&evseq_dataset_free)> hold(ds, evseq_dataset_free);
      if (resorted) std::cerr << "evbench: " << resorted << " sequence(s) arrived unsorted and were reordered\n";
      if (!in_out.empty()) {
        fs::create_directories(in_out);
        const fs::path data = fs::path(in_out) / fs::path(in_data).filename();
        check(evseq_dataset_save(ds, data.string().c_str(), (fs::path(in_out) / "schema.json").string().c_str()));
        std::cout << data.string() << '\n';
      }
      Owned st;
      check(evseq_dataset_stats(ds, &st.p));
      std::cout << st.str() << '\n';
      return 0;
    }
    if (app.got_subcommand("split")) return run_stage("split", split_c);
    if (app.got_subcommand("hpo")) return run_stage("hpo", hpo_c);
    if (app.got_subcommand("final-eval")) return run_stage("final-eval", eval_c);
    if (app.got_subcommand("stress")) return run_stage("stress", stress_c);
    if (app.got_subcommand("scaling")) return run_stage("scaling", scaling_c);
    if (compare->parsed()) {
      std::vector<const char*> paths;
      for (const auto& p : cmp_records) paths.push_back(p.c_str());
      Owned md, csv, corr;
      check(evseq_compare(paths.data(), paths.size(), &md.p, &csv.p, &corr.p));
      if (cmp_out.empty()) {
        std::cout << md.str();
      } else {
        write_new(fs::path(cmp_out) / "comparison.md", md.str());
        write_new(fs::path(cmp_out) / "comparison.csv", csv.str());
        if (!corr.str().empty()) write_new(fs::path(cmp_out) / "correlation.csv", corr.str());
        std::cout << (fs::path(cmp_out) / "comparison.md").string() << '\n';
      }
      return 0;
    }
    if (report->parsed()) {
      Owned md;
      check(evseq_report(rep_run.c_str(), &md.p));
      if (rep_out.empty())
        std::cout << md.str();
      else
        write_new(rep_out, md.str());
      return 0;
    }
  } catch (const Failure& f) {
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "evbench: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
