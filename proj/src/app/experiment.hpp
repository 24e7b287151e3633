#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hpo/protocol.hpp"
#include "stress/stress.hpp"
#include "synth/pendulum.hpp"

namespace evseq::app {

struct DatasetSpec {
  std::string name;
  // Either a JSONL file plus schema, or a synthetic generator.
  std::filesystem::path path;
  std::filesystem::path schema;
  std::string synth_kind;  // "pendulum" | "time-irrelevant" | ""
  synth::SynthConfig synth;
};

struct MethodEntry {
  hpo::MethodSpec spec;
  std::optional<hpo::ParamSpace> space;  // tuned by `hpo` when present
  hpo::Assignment params;                // fixed overrides used without HPO results
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DatasetSpec dataset;
  double test_fraction = 0.2;
  double train = 0.70, train_val = 0.15, hpo_val = 0.15;
  std::vector<MethodEntry> methods;
  std::size_t n_hpo = 50;
  std::size_t n_seeds = 20;
  hpo::TPEConfig tpe;
  std::vector<stress::StressKind> stress_kinds;
  std::vector<std::string> retrain_permuted;
  std::size_t stress_min_seeds = 10;
  bool time_ablation = false;
  std::size_t ablation_top_k = 3;
  std::size_t ablation_seeds = 3;
  std::vector<std::size_t> scaling_sizes;
  std::size_t scaling_seeds = 3;
  // Resolved config (seed override applied), echoed into run directories.
  nlohmann::json resolved;

  // Relative paths resolve against base_dir. Throws ValidationError with a
  // JSON pointer; the seed is mandatory unless seed_override is given.
  static ExperimentConfig parse(const std::string& text, const std::filesystem::path& base_dir,
                                std::optional<std::uint64_t> seed_override = std::nullopt);
  // 16 hex digits of FNV-1a over the canonical resolved config.
  std::string hash() const;
  const MethodEntry& method(const std::string& name) const;
};

synth::SynthConfig synth_from_json(const nlohmann::json& j, const std::string& pointer);

// Loaded, split, preprocessed dataset with the test targets audited.
struct Prepared {
  seq::Dataset ds;
  seq::SplitAssignment split;
  seq::IndexSet pool;  // train + train-val + hpo-val
};
Prepared prepare(const ExperimentConfig& cfg);

struct RunOptions {
  int jobs = 1;
  bool resume = false;
};

// Runs one stage ("split", "hpo", "final-eval", "stress", "scaling") under
// out_root/<hash>-<UTC stamp>/<stage>/ and returns the run directory. A stage
// reuses the newest run directory of the same config that lacks it (with
// --resume: the newest one holding an unfinished attempt); otherwise a new
// stamped directory is created. Finished stages are never written again.
std::filesystem::path run_stage(const std::string& stage, const ExperimentConfig& cfg,
                                const std::filesystem::path& out_root, const RunOptions& opts);

// Markdown summary of every finished stage in a run directory.
std::string render_report(const std::filesystem::path& run_dir);

// Creates `path` with `content`; throws IoError when it already exists.
void write_new_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace evseq::app
