#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "evseq/evseq.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Str {
  char* p = nullptr;
  ~Str() { evseq_string_free(p); }
  std::string s() const { return p ? p : ""; }
};

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("evseq_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// Exit status of evbench with `args`; output goes to `log`.
int evbench(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(EVBENCH_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

json small_config() {
  return json::parse(R"({
    "seed": 5,
    "dataset": {"synth": {"kind": "pendulum", "n_sequences": 160}},
    "methods": [
      {"name": "mlp", "encoder": {"kind": "mlp", "hidden": 4},
       "train": {"max_epochs": 2, "batch_size": 32},
       "space": {"lr": {"type": "real", "low": 1e-3, "high": 1e-2, "log": true}}},
      {"name": "gru", "encoder": {"kind": "gru", "hidden": 4, "time_mode": "absolute"},
       "train": {"max_epochs": 2, "batch_size": 32}}
    ],
    "protocol": {"n_hpo": 2, "n_seeds": 2},
    "stress": {"kinds": ["permute"], "min_seeds": 2}
  })");
}

}  // namespace

TEST_CASE("null handles and out-pointers are argument errors") {
  CHECK(evseq_dataset_generate(nullptr, nullptr) == EVSEQ_ERR_ARGUMENT);
  CHECK(std::string(evseq_last_error()).size() > 0);
  CHECK(evseq_dataset_stats(nullptr, nullptr) == EVSEQ_ERR_ARGUMENT);
  CHECK(evseq_model_info(nullptr, nullptr) == EVSEQ_ERR_ARGUMENT);
  CHECK(evseq_report(nullptr, nullptr) == EVSEQ_ERR_ARGUMENT);
  CHECK(evseq_dataset_size(nullptr) == 0);
  evseq_dataset_free(nullptr);
  evseq_model_free(nullptr);
  CHECK(std::string(evseq_status_name(EVSEQ_ERR_IO)) == "io error");
}

TEST_CASE("validation errors carry a JSON pointer and success clears the error") {
  evseq_dataset* ds = nullptr;
  CHECK(evseq_dataset_generate(R"({"n_sequences": 10, "b_range": [3, 1]})", &ds) == EVSEQ_ERR_VALIDATION);
  CHECK(std::string(evseq_last_error_pointer()).find("b_range") != std::string::npos);
  CHECK(ds == nullptr);
  CHECK(evseq_dataset_generate("{not json", &ds) == EVSEQ_ERR_VALIDATION);
  Str resolved;
  CHECK(evseq_config_check(R"({"dataset": {"synth": {}}, "methods": [{"name": "m"}]})", ".", -1, &resolved.p) ==
        EVSEQ_ERR_VALIDATION);
  CHECK(std::string(evseq_last_error_pointer()) == "/seed");
  CHECK(evseq_config_check(small_config().dump().c_str(), ".", -1, &resolved.p) == EVSEQ_OK);
  CHECK(std::string(evseq_last_error()).empty());
  CHECK(json::parse(resolved.s()).at("seed") == 5);
}

TEST_CASE("datasets generate, save, reload and split through the C API") {
  const auto dir = scratch("dataset");
  evseq_dataset* ds = nullptr;
  REQUIRE(evseq_dataset_generate(R"({"n_sequences": 50, "seed": 3})", &ds) == EVSEQ_OK);
  CHECK(evseq_dataset_size(ds) == 50);
  Str st;
  REQUIRE(evseq_dataset_stats(ds, &st.p) == EVSEQ_OK);
  CHECK(json::parse(st.s()).at("sequences") == 50);
  const auto data = (dir / "d.jsonl").string(), schema = (dir / "schema.json").string();
  REQUIRE(evseq_dataset_save(ds, data.c_str(), schema.c_str()) == EVSEQ_OK);
  CHECK(evseq_dataset_save(ds, data.c_str(), schema.c_str()) == EVSEQ_ERR_IO);  // never overwrites
  evseq_dataset* back = nullptr;
  std::size_t resorted = 99;
  REQUIRE(evseq_dataset_load(data.c_str(), schema.c_str(), &back, &resorted) == EVSEQ_OK);
  CHECK(resorted == 0);
  CHECK(evseq_dataset_size(back) == 50);
  Str a, b;
  REQUIRE(evseq_dataset_split(ds, 0.2, 0.7, 0.15, 0.15, 1, &a.p) == EVSEQ_OK);
  REQUIRE(evseq_dataset_split(back, 0.2, 0.7, 0.15, 0.15, 1, &b.p) == EVSEQ_OK);
  CHECK(a.s() == b.s());
  CHECK(json::parse(a.s()).at("test").size() == 10);
  evseq_dataset* missing = nullptr;
  CHECK(evseq_dataset_load((dir / "nope.jsonl").string().c_str(), schema.c_str(), &missing, nullptr) == EVSEQ_ERR_IO);
  put(dir / "bad.jsonl", "{\"id\": \"x\", \"t\": [1], \"target\": 1.0}\n{broken\n");
  CHECK(evseq_dataset_load((dir / "bad.jsonl").string().c_str(), schema.c_str(), &missing, nullptr) ==
        EVSEQ_ERR_PARSE);
  CHECK(std::string(evseq_last_error()).find("2") != std::string::npos);
  evseq_dataset_free(ds);
  evseq_dataset_free(back);
}

TEST_CASE("experiment stages run end to end, reproduce bit-identically and load as models") {
  const auto root = scratch("runs");
  const std::string cfg = small_config().dump();
  evseq_run_options opts{1, 0, -1};
  std::vector<std::string> dirs;
  for (const char* stage : {"split", "hpo", "final-eval", "stress"}) {
    Str dir;
    INFO(stage << ": " << evseq_last_error());
    REQUIRE(evseq_experiment_run(stage, cfg.c_str(), ".", root.string().c_str(), &opts, &dir.p) == EVSEQ_OK);
    dirs.push_back(dir.s());
  }
  // Every stage lands in the same run directory.
  for (const auto& d : dirs) CHECK(d == dirs.front());
  const fs::path run = dirs.front();
  for (const char* stage : {"hpo", "final-eval", "stress"}) CHECK(fs::exists(run / stage / "DONE"));
  // One audit line per phase that handles test targets; none may record a read.
  for (const char* stage : {"hpo", "final-eval"}) {
    std::istringstream lines(slurp(run / stage / "audit.jsonl"));
    int phases = 0;
    for (std::string line; std::getline(lines, line); ++phases)
      CHECK(json::parse(line).at("violations_before_scoring").empty());
    CHECK(phases >= 1);
  }
  CHECK(fs::exists(run / "stress" / "stress.csv"));
  Str md;
  REQUIRE(evseq_report(run.string().c_str(), &md.p) == EVSEQ_OK);
  CHECK(md.s().find("Final evaluation") != std::string::npos);

  // A second run under another root matches byte for byte.
  const auto root2 = scratch("runs2");
  for (const char* stage : {"split", "hpo", "final-eval"}) {
    Str dir;
    REQUIRE(evseq_experiment_run(stage, cfg.c_str(), ".", root2.string().c_str(), &opts, &dir.p) == EVSEQ_OK);
    if (std::string(stage) == "final-eval")
      CHECK(slurp(fs::path(dir.s()) / "final-eval" / "records.jsonl") == slurp(run / "final-eval" / "records.jsonl"));
  }

  // Checkpoints load and predict on a freshly generated copy of the dataset.
  evseq_model* m = nullptr;
  REQUIRE(evseq_model_load((run / "final-eval" / "models" / "gru" / "seed-0.evsm").string().c_str(), &m) == EVSEQ_OK);
  Str info;
  REQUIRE(evseq_model_info(m, &info.p) == EVSEQ_OK);
  CHECK(json::parse(info.s()).at("encoder").at("kind") == "gru");
  evseq_dataset* ds = nullptr;
  REQUIRE(evseq_dataset_generate(R"({"n_sequences": 160, "seed": 5})", &ds) == EVSEQ_OK);
  const std::size_t idx[] = {0, 1, 2};
  double out[3];
  std::size_t cols = 0;
  REQUIRE(evseq_model_predict(m, ds, idx, 3, out, 3, &cols) == EVSEQ_OK);
  CHECK(cols == 1);
  CHECK(evseq_model_predict(m, ds, idx, 3, out, 2, &cols) == EVSEQ_ERR_ARGUMENT);
  const std::size_t bad[] = {1000};
  CHECK(evseq_model_predict(m, ds, bad, 1, out, 3, &cols) == EVSEQ_ERR_ARGUMENT);
  evseq_model_free(m);
  evseq_dataset_free(ds);
  CHECK(evseq_model_load((root / "missing.evsm").string().c_str(), &m) == EVSEQ_ERR_IO);

  // compare ranks the methods from the accumulated records.
  const std::string rec = (run / "final-eval" / "records.jsonl").string();
  const char* paths[] = {rec.c_str()};
  Str cmd, csv, corr;
  REQUIRE(evseq_compare(paths, 1, &cmd.p, &csv.p, &corr.p) == EVSEQ_OK);
  CHECK(cmd.s().find("gru") != std::string::npos);
  CHECK(cmd.s().find("mlp") != std::string::npos);
  CHECK(evseq_compare(paths, 0, &cmd.p, nullptr, nullptr) == EVSEQ_ERR_ARGUMENT);
}

TEST_CASE("unknown stages are runtime errors") {
  const auto root = scratch("stage");
  Str dir;
  CHECK(evseq_experiment_run("train", small_config().dump().c_str(), ".", root.string().c_str(), nullptr, &dir.p) !=
        EVSEQ_OK);
}

TEST_CASE("evbench exit codes: 0 on success, 1 on validation, 2 on runtime failure") {
  const auto dir = scratch("cli");
  const auto log = dir / "log.txt";
  CHECK(evbench("generate-pendulum --n 40 --seed 7 --out " + (dir / "a").string(), log) == 0);
  CHECK(evbench("generate-pendulum --n 40 --seed 7 --out " + (dir / "b").string(), log) == 0);
  CHECK(slurp(dir / "a" / "pendulum.jsonl") == slurp(dir / "b" / "pendulum.jsonl"));
  CHECK(slurp(dir / "a" / "schema.json") == slurp(dir / "b" / "schema.json"));
  // Generating into the same place again would overwrite.
  CHECK(evbench("generate-pendulum --n 40 --seed 7 --out " + (dir / "a").string(), log) == 2);

  CHECK(evbench("ingest --data " + (dir / "a" / "pendulum.jsonl").string() + " --schema " +
                    (dir / "a" / "schema.json").string(),
                log) == 0);
  put(dir / "broken.jsonl", "{\"id\": 1\n");
  CHECK(evbench("ingest --data " + (dir / "broken.jsonl").string() + " --schema " + (dir / "a" / "schema.json").string(),
                log) == 2);

  auto bad = small_config();
  bad["protocol"]["n_seeds"] = 0;
  put(dir / "bad.json", bad.dump());
  CHECK(evbench("split --config " + (dir / "bad.json").string() + " --out " + (dir / "runs").string(), log) == 1);
  CHECK(slurp(log).find("/protocol/n_seeds") != std::string::npos);
  CHECK(evbench("split --config " + (dir / "absent.json").string(), log) == 1);
  CHECK(evbench("no-such-command", log) == 1);

  put(dir / "good.json", small_config().dump());
  CHECK(evbench("split --config " + (dir / "good.json").string() + " --out " + (dir / "runs").string() + " --jobs 1",
                log) == 0);
  CHECK(slurp(log).find("split finished") != std::string::npos);
}
