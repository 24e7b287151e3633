#include "evseq/evseq.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

#include "app/experiment.hpp"
#include "common/error.hpp"
#include "common/parallel.hpp"
#include "seq/io.hpp"
#include "seq/preprocess.hpp"
#include "stats/compare.hpp"
#include "stats/tests.hpp"

struct evseq_dataset {
  evseq::seq::Dataset ds;
};

struct evseq_model {
  evseq::models::TrainedModel m;
};

namespace {

using nlohmann::json;

thread_local std::string g_error;
thread_local std::string g_pointer;

// Maps the core's exception hierarchy onto status codes. std::invalid_argument
// marks caller misuse (null handles).
template <typename F>
evseq_status guard(F&& f) {
  g_error.clear();
  g_pointer.clear();
  try {
    f();
    return EVSEQ_OK;
  } catch (const evseq::ValidationError& e) {
    g_error = e.what();
    g_pointer = e.pointer();
    return EVSEQ_ERR_VALIDATION;
  } catch (const evseq::IoError& e) {
    g_error = e.what();
    return EVSEQ_ERR_IO;
  } catch (const evseq::ParseError& e) {
    g_error = e.what();
    return EVSEQ_ERR_PARSE;
  } catch (const evseq::SchemaError& e) {
    g_error = e.what();
    return EVSEQ_ERR_SCHEMA;
  } catch (const evseq::ShapeError& e) {
    g_error = e.what();
    return EVSEQ_ERR_SHAPE;
  } catch (const evseq::TrainingError& e) {
    g_error = e.what();
    return EVSEQ_ERR_TRAINING;
  } catch (const std::invalid_argument& e) {
    g_error = e.what();
    return EVSEQ_ERR_ARGUMENT;
  } catch (const std::exception& e) {
    g_error = e.what();
    return EVSEQ_ERR_RUNTIME;
  } catch (...) {
    g_error = "unknown failure";
    return EVSEQ_ERR_RUNTIME;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be null");
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::optional<std::uint64_t> seed_opt(std::int64_t s) {
  if (s < 0) return std::nullopt;
  return static_cast<std::uint64_t>(s);
}

}  // namespace

extern "C" {

const char* evseq_last_error(void) { return g_error.c_str(); }
const char* evseq_last_error_pointer(void) { return g_pointer.c_str(); }

const char* evseq_status_name(evseq_status status) {
  switch (status) {
    case EVSEQ_OK: return "ok";
    case EVSEQ_ERR_VALIDATION: return "validation error";
    case EVSEQ_ERR_IO: return "io error";
    case EVSEQ_ERR_PARSE: return "parse error";
    case EVSEQ_ERR_SCHEMA: return "schema error";
    case EVSEQ_ERR_SHAPE: return "shape error";
    case EVSEQ_ERR_TRAINING: return "training error";
    case EVSEQ_ERR_RUNTIME: return "runtime error";
    case EVSEQ_ERR_ARGUMENT: return "invalid argument";
  }
  return "unknown status";
}

const char* evseq_version(void) { return "0.1.0"; }

void evseq_string_free(char* s) { std::free(s); }

evseq_status evseq_dataset_generate(const char* synth_json, evseq_dataset** out) {
  return guard([&] {
    require(synth_json, "synth_json");
    require(out, "out");
    json j;
    try {
      j = json::parse(synth_json);
    } catch (const json::parse_error& e) {
      throw evseq::ValidationError("/", e.what());
    }
    const std::string kind = j.is_object() ? j.value("kind", std::string("pendulum")) : "";
    const auto cfg = evseq::app::synth_from_json(j, "");
    auto h = std::make_unique<evseq_dataset>();
    if (kind == "pendulum")
      h->ds = evseq::synth::generate_pendulum_dataset(cfg);
    else if (kind == "time-irrelevant")
      h->ds = evseq::synth::generate_time_irrelevant_dataset(cfg.n_sequences, cfg.seed);
    else
      throw evseq::ValidationError("/kind", "must be \"pendulum\" or \"time-irrelevant\"");
    *out = h.release();
  });
}

evseq_status evseq_dataset_load(const char* jsonl_path, const char* schema_path, evseq_dataset** out,
                                size_t* resorted) {
  return guard([&] {
    require(jsonl_path, "jsonl_path");
    require(schema_path, "schema_path");
    require(out, "out");
    evseq::seq::IngestStats st;
    auto h = std::make_unique<evseq_dataset>();
    h->ds = evseq::seq::ingest_jsonl(jsonl_path, evseq::seq::load_schema(schema_path), &st);
    if (resorted) *resorted = st.resorted;
    *out = h.release();
  });
}

evseq_status evseq_dataset_save(const evseq_dataset* ds, const char* jsonl_path, const char* schema_path) {
  return guard([&] {
    require(ds, "ds");
    require(jsonl_path, "jsonl_path");
    namespace fs = std::filesystem;
    if (fs::exists(jsonl_path)) throw evseq::IoError(std::string("refusing to overwrite '") + jsonl_path + "'");
    if (schema_path && fs::exists(schema_path))
      throw evseq::IoError(std::string("refusing to overwrite '") + schema_path + "'");
    evseq::seq::emit_jsonl(ds->ds, std::string(jsonl_path));
    if (schema_path) evseq::seq::save_schema(ds->ds.schema, schema_path);
  });
}

size_t evseq_dataset_size(const evseq_dataset* ds) { return ds ? ds->ds.size() : 0; }

evseq_status evseq_dataset_stats(const evseq_dataset* ds, char** json_out) {
  return guard([&] {
    require(ds, "ds");
    require(json_out, "json_out");
    std::vector<double> lengths;
    double missing = 0.0, cells = 0.0;
    for (const auto& s : ds->ds.sequences) {
      lengths.push_back(static_cast<double>(s.length()));
      for (const auto& m : s.mask) {
        for (auto v : m) missing += v == 0;
        cells += static_cast<double>(m.size());
      }
    }
    json j{{"sequences", ds->ds.size()}};
    if (!lengths.empty()) {
      j["mean_length"] = evseq::stats::mean(lengths);
      const double sd = evseq::stats::stddev(lengths);
      j["std_length"] = std::isnan(sd) ? json(nullptr) : json(sd);
      j["min_length"] = *std::min_element(lengths.begin(), lengths.end());
      j["max_length"] = *std::max_element(lengths.begin(), lengths.end());
    }
    j["missing_fraction"] = cells > 0 ? missing / cells : 0.0;
    *json_out = dup(j.dump());
  });
}

void evseq_dataset_free(evseq_dataset* ds) { delete ds; }

evseq_status evseq_dataset_split(const evseq_dataset* ds, double test, double train, double train_val,
                                 double hpo_val, uint64_t seed, char** json_out) {
  return guard([&] {
    require(ds, "ds");
    require(json_out, "json_out");
    auto s = evseq::seq::holdout_split(ds->ds, test, train, train_val, hpo_val, seed);
    json j{{"seed", seed}, {"train", s.train}, {"train_val", s.train_val}, {"hpo_val", s.hpo_val}, {"test", s.test}};
    *json_out = dup(j.dump());
  });
}

evseq_status evseq_model_load(const char* path, evseq_model** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new evseq_model{evseq::models::load_checkpoint(path)};
  });
}

evseq_status evseq_model_info(const evseq_model* m, char** json_out) {
  return guard([&] {
    require(m, "m");
    require(json_out, "json_out");
    json j{{"encoder", m->m.model.config().to_json()},
           {"train", m->m.train.to_json()},
           {"metric", evseq::stats::metric_name(m->m.metric)},
           {"best_epoch", m->m.best_epoch},
           {"outputs", evseq::models::head_width(m->m.model.schema())}};
    *json_out = dup(j.dump());
  });
}

evseq_status evseq_model_predict(const evseq_model* m, const evseq_dataset* ds, const size_t* indices, size_t n,
                                 double* out, size_t out_len, size_t* cols) {
  return guard([&] {
    require(m, "m");
    require(ds, "ds");
    require(indices, "indices");
    require(out, "out");
    evseq::seq::IndexSet idx(indices, indices + n);
    for (auto i : idx)
      if (i >= ds->ds.size()) throw std::invalid_argument("index " + std::to_string(i) + " out of range");
    evseq::ad::Tensor scores;
    if (!ds->ds.preprocessed && m->m.time_scale) {
      scores = evseq::models::predict(m->m, evseq::seq::preprocess_with(ds->ds, *m->m.time_scale), idx);
    } else {
      scores = evseq::models::predict(m->m, ds->ds, idx);
    }
    if (scores.size() > out_len)
      throw std::invalid_argument("output buffer holds " + std::to_string(out_len) + " values, need " +
                                  std::to_string(scores.size()));
    std::memcpy(out, scores.data(), scores.size() * sizeof(double));
    if (cols) *cols = n ? scores.size() / n : 0;
  });
}

void evseq_model_free(evseq_model* m) { delete m; }

evseq_status evseq_config_check(const char* config_json, const char* base_dir, int64_t seed_override,
                                char** resolved_json_out) {
  return guard([&] {
    require(config_json, "config_json");
    auto cfg = evseq::app::ExperimentConfig::parse(config_json, base_dir ? base_dir : ".", seed_opt(seed_override));
    if (resolved_json_out) *resolved_json_out = dup(cfg.resolved.dump(2));
  });
}

evseq_status evseq_experiment_run(const char* stage, const char* config_json, const char* base_dir,
                                  const char* out_root, const evseq_run_options* opts, char** run_dir_out) {
  return guard([&] {
    require(stage, "stage");
    require(config_json, "config_json");
    require(out_root, "out_root");
    evseq_run_options o{0, 0, -1};
    if (opts) o = *opts;
    auto cfg = evseq::app::ExperimentConfig::parse(config_json, base_dir ? base_dir : ".", seed_opt(o.seed_override));
    evseq::app::RunOptions ro;
    ro.jobs = o.jobs > 0 ? o.jobs : evseq::default_jobs();
    ro.resume = o.resume != 0;
    auto dir = evseq::app::run_stage(stage, cfg, out_root, ro);
    if (run_dir_out) *run_dir_out = dup(dir.string());
  });
}

evseq_status evseq_compare(const char* const* record_paths, size_t n_paths, char** markdown_out, char** csv_out,
                           char** correlation_csv_out) {
  return guard([&] {
    require(record_paths, "record_paths");
    if (n_paths == 0) throw std::invalid_argument("need at least one record file");
    std::vector<evseq::stats::RunRecord> all;
    for (size_t i = 0; i < n_paths; ++i) {
      require(record_paths[i], "record path");
      auto r = evseq::stats::read_records(record_paths[i]);
      all.insert(all.end(), r.begin(), r.end());
    }
    std::map<std::string, std::vector<evseq::stats::RunRecord>> by_dataset;
    for (const auto& r : all) by_dataset[r.dataset].push_back(r);
    std::vector<evseq::stats::ComparisonReport> reps;
    std::string csv;
    for (const auto& [name, recs] : by_dataset) {
      auto rep = evseq::stats::rank_groups(evseq::stats::metrics_by_method(recs));
      rep.dataset = name;
      rep.metric = recs.front().metric_name;
      const auto c = evseq::stats::report_csv(rep);
      csv += (csv.empty() ? "" : "\n") + c;
      reps.push_back(std::move(rep));
    }
    std::string corr;
    try {
      corr = evseq::stats::correlation_csv(evseq::stats::subset_correlation(all));
    } catch (const evseq::Error&) {
    }
    if (markdown_out) *markdown_out = dup(evseq::stats::report_markdown(reps));
    if (csv_out) *csv_out = dup(csv);
    if (correlation_csv_out) *correlation_csv_out = dup(corr);
  });
}

evseq_status evseq_report(const char* run_dir, char** markdown_out) {
  return guard([&] {
    require(run_dir, "run_dir");
    require(markdown_out, "markdown_out");
    *markdown_out = dup(evseq::app::render_report(run_dir));
  });
}

}  // extern "C"
