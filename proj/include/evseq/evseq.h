#ifndef EVSEQ_EVSEQ_H
#define EVSEQ_EVSEQ_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define EVSEQ_API __attribute__((visibility("default")))
#else
#define EVSEQ_API
#endif

typedef enum evseq_status {
  EVSEQ_OK = 0,
  EVSEQ_ERR_VALIDATION = 1, /* bad config; evseq_last_error_pointer() names the value */
  EVSEQ_ERR_IO = 2,
  EVSEQ_ERR_PARSE = 3,
  EVSEQ_ERR_SCHEMA = 4,
  EVSEQ_ERR_SHAPE = 5,
  EVSEQ_ERR_TRAINING = 6,
  EVSEQ_ERR_RUNTIME = 7,
  EVSEQ_ERR_ARGUMENT = 8 /* null handle or out-pointer */
} evseq_status;

typedef struct evseq_dataset evseq_dataset;
typedef struct evseq_model evseq_model;

/* Message and JSON pointer of the calling thread's last failure. Valid until
   the next call on the same thread; empty strings after success. */
EVSEQ_API const char* evseq_last_error(void);
EVSEQ_API const char* evseq_last_error_pointer(void);
EVSEQ_API const char* evseq_status_name(evseq_status status);
EVSEQ_API const char* evseq_version(void);

/* Strings returned through char** out-parameters are owned by the caller. */
EVSEQ_API void evseq_string_free(char* s);

/* Datasets. synth_json takes the generator keys of an experiment config's
   "dataset.synth" object ("seed" included). */
EVSEQ_API evseq_status evseq_dataset_generate(const char* synth_json, evseq_dataset** out);
EVSEQ_API evseq_status evseq_dataset_load(const char* jsonl_path, const char* schema_path, evseq_dataset** out,
                                          size_t* resorted);
EVSEQ_API evseq_status evseq_dataset_save(const evseq_dataset* ds, const char* jsonl_path, const char* schema_path);
EVSEQ_API size_t evseq_dataset_size(const evseq_dataset* ds);
EVSEQ_API evseq_status evseq_dataset_stats(const evseq_dataset* ds, char** json_out);
EVSEQ_API void evseq_dataset_free(evseq_dataset* ds);

/* Stratified test holdout then train / train-val / hpo-val, as JSON index lists. */
EVSEQ_API evseq_status evseq_dataset_split(const evseq_dataset* ds, double test, double train, double train_val,
                                           double hpo_val, uint64_t seed, char** json_out);

/* Checkpointed models. predict writes rows x cols scores into out (capacity
   out_len doubles); indices refer to the dataset, which must be preprocessed
   with the model's time scale. */
EVSEQ_API evseq_status evseq_model_load(const char* path, evseq_model** out);
EVSEQ_API evseq_status evseq_model_info(const evseq_model* m, char** json_out);
EVSEQ_API evseq_status evseq_model_predict(const evseq_model* m, const evseq_dataset* ds, const size_t* indices,
                                           size_t n, double* out, size_t out_len, size_t* cols);
EVSEQ_API void evseq_model_free(evseq_model* m);

/* Experiments. config_json is an experiment config; relative dataset paths
   resolve against base_dir. stage is one of split, hpo, final-eval, stress,
   scaling. seed_override < 0 keeps the config's seed. jobs <= 0 uses every
   core. The run directory is returned through run_dir_out. */
typedef struct evseq_run_options {
  int jobs;
  int resume;
  int64_t seed_override;
} evseq_run_options;

EVSEQ_API evseq_status evseq_config_check(const char* config_json, const char* base_dir, int64_t seed_override,
                                          char** resolved_json_out);
EVSEQ_API evseq_status evseq_experiment_run(const char* stage, const char* config_json, const char* base_dir,
                                            const char* out_root, const evseq_run_options* opts, char** run_dir_out);

/* Reports. compare reads RunRecord JSONL files and renders the ranked
   comparison (one table column per dataset) plus CSV and subset
   correlations. */
EVSEQ_API evseq_status evseq_compare(const char* const* record_paths, size_t n_paths, char** markdown_out,
                                     char** csv_out, char** correlation_csv_out);
EVSEQ_API evseq_status evseq_report(const char* run_dir, char** markdown_out);

#ifdef __cplusplus
}
#endif

#endif
