/* C interface to the sqcl continual-learning core.
 *
 * All entry points return sqcl_status; on failure sqcl_last_error() carries a
 * thread-local description. Handles are opaque and freed with their matching
 * *_free function.
 */
#ifndef SQCL_H
#define SQCL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sqcl_status {
  SQCL_OK = 0,
  SQCL_ERROR_INVALID_ARGUMENT = 1,
  SQCL_ERROR_CONFIG = 2,
  SQCL_ERROR_FORMAT = 3,
  SQCL_ERROR_IO = 4,
  SQCL_ERROR_PROTOCOL = 5,
  SQCL_ERROR_NUMERIC = 6,
  SQCL_ERROR_RUNTIME = 7
} sqcl_status;

typedef struct sqcl_config sqcl_config;
typedef struct sqcl_result sqcl_result;

const char* sqcl_version(void);

/* Description of the most recent failure on this thread; empty string when
 * the last call succeeded. */
const char* sqcl_last_error(void);

/* ---- run configuration --------------------------------------------------- */

sqcl_status sqcl_config_create(sqcl_config** out);
sqcl_status sqcl_config_load(const char* path, sqcl_config** out);
sqcl_status sqcl_config_set(sqcl_config* config, const char* key, const char* value);
sqcl_status sqcl_config_get(const sqcl_config* config, const char* key, char* buffer,
                            size_t buffer_len);
sqcl_status sqcl_config_validate(const sqcl_config* config);
void sqcl_config_free(sqcl_config* config);

/* ---- experiments ----------------------------------------------------------- */

/* Executes the configured plan (direct runs or grid selection + assessment),
 * writing records, reports and a resume journal under out_root. jobs <= 0
 * falls back to the config's jobs field. */
sqcl_status sqcl_run(const sqcl_config* config, const char* out_root, int jobs,
                     sqcl_result** out);

/* Continues an interrupted sweep from its output directory. */
sqcl_status sqcl_resume(const char* run_dir, int jobs, sqcl_result** out);

int sqcl_result_num_runs(const sqcl_result* result);
sqcl_status sqcl_result_seed(const sqcl_result* result, int run, uint64_t* out);
sqcl_status sqcl_result_acc(const sqcl_result* result, int run, double* out);
/* Steps in the run's accuracy matrix (a T×T row-major buffer; absent entries
 * are NaN). */
sqcl_status sqcl_result_num_steps(const sqcl_result* result, int run, int* out);
sqcl_status sqcl_result_matrix(const sqcl_result* result, int run, double* buffer,
                               size_t buffer_len);
sqcl_status sqcl_result_out_dir(const sqcl_result* result, char* buffer, size_t buffer_len);
void sqcl_result_free(sqcl_result* result);

/* ---- datasets, reports, verification --------------------------------------- */

/* kind: "strokes" | "featureseq" | "digits-idx" */
sqcl_status sqcl_make_data(const char* kind, const char* out_path, uint64_t seed,
                           int num_classes, int per_class_train, int per_class_test);

sqcl_status sqcl_report(const char* const* run_dirs, int num_dirs, const char* out_dir);

/* Runs the invariant suite over artifact paths; *checks_out (optional)
 * receives the number of executed checks. */
sqcl_status sqcl_verify(const char* const* paths, int num_paths, int* checks_out);

#ifdef __cplusplus
}
#endif

#endif /* SQCL_H */
