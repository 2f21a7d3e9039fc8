/* C interface to the semops engine. All functions return a status code; on
 * failure semops_last_error() describes the problem (per thread). Handles are
 * opaque and owned by the caller until passed to the matching _free. */
#ifndef SEMOPS_SEMOPS_H_
#define SEMOPS_SEMOPS_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SEMOPS_API __declspec(dllexport)
#else
#define SEMOPS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum semops_status {
  SEMOPS_OK = 0,
  SEMOPS_ERR_INVALID_ARGUMENT = 1,
  SEMOPS_ERR_VALIDATION = 2,
  SEMOPS_ERR_NOT_FOUND = 3,
  SEMOPS_ERR_IO = 4,
  SEMOPS_ERR_FORMAT = 5,
  SEMOPS_ERR_BUDGET = 6,
  SEMOPS_ERR_NULL_CELL = 7,
  SEMOPS_ERR_BACKEND = 8,
  SEMOPS_ERR_RUNTIME = 9,
  SEMOPS_ERR_INTERNAL = 10
} semops_status;

typedef struct semops_table semops_table;
typedef struct semops_index semops_index;
typedef struct semops_pipeline semops_pipeline;

SEMOPS_API const char* semops_version(void);
SEMOPS_API const char* semops_status_name(semops_status status);
/* Message of the last failed call on this thread; "" if none. */
SEMOPS_API const char* semops_last_error(void);
/* Frees strings returned through char** out-parameters. */
SEMOPS_API void semops_string_free(char* s);

/* Tables */
SEMOPS_API semops_status semops_table_load_csv(const char* path, semops_table** out);
SEMOPS_API semops_status semops_table_parse_csv(const char* data, size_t len, semops_table** out);
SEMOPS_API void semops_table_free(semops_table* t);
SEMOPS_API size_t semops_table_rows(const semops_table* t);
SEMOPS_API size_t semops_table_columns(const semops_table* t);
/* The name stays valid while the table lives. */
SEMOPS_API semops_status semops_table_column_name(const semops_table* t, size_t column,
                                                  const char** out);
/* Copies the cell's text into buf (NUL-terminated, truncated to cap - 1) and
 * reports the full length in *needed. *is_null is set for null cells. */
SEMOPS_API semops_status semops_table_cell(const semops_table* t, size_t row, size_t column,
                                           char* buf, size_t cap, size_t* needed, int* is_null);
SEMOPS_API semops_status semops_table_select_rows(const semops_table* t, const uint32_t* rows,
                                                  size_t n, semops_table** out);
SEMOPS_API semops_status semops_table_to_csv(const semops_table* t, char** out);
SEMOPS_API semops_status semops_table_write_csv(const semops_table* t, const char* path);

/* Similarity indices over one text column, built with the deterministic
 * n-gram embedder. */
SEMOPS_API semops_status semops_index_build(const semops_table* t, const char* column,
                                            const char* dir, size_t dimension, uint64_t seed,
                                            semops_index** out);
SEMOPS_API semops_status semops_index_load(const char* dir, semops_index** out);
SEMOPS_API void semops_index_free(semops_index* idx);
SEMOPS_API size_t semops_index_rows(const semops_index* idx);
SEMOPS_API size_t semops_index_dimension(const semops_index* idx);
SEMOPS_API const char* semops_index_embedder(const semops_index* idx);
SEMOPS_API const char* semops_index_column(const semops_index* idx);
/* Writes up to k hits (row ids and cosine scores, best first) and their
 * count to *n_out. rows and scores must hold k entries; scores may be NULL. */
SEMOPS_API semops_status semops_index_search(const semops_index* idx, const char* query, size_t k,
                                             uint32_t* rows, double* scores, size_t* n_out);

/* Pipelines */
SEMOPS_API semops_status semops_pipeline_load(const char* path, semops_pipeline** out);
SEMOPS_API void semops_pipeline_free(semops_pipeline* p);
/* Pre-flight check; makes no LM call. */
SEMOPS_API semops_status semops_pipeline_validate(semops_pipeline* p);
/* Runs the pipeline. *metrics_json is set whenever the run started, also on
 * failure; *result only on success. */
SEMOPS_API semops_status semops_pipeline_run(semops_pipeline* p, semops_table** result,
                                             char** metrics_json);
/* NULL when the pipeline names no such file. */
SEMOPS_API const char* semops_pipeline_output_path(const semops_pipeline* p);
SEMOPS_API const char* semops_pipeline_metrics_path(const semops_pipeline* p);

/* Ranking benchmark. algorithms is a comma list of quadratic, heap and
 * quickselect, or NULL for all three. */
SEMOPS_API semops_status semops_bench_generate(size_t n, uint64_t seed, semops_table** out);
SEMOPS_API semops_status semops_bench_run(size_t n, size_t k, size_t trials, uint64_t seed,
                                          const double* temperatures, size_t n_temperatures,
                                          const char* algorithms, char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* SEMOPS_SEMOPS_H_ */
