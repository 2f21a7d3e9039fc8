#include "semops/semops.h"

#include <cstring>
#include <memory>
#include <new>
#include <optional>
#include <string>

#include "semops/bench.hpp"
#include "semops/embedding_index.hpp"
#include "semops/pipeline.hpp"
#include "semops/table.hpp"

struct semops_table {
  semops::Table table;
};

struct semops_index {
  std::shared_ptr<const semops::SimIndex> index;
  std::shared_ptr<const semops::Embedder> embedder;
};

struct semops_pipeline {
  semops::Pipeline pipeline;
  std::optional<std::string> output;
  std::optional<std::string> metrics;
};

namespace {

thread_local std::string g_last_error;

semops_status to_status(semops::ErrorCode code) {
  using semops::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return SEMOPS_ERR_INVALID_ARGUMENT;
    case ErrorCode::kValidation:
      return SEMOPS_ERR_VALIDATION;
    case ErrorCode::kNotFound:
      return SEMOPS_ERR_NOT_FOUND;
    case ErrorCode::kIo:
      return SEMOPS_ERR_IO;
    case ErrorCode::kFormat:
      return SEMOPS_ERR_FORMAT;
    case ErrorCode::kBudget:
      return SEMOPS_ERR_BUDGET;
    case ErrorCode::kNullCell:
      return SEMOPS_ERR_NULL_CELL;
    case ErrorCode::kBackend:
      return SEMOPS_ERR_BACKEND;
    case ErrorCode::kRuntime:
      return SEMOPS_ERR_RUNTIME;
  }
  return SEMOPS_ERR_INTERNAL;
}

semops_status fail(semops_status s, std::string msg) {
  g_last_error = std::move(msg);
  return s;
}

// Runs `f`, translating exceptions into status codes.
template <typename F>
semops_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return SEMOPS_OK;
  } catch (const semops::Error& e) {
    return fail(to_status(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(SEMOPS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SEMOPS_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

#define SEMOPS_REQUIRE(cond, what) \
  if (!(cond)) return fail(SEMOPS_ERR_INVALID_ARGUMENT, what)

}  // namespace

extern "C" {

const char* semops_version(void) { return "0.1.0"; }

const char* semops_status_name(semops_status status) {
  switch (status) {
    case SEMOPS_OK:
      return "ok";
    case SEMOPS_ERR_INVALID_ARGUMENT:
      return "invalid_argument";
    case SEMOPS_ERR_VALIDATION:
      return "validation";
    case SEMOPS_ERR_NOT_FOUND:
      return "not_found";
    case SEMOPS_ERR_IO:
      return "io";
    case SEMOPS_ERR_FORMAT:
      return "format";
    case SEMOPS_ERR_BUDGET:
      return "budget";
    case SEMOPS_ERR_NULL_CELL:
      return "null_cell";
    case SEMOPS_ERR_BACKEND:
      return "backend";
    case SEMOPS_ERR_RUNTIME:
      return "runtime";
    case SEMOPS_ERR_INTERNAL:
      return "internal";
  }
  return "unknown";
}

const char* semops_last_error(void) { return g_last_error.c_str(); }

void semops_string_free(char* s) { std::free(s); }

semops_status semops_table_load_csv(const char* path, semops_table** out) {
  SEMOPS_REQUIRE(path != nullptr && out != nullptr, "null argument");
  return guarded([&] { *out = new semops_table{semops::load_csv(path)}; });
}

semops_status semops_table_parse_csv(const char* data, size_t len, semops_table** out) {
  SEMOPS_REQUIRE((data != nullptr || len == 0) && out != nullptr, "null argument");
  return guarded([&] {
    *out = new semops_table{semops::parse_csv(std::string_view(data ? data : "", len))};
  });
}

void semops_table_free(semops_table* t) { delete t; }

size_t semops_table_rows(const semops_table* t) { return t ? t->table.row_count() : 0; }

size_t semops_table_columns(const semops_table* t) { return t ? t->table.column_count() : 0; }

semops_status semops_table_column_name(const semops_table* t, size_t column, const char** out) {
  SEMOPS_REQUIRE(t != nullptr && out != nullptr, "null argument");
  if (column >= t->table.column_count()) {
    return fail(SEMOPS_ERR_INVALID_ARGUMENT, "column " + std::to_string(column) + " out of range");
  }
  *out = t->table.column(column).spec.name.c_str();
  return SEMOPS_OK;
}

semops_status semops_table_cell(const semops_table* t, size_t row, size_t column, char* buf,
                                size_t cap, size_t* needed, int* is_null) {
  SEMOPS_REQUIRE(t != nullptr, "null table");
  SEMOPS_REQUIRE(buf != nullptr || cap == 0, "null buffer with non-zero capacity");
  if (column >= t->table.column_count() || row >= t->table.row_count()) {
    return fail(SEMOPS_ERR_INVALID_ARGUMENT, "cell (" + std::to_string(row) + ", " +
                                          std::to_string(column) + ") out of range");
  }
  const semops::Cell& c = t->table.column(column).cells[row];
  const std::string s = semops::cell_to_string(c);
  if (needed != nullptr) *needed = s.size();
  if (is_null != nullptr) *is_null = semops::is_null(c) ? 1 : 0;
  if (cap > 0) {
    const size_t n = std::min(cap - 1, s.size());
    std::memcpy(buf, s.data(), n);
    buf[n] = '\0';
  }
  return SEMOPS_OK;
}

semops_status semops_table_select_rows(const semops_table* t, const uint32_t* rows, size_t n,
                                       semops_table** out) {
  SEMOPS_REQUIRE(t != nullptr && out != nullptr && (rows != nullptr || n == 0), "null argument");
  for (size_t i = 0; i < n; ++i) {
    if (rows[i] >= t->table.row_count()) {
      return fail(SEMOPS_ERR_INVALID_ARGUMENT, "row " + std::to_string(rows[i]) + " out of range");
    }
  }
  return guarded([&] {
    *out = new semops_table{t->table.select_rows(std::span<const semops::RowId>(rows, n))};
  });
}

semops_status semops_table_to_csv(const semops_table* t, char** out) {
  SEMOPS_REQUIRE(t != nullptr && out != nullptr, "null argument");
  return guarded([&] { *out = dup_string(semops::to_csv(t->table)); });
}

semops_status semops_table_write_csv(const semops_table* t, const char* path) {
  SEMOPS_REQUIRE(t != nullptr && path != nullptr, "null argument");
  return guarded([&] { semops::write_csv(t->table, path); });
}

semops_status semops_index_build(const semops_table* t, const char* column, const char* dir,
                                 size_t dimension, uint64_t seed, semops_index** out) {
  SEMOPS_REQUIRE(t != nullptr && column != nullptr && dir != nullptr && out != nullptr,
                 "null argument");
  SEMOPS_REQUIRE(dimension > 0, "dimension must be positive");
  return guarded([&] {
    auto embedder = std::make_shared<semops::MockEmbedder>(dimension, seed);
    auto idx = semops::sem_index(t->table, column, dir, *embedder);
    *out = new semops_index{std::move(idx), std::move(embedder)};
  });
}

semops_status semops_index_load(const char* dir, semops_index** out) {
  SEMOPS_REQUIRE(dir != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    auto idx = std::make_shared<const semops::SimIndex>(semops::SimIndex::load(dir));
    auto embedder = semops::make_embedder(idx->manifest().embedder_id);
    if (embedder->dimension() != idx->dimension()) {
      throw semops::Error(semops::ErrorCode::kFormat, "index dimension disagrees with its embedder");
    }
    *out = new semops_index{std::move(idx), std::move(embedder)};
  });
}

void semops_index_free(semops_index* idx) { delete idx; }

size_t semops_index_rows(const semops_index* idx) { return idx ? idx->index->size() : 0; }

size_t semops_index_dimension(const semops_index* idx) { return idx ? idx->index->dimension() : 0; }

const char* semops_index_embedder(const semops_index* idx) {
  return idx ? idx->index->manifest().embedder_id.c_str() : "";
}

const char* semops_index_column(const semops_index* idx) {
  return idx ? idx->index->manifest().column.c_str() : "";
}

semops_status semops_index_search(const semops_index* idx, const char* query, size_t k,
                                  uint32_t* rows, double* scores, size_t* n_out) {
  SEMOPS_REQUIRE(idx != nullptr && query != nullptr && n_out != nullptr, "null argument");
  SEMOPS_REQUIRE(rows != nullptr || k == 0, "null rows buffer");
  return guarded([&] {
    const std::string q(query);
    const auto v = idx->embedder->embed(std::span(&q, 1));
    const auto hits = idx->index->search(v, k);
    for (size_t i = 0; i < hits.size(); ++i) {
      rows[i] = hits[i].row;
      if (scores != nullptr) scores[i] = hits[i].score;
    }
    *n_out = hits.size();
  });
}

semops_status semops_pipeline_load(const char* path, semops_pipeline** out) {
  SEMOPS_REQUIRE(path != nullptr && out != nullptr, "null argument");
  return guarded([&] {
    semops::Pipeline p = semops::Pipeline::load(path);
    auto output = p.output_path();
    auto metrics = p.metrics_path();
    *out = new semops_pipeline{std::move(p), std::move(output), std::move(metrics)};
  });
}

void semops_pipeline_free(semops_pipeline* p) { delete p; }

semops_status semops_pipeline_validate(semops_pipeline* p) {
  SEMOPS_REQUIRE(p != nullptr, "null pipeline");
  return guarded([&] { p->pipeline.validate(); });
}

semops_status semops_pipeline_run(semops_pipeline* p, semops_table** result, char** metrics_json) {
  SEMOPS_REQUIRE(p != nullptr && result != nullptr, "null argument");
  *result = nullptr;
  if (metrics_json != nullptr) *metrics_json = nullptr;
  semops::RunMetrics metrics;
  bool started = false;
  const semops_status st = guarded([&] {
    p->pipeline.validate();
    started = true;
    semops::Table t = p->pipeline.run(metrics);
    *result = new semops_table{std::move(t)};
  });
  if (started && metrics_json != nullptr) {
    const std::string saved = g_last_error;
    const semops_status ms = guarded([&] { *metrics_json = dup_string(metrics.to_json()); });
    if (ms != SEMOPS_OK) return ms;
    g_last_error = saved;
  }
  return st;
}

const char* semops_pipeline_output_path(const semops_pipeline* p) {
  return p && p->output ? p->output->c_str() : nullptr;
}

const char* semops_pipeline_metrics_path(const semops_pipeline* p) {
  return p && p->metrics ? p->metrics->c_str() : nullptr;
}

semops_status semops_bench_generate(size_t n, uint64_t seed, semops_table** out) {
  SEMOPS_REQUIRE(out != nullptr, "null argument");
  return guarded([&] { *out = new semops_table{semops::gen_bench(n, seed).table}; });
}

semops_status semops_bench_run(size_t n, size_t k, size_t trials, uint64_t seed,
                               const double* temperatures, size_t n_temperatures,
                               const char* algorithms, char** report_json) {
  SEMOPS_REQUIRE(report_json != nullptr, "null argument");
  SEMOPS_REQUIRE(temperatures != nullptr || n_temperatures == 0, "null temperatures");
  return guarded([&] {
    semops::BenchOptions opts;
    opts.n = n;
    opts.k = k;
    opts.trials = trials;
    opts.seed = seed;
    if (n_temperatures > 0) opts.temperatures.assign(temperatures, temperatures + n_temperatures);
    if (algorithms != nullptr && *algorithms != '\0') {
      opts.algorithms.clear();
      std::string_view rest(algorithms);
      while (!rest.empty()) {
        const size_t comma = rest.find(',');
        const std::string_view name = rest.substr(0, comma);
        const auto a = semops::parse_topk_algorithm(name);
        if (!a) {
          throw semops::Error(semops::ErrorCode::kInvalidArgument,
                              "unknown algorithm '" + std::string(name) + "'");
        }
        opts.algorithms.push_back(*a);
        rest = comma == std::string_view::npos ? std::string_view() : rest.substr(comma + 1);
      }
    }
    if (k == 0 || k > n) {
      throw semops::Error(semops::ErrorCode::kInvalidArgument, "bench: k must be in [1, n]");
    }
    const auto rows = semops::bench_ranking(opts);
    *report_json = dup_string(semops::bench_report_json(opts, rows));
  });
}

}  // extern "C"
