// Command-line front end; talks to the engine only through the C API.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semops/semops.h"

namespace {

int exit_code(semops_status s) {
  switch (s) {
    case SEMOPS_OK:
      return 0;
    case SEMOPS_ERR_VALIDATION:
    case SEMOPS_ERR_INVALID_ARGUMENT:
      return 2;
    default:
      return 1;
  }
}

int report(semops_status s, const char* what) {
  std::fprintf(stderr, "semops: %s failed (%s): %s\n", what, semops_status_name(s),
               semops_last_error());
  return exit_code(s);
}

bool write_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (f == nullptr) return false;
  const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
  return std::fclose(f) == 0 && ok;
}

int cmd_index(const std::string& csv, const std::string& column, const std::string& dir,
              std::size_t dim, std::uint64_t seed) {
  semops_table* t = nullptr;
  if (auto s = semops_table_load_csv(csv.c_str(), &t); s != SEMOPS_OK) return report(s, "load");
  semops_index* idx = nullptr;
  const auto s = semops_index_build(t, column.c_str(), dir.c_str(), dim, seed, &idx);
  semops_table_free(t);
  if (s != SEMOPS_OK) return report(s, "index");
  std::printf("indexed %zu rows of '%s' into %s (%s)\n", semops_index_rows(idx), column.c_str(),
              dir.c_str(), semops_index_embedder(idx));
  semops_index_free(idx);
  return 0;
}

int cmd_search(const std::string& dir, const std::string& query, std::size_t k,
               const std::string& csv) {
  semops_index* idx = nullptr;
  if (auto s = semops_index_load(dir.c_str(), &idx); s != SEMOPS_OK) return report(s, "load index");
  std::vector<std::uint32_t> rows(k);
  std::vector<double> scores(k);
  std::size_t n = 0;
  auto s = semops_index_search(idx, query.c_str(), k, rows.data(), scores.data(), &n);
  semops_index_free(idx);
  if (s != SEMOPS_OK) return report(s, "search");
  rows.resize(n);
  if (csv.empty()) {
    std::printf("rank\trow\tscore\n");
    for (std::size_t i = 0; i < n; ++i) std::printf("%zu\t%u\t%.6f\n", i + 1, rows[i], scores[i]);
    return 0;
  }
  semops_table* t = nullptr;
  if (s = semops_table_load_csv(csv.c_str(), &t); s != SEMOPS_OK) return report(s, "load");
  semops_table* hits = nullptr;
  s = semops_table_select_rows(t, rows.data(), rows.size(), &hits);
  semops_table_free(t);
  if (s != SEMOPS_OK) return report(s, "select");
  char* text = nullptr;
  s = semops_table_to_csv(hits, &text);
  semops_table_free(hits);
  if (s != SEMOPS_OK) return report(s, "format");
  std::fputs(text, stdout);
  semops_string_free(text);
  return 0;
}

int cmd_run(const std::string& path, const std::string& metrics_override) {
  semops_pipeline* p = nullptr;
  if (auto s = semops_pipeline_load(path.c_str(), &p); s != SEMOPS_OK) return report(s, "load pipeline");
  if (auto s = semops_pipeline_validate(p); s != SEMOPS_OK) {
    const int code = report(s, "validate");
    semops_pipeline_free(p);
    return code == 0 ? 0 : 2;
  }
  semops_table* result = nullptr;
  char* metrics = nullptr;
  const auto s = semops_pipeline_run(p, &result, &metrics);
  const char* mpath = metrics_override.empty() ? semops_pipeline_metrics_path(p)
                                               : metrics_override.c_str();
  int code = 0;
  if (metrics != nullptr) {
    if (mpath != nullptr) {
      if (!write_file(mpath, std::string(metrics) + "\n")) {
        std::fprintf(stderr, "semops: cannot write metrics to %s\n", mpath);
        code = 1;
      }
    } else {
      std::fprintf(stderr, "%s\n", metrics);
    }
    semops_string_free(metrics);
  }
  if (s != SEMOPS_OK) {
    std::fprintf(stderr, "semops: run failed (%s): %s\n", semops_status_name(s), semops_last_error());
    semops_pipeline_free(p);
    return 1;
  }
  if (const char* out = semops_pipeline_output_path(p)) {
    if (auto ws = semops_table_write_csv(result, out); ws != SEMOPS_OK) code = report(ws, "write");
  } else {
    char* text = nullptr;
    if (auto ws = semops_table_to_csv(result, &text); ws != SEMOPS_OK) {
      code = report(ws, "format");
    } else {
      std::fputs(text, stdout);
      semops_string_free(text);
    }
  }
  semops_table_free(result);
  semops_pipeline_free(p);
  return code == 0 ? 0 : 1;
}

int cmd_bench(std::size_t n, std::size_t k, std::size_t trials, std::uint64_t seed,
              const std::vector<double>& noise, const std::vector<std::string>& algos) {
  std::string list;
  for (const auto& a : algos) {
    if (!list.empty()) list += ',';
    list += a;
  }
  char* report_json = nullptr;
  const auto s = semops_bench_run(n, k, trials, seed, noise.data(), noise.size(),
                                  list.empty() ? nullptr : list.c_str(), &report_json);
  if (s != SEMOPS_OK) return report(s, "bench");
  std::printf("%s\n", report_json);
  semops_string_free(report_json);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic operators over tables"};
  app.require_subcommand(1);
  app.set_version_flag("--version", semops_version());

  std::string csv, column, dir, query, pipeline, metrics, search_csv;
  std::size_t dim = 64, k = 10, n = 200, trials = 20;
  std::uint64_t seed = 0;
  std::vector<double> noise{0.0};
  std::vector<std::string> algos;

  auto* index = app.add_subcommand("index", "Build a similarity index over a text column");
  index->add_option("csv", csv, "Input CSV")->required()->check(CLI::ExistingFile);
  index->add_option("column", column, "Text column")->required();
  index->add_option("dir", dir, "Output directory")->required();
  index->add_option("--dim", dim, "Embedding dimension")->check(CLI::PositiveNumber);
  index->add_option("--seed", seed, "Embedder seed");

  auto* run = app.add_subcommand("run", "Run a pipeline file");
  run->add_option("pipeline", pipeline, "Pipeline JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--metrics", metrics, "Write metrics JSON here (overrides the pipeline)");

  auto* search = app.add_subcommand("search", "Query a saved index");
  search->add_option("dir", dir, "Index directory")->required()->check(CLI::ExistingDirectory);
  search->add_option("query", query, "Query text")->required();
  search->add_option("--k", k, "Number of hits")->check(CLI::PositiveNumber);
  search->add_option("--csv", search_csv, "Print the matching rows of this CSV")
      ->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Noisy top-k ranking benchmark");
  bench->add_option("--n", n, "Items per corpus")->check(CLI::PositiveNumber);
  bench->add_option("--k", k, "k for top-k")->check(CLI::PositiveNumber);
  bench->add_option("--trials", trials, "Trials per setting")->check(CLI::PositiveNumber);
  bench->add_option("--seed", seed, "Base seed");
  bench->add_option("--noise", noise, "Comparator temperatures")->delimiter(',');
  bench->add_option("--algo", algos, "quadratic, heap, quickselect")
      ->delimiter(',')
      ->check(CLI::IsMember({"quadratic", "heap", "quickselect"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*index) return cmd_index(csv, column, dir, dim, seed);
  if (*run) return cmd_run(pipeline, metrics);
  if (*search) return cmd_search(dir, query, k, search_csv);
  return cmd_bench(n, k, trials, seed, noise, algos);
}
