#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "semops/table.hpp"
#include "semops/topk.hpp"

namespace semops {

// Synthetic ranking corpus: each row is a short abstract stating a hidden
// accuracy key (uniform on [0, 100]); the key is also kept in column "key".
struct BenchCorpus {
  Table table;
  std::vector<RowId> truth;  // descending key, ties by ascending row id
};

BenchCorpus gen_bench(std::size_t n, std::uint64_t seed);

inline constexpr const char* kBenchCriterion = "the {abstract} reports the highest accuracy";

// Binary relevance: a ranked row counts iff it is among truth's first k.
double ndcg_at_k(std::span<const RowId> ranked, std::span<const RowId> truth, std::size_t k = 10);

struct BenchOptions {
  std::size_t n = 200;
  std::size_t k = 10;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  std::vector<double> temperatures = {0.0};
  std::vector<TopkAlgorithm> algorithms = {TopkAlgorithm::kQuadratic, TopkAlgorithm::kHeap,
                                           TopkAlgorithm::kQuickselect};
  std::size_t parallelism = 64;
};

struct BenchRow {
  TopkAlgorithm algorithm = TopkAlgorithm::kQuadratic;
  double temperature = 0.0;
  std::size_t trials = 0;
  double mean_ndcg = 0.0;
  double mean_lm_calls = 0.0;
  double mean_batches = 0.0;
  std::uint64_t max_batch_size = 0;
  double mean_wall_s = 0.0;
};

// Every (temperature, algorithm) pair runs the same trials: trial i uses
// corpus seed + i and a fresh session.
std::vector<BenchRow> bench_ranking(const BenchOptions& opts);

std::string bench_report_json(const BenchOptions& opts, std::span<const BenchRow> rows);

}  // namespace semops
