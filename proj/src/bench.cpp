#include "semops/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <random>
#include <unordered_set>

#include "json.hpp"

#include "semops/session.hpp"

namespace semops {

namespace {

const char* const kTasks[] = {"image classification", "question answering", "entity matching",
                              "fact verification",    "relation extraction", "code generation",
                              "summarization",        "named entity recognition"};
const char* const kMethods[] = {"contrastive pretraining", "retrieval augmentation",
                                "a sparse mixture of experts", "curriculum learning",
                                "a graph neural network", "knowledge distillation"};

// Uniform double in [0, 1) from the top 53 bits; identical on every platform,
// unlike std::uniform_real_distribution.
double unit_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

BenchCorpus gen_bench(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "gen_bench: n must be >= 1");
  std::mt19937_64 rng(seed);
  Column id{{"id", ColumnKind::kInt}, {}};
  Column abstract{{"abstract", ColumnKind::kText}, {}};
  Column key{{"key", ColumnKind::kFloat}, {}};
  std::vector<double> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = 100.0 * unit_double(rng);
    const auto task = kTasks[rng() % std::size(kTasks)];
    const auto method = kMethods[rng() % std::size(kMethods)];
    id.cells.emplace_back(static_cast<std::int64_t>(i));
    abstract.cells.emplace_back("We study " + std::string(task) + " with " + method +
                                ". On our benchmark the approach reaches an accuracy of " +
                                fixed2(keys[i]) + "%.");
    key.cells.emplace_back(keys[i]);
  }
  BenchCorpus c{Table({std::move(id), std::move(abstract), std::move(key)}), {}};
  c.truth.resize(n);
  for (RowId r = 0; r < n; ++r) c.truth[r] = r;
  std::stable_sort(c.truth.begin(), c.truth.end(),
                   [&](RowId a, RowId b) { return keys[a] > keys[b]; });
  return c;
}

double ndcg_at_k(std::span<const RowId> ranked, std::span<const RowId> truth, std::size_t k) {
  if (ranked.empty()) throw Error(ErrorCode::kInvalidArgument, "ndcg_at_k: empty ranking");
  const std::size_t relevant = std::min(k, truth.size());
  const std::unordered_set<RowId> top(truth.begin(), truth.begin() + relevant);
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) {
    if (top.contains(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  }
  double idcg = 0.0;
  for (std::size_t i = 0; i < relevant; ++i) idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

std::vector<BenchRow> bench_ranking(const BenchOptions& opts) {
  std::vector<BenchCorpus> corpora;
  corpora.reserve(opts.trials);
  for (std::size_t i = 0; i < opts.trials; ++i) corpora.push_back(gen_bench(opts.n, opts.seed + i));

  std::vector<BenchRow> rows;
  for (double temp : opts.temperatures) {
    for (TopkAlgorithm algo : opts.algorithms) {
      BenchRow row;
      row.algorithm = algo;
      row.temperature = temp;
      row.trials = opts.trials;
      for (std::size_t i = 0; i < opts.trials; ++i) {
        KeyedOracleConfig oc;
        oc.key_column = "key";
        oc.temperature = temp;
        oc.seed = mix64(opts.seed + i);
        SessionConfig sc;
        sc.parallelism = opts.parallelism;
        Session s(std::make_shared<KeyedOracleBackend>("keyed", oc), nullptr, sc);
        TopkConfig tc;
        tc.k = opts.k;
        tc.algorithm = algo;
        tc.pivot.seed = opts.seed + i;
        const auto start = std::chrono::steady_clock::now();
        const auto ranked = sem_topk_rows(s, corpora[i].table, kBenchCriterion, tc);
        row.mean_wall_s +=
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const MeterCounts m = s.meter().total();
        row.mean_ndcg += ndcg_at_k(ranked, corpora[i].truth, 10);
        row.mean_lm_calls += static_cast<double>(m.lm_calls);
        row.mean_batches += static_cast<double>(m.batches);
        row.max_batch_size = std::max(row.max_batch_size, m.max_batch_size);
      }
      if (opts.trials > 0) {
        const double t = static_cast<double>(opts.trials);
        row.mean_ndcg /= t;
        row.mean_lm_calls /= t;
        row.mean_batches /= t;
        row.mean_wall_s /= t;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string bench_report_json(const BenchOptions& opts, std::span<const BenchRow> rows) {
  nlohmann::ordered_json j;
  j["n"] = opts.n;
  j["k"] = opts.k;
  j["trials"] = opts.trials;
  j["seed"] = opts.seed;
  auto& results = j["results"] = nlohmann::ordered_json::array();
  for (const BenchRow& r : rows) {
    nlohmann::ordered_json e;
    e["algorithm"] = topk_algorithm_name(r.algorithm);
    e["temperature"] = r.temperature;
    e["mean_ndcg_at_10"] = r.mean_ndcg;
    e["mean_lm_calls"] = r.mean_lm_calls;
    e["mean_batches"] = r.mean_batches;
    e["max_batch_size"] = r.max_batch_size;
    e["mean_wall_s"] = r.mean_wall_s;
    results.push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace semops
