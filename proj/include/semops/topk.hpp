#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semops/langex.hpp"
#include "semops/row_ops.hpp"
#include "semops/session.hpp"

namespace semops {

extern const char* const kCompareInstruction;

enum class TopkAlgorithm { kQuadratic, kHeap, kQuickselect };

const char* topk_algorithm_name(TopkAlgorithm a);
std::optional<TopkAlgorithm> parse_topk_algorithm(std::string_view name);

struct PivotStrategy {
  enum class Kind { kRandom, kSemIndex };
  Kind kind = Kind::kRandom;
  std::uint64_t seed = 0;
  // First pivot is the item at similarity rank k + epsilon; ceil(k/2) when unset.
  std::optional<std::size_t> epsilon;
};

struct TopkConfig {
  std::size_t k = 10;
  TopkAlgorithm algorithm = TopkAlgorithm::kQuickselect;
  PivotStrategy pivot;
  std::optional<CascadeConfig> cascade;
  std::vector<std::string> group_by;
};

enum class OutcomeSource { kModel, kProxy, kOracle, kCache, kDefault };

struct ComparisonOutcome {
  RowId first = 0;
  RowId second = 0;
  RowId winner = 0;
  OutcomeSource source = OutcomeSource::kModel;
};

using RowPairList = std::vector<std::pair<RowId, RowId>>;

// Answers "which of the two rows ranks higher". One call to compare() is one
// dispatch: all pairs in it may run concurrently.
class Comparator {
 public:
  virtual ~Comparator() = default;
  virtual std::vector<ComparisonOutcome> compare(std::span<const std::pair<RowId, RowId>> pairs) = 0;

  bool better(RowId a, RowId b);
};

// Pairwise LM comparisons with the fixed top-k instruction. The lower row id
// is always Document 1. Outcomes are cached per unordered pair.
class LmComparator : public Comparator {
 public:
  LmComparator(Session& s, const Table& t, const Langex& criterion,
               std::optional<CascadeConfig> cascade = std::nullopt, std::string op = "sem_topk");

  std::vector<ComparisonOutcome> compare(std::span<const std::pair<RowId, RowId>> pairs) override;

  LmRequest make_request(RowId doc1, RowId doc2) const;
  std::uint64_t criterion_hash() const { return criterion_hash_; }

 private:
  Session& s_;
  const Table& t_;
  Langex criterion_;
  std::optional<CascadeConfig> cascade_;
  std::string op_;
  std::string question_;
  std::uint64_t criterion_hash_;
};

// Comparator from a plain predicate; counts comparisons and dispatches.
class FunctionComparator : public Comparator {
 public:
  explicit FunctionComparator(std::function<bool(RowId, RowId)> a_better)
      : a_better_(std::move(a_better)) {}

  std::vector<ComparisonOutcome> compare(std::span<const std::pair<RowId, RowId>> pairs) override;

  std::size_t comparisons() const { return comparisons_; }
  std::size_t dispatches() const { return dispatches_; }
  std::size_t max_dispatch() const { return max_dispatch_; }

 private:
  std::function<bool(RowId, RowId)> a_better_;
  std::size_t comparisons_ = 0;
  std::size_t dispatches_ = 0;
  std::size_t max_dispatch_ = 0;
};

// Ranks by win count over all pairs (one dispatch); ties by ascending row id.
std::vector<RowId> quadratic_topk(std::span<const RowId> items, Comparator& cmp, std::size_t k);

// Size-k heap over a single pass; every comparison is its own dispatch.
std::vector<RowId> heap_topk(std::span<const RowId> items, Comparator& cmp, std::size_t k);

// Chooses the pivot position within `live` for a quickselect round.
using PivotPicker = std::function<std::size_t(std::span<const RowId> live, std::size_t k, int round)>;

PivotPicker random_pivot(std::uint64_t seed);
// Round 0 uses the live item at rank k+epsilon of `similarity_order` (rows
// sorted by similarity to the query, most similar first); later rounds are random.
PivotPicker ranked_pivot(std::vector<RowId> similarity_order, std::size_t epsilon,
                         std::uint64_t seed);

// Pivot rounds with one dispatch each, then a quadratic pass over the k
// selected items to order them.
std::vector<RowId> quickselect_topk(std::span<const RowId> items, Comparator& cmp, std::size_t k,
                                    const PivotPicker& pick);

Table sem_topk(Session& s, const Table& t, const std::string& criterion, const TopkConfig& cfg);

// Row ids selected by sem_topk, per group in group order, best first.
std::vector<RowId> sem_topk_rows(Session& s, const Table& t, const std::string& criterion,
                                 const TopkConfig& cfg);

}  // namespace semops
