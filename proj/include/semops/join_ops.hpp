#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "semops/langex.hpp"
#include "semops/row_ops.hpp"
#include "semops/session.hpp"

namespace semops {

enum class JoinPattern { kNestedLoop, kSearchFilter, kMapSearchFilter };
enum class JoinType { kInner, kLeft, kRight, kOuter };

const char* join_pattern_name(JoinPattern p);
std::optional<JoinPattern> parse_join_pattern(std::string_view name);
std::optional<JoinType> parse_join_type(std::string_view name);

struct JoinConfig {
  JoinPattern pattern = JoinPattern::kNestedLoop;
  std::optional<std::size_t> call_budget;  // required by the approximate patterns
  std::vector<Demonstration> map_demos;
  JoinType type = JoinType::kInner;
  // Join keys; default to the first left / right placeholder columns.
  std::string left_on;
  std::string right_on;
};

struct JoinStats {
  std::size_t k = 0;            // retrieval depth of the approximate patterns
  std::size_t map_calls = 0;
  std::size_t candidates = 0;   // distinct (left, right) pairs filtered
  std::size_t filter_calls = 0;
};

using JoinPairs = std::vector<std::pair<RowId, RowId>>;

// K for search-filter: floor(budget / N1). Throws Error(kBudget) if < 1.
std::size_t search_filter_k(std::size_t budget, std::size_t n_left);
// K for map-search-filter: floor((budget - N1) / N1). Requires budget >= 2 N1.
std::size_t map_search_filter_k(std::size_t budget, std::size_t n_left);

// Evaluates the predicate on every (left, right) pair, in left-major order.
JoinPairs nested_loop_join(Session& s, const Table& left, const Table& right, const Langex& l,
                           JoinStats* stats = nullptr);

JoinPairs search_filter_join(Session& s, const Table& left, const Table& right, const Langex& l,
                             std::size_t budget, const std::string& left_on,
                             const std::string& right_on, JoinStats* stats = nullptr);

JoinPairs map_search_filter_join(Session& s, const Table& left, const Table& right,
                                 const Langex& l, std::size_t budget,
                                 const std::vector<Demonstration>& map_demos,
                                 const std::string& left_on, const std::string& right_on,
                                 JoinStats* stats = nullptr);

Table sem_join(Session& s, const Table& left, const Table& right, const std::string& predicate,
               const JoinConfig& cfg, JoinStats* stats = nullptr);

}  // namespace semops
