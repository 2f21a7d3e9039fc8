#include "semops/join_ops.hpp"

#include <algorithm>
#include <set>

namespace semops {

namespace {

constexpr const char* kOp = "sem_join";

// Filters candidate pairs in one dispatch (or chunks of the session's batch
// size) and returns the ones that pass.
JoinPairs filter_pairs(Session& s, const Table& left, const Table& right, const Langex& l,
                       const JoinPairs& candidates) {
  JoinPairs out;
  LabelPolicy policy;
  policy.default_label = 1;
  const std::size_t chunk = std::max<std::size_t>(1, s.config().max_batch_requests);
  std::vector<LmRequest> requests;
  for (std::size_t begin = 0; begin < candidates.size(); begin += chunk) {
    const std::size_t end = std::min(candidates.size(), begin + chunk);
    requests.clear();
    requests.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const RowView rv{&right, candidates[i].second};
      requests.push_back(make_filter_request(l, RowView{&left, candidates[i].first}, &rv, {}));
    }
    const auto decisions = decide_labels(s, requests, std::nullopt, kOp, policy);
    for (std::size_t i = begin; i < end; ++i) {
      if (decisions[i - begin].label == 0) out.push_back(candidates[i]);
    }
  }
  return out;
}

std::shared_ptr<const SimIndex> right_index(const Table& right, const std::string& right_on) {
  auto idx = right.index_for(right_on);
  if (!idx) {
    throw Error(ErrorCode::kValidation,
                "sem_join: approximate patterns need a similarity index on right column '" +
                    right_on + "'");
  }
  return idx;
}

JoinPairs candidates_from_hits(const std::vector<std::vector<SearchHit>>& hits) {
  JoinPairs out;
  std::set<std::pair<RowId, RowId>> seen;
  for (RowId l = 0; l < hits.size(); ++l) {
    for (const SearchHit& h : hits[l]) {
      if (seen.emplace(l, h.row).second) out.emplace_back(l, h.row);
    }
  }
  return out;
}

}  // namespace

const char* join_pattern_name(JoinPattern p) {
  switch (p) {
    case JoinPattern::kNestedLoop:
      return "nested-loop";
    case JoinPattern::kSearchFilter:
      return "search-filter";
    case JoinPattern::kMapSearchFilter:
      return "map-search-filter";
  }
  return "unknown";
}

std::optional<JoinPattern> parse_join_pattern(std::string_view name) {
  if (name == "nested-loop") return JoinPattern::kNestedLoop;
  if (name == "search-filter") return JoinPattern::kSearchFilter;
  if (name == "map-search-filter") return JoinPattern::kMapSearchFilter;
  return std::nullopt;
}

std::optional<JoinType> parse_join_type(std::string_view name) {
  if (name == "inner") return JoinType::kInner;
  if (name == "left") return JoinType::kLeft;
  if (name == "right") return JoinType::kRight;
  if (name == "outer") return JoinType::kOuter;
  return std::nullopt;
}

std::size_t search_filter_k(std::size_t budget, std::size_t n_left) {
  if (n_left == 0) return 1;
  if (budget < n_left) {
    throw Error(ErrorCode::kBudget, "search-filter join: call budget " + std::to_string(budget) +
                                        " is below the left table size " + std::to_string(n_left));
  }
  return budget / n_left;
}

std::size_t map_search_filter_k(std::size_t budget, std::size_t n_left) {
  if (n_left == 0) return 1;
  if (budget < 2 * n_left) {
    throw Error(ErrorCode::kBudget, "map-search-filter join: call budget " + std::to_string(budget) +
                                        " is below 2 x left table size (" +
                                        std::to_string(2 * n_left) + ")");
  }
  return (budget - n_left) / n_left;
}

JoinPairs nested_loop_join(Session& s, const Table& left, const Table& right, const Langex& l,
                           JoinStats* stats) {
  JoinPairs out;
  const std::size_t n1 = left.row_count();
  const std::size_t n2 = right.row_count();
  if (n1 == 0 || n2 == 0) return out;
  LabelPolicy policy;
  policy.default_label = 1;
  const std::size_t chunk = std::max<std::size_t>(1, s.config().max_batch_requests);
  std::vector<LmRequest> requests;
  std::vector<std::pair<RowId, RowId>> ids;
  const std::size_t total = n1 * n2;
  for (std::size_t begin = 0; begin < total; begin += chunk) {
    const std::size_t end = std::min(total, begin + chunk);
    requests.clear();
    ids.clear();
    requests.reserve(end - begin);
    for (std::size_t p = begin; p < end; ++p) {
      const RowId li = static_cast<RowId>(p / n2);
      const RowId ri = static_cast<RowId>(p % n2);
      const RowView rv{&right, ri};
      requests.push_back(make_filter_request(l, RowView{&left, li}, &rv, {}));
      ids.emplace_back(li, ri);
    }
    const auto decisions = decide_labels(s, requests, std::nullopt, kOp, policy);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (decisions[i].label == 0) out.push_back(ids[i]);
    }
  }
  if (stats != nullptr) {
    stats->candidates = total;
    stats->filter_calls = total;
  }
  return out;
}

JoinPairs search_filter_join(Session& s, const Table& left, const Table& right, const Langex& l,
                             std::size_t budget, const std::string& left_on,
                             const std::string& right_on, JoinStats* stats) {
  const std::size_t k = search_filter_k(budget, left.row_count());
  right_index(right, right_on);
  if (left.row_count() == 0 || right.row_count() == 0) return {};
  const auto hits = sim_join_hits(s, left, left_on, right, right_on, std::min(k, right.row_count()));
  const JoinPairs candidates = candidates_from_hits(hits);
  JoinPairs out = filter_pairs(s, left, right, l, candidates);
  if (stats != nullptr) {
    stats->k = k;
    stats->candidates = candidates.size();
    stats->filter_calls = candidates.size();
  }
  return out;
}

JoinPairs map_search_filter_join(Session& s, const Table& left, const Table& right,
                                 const Langex& l, std::size_t budget,
                                 const std::vector<Demonstration>& map_demos,
                                 const std::string& left_on, const std::string& right_on,
                                 JoinStats* stats) {
  const std::size_t k = map_search_filter_k(budget, left.row_count());
  auto ridx = right_index(right, right_on);
  if (left.row_count() == 0 || right.row_count() == 0) return {};

  // Phase 1: project each left key into the right key's domain.
  const auto left_texts = text_column(left, left_on);
  std::vector<LmRequest> requests;
  requests.reserve(left.row_count());
  for (RowId r = 0; r < left.row_count(); ++r) {
    LmRequest req;
    req.system_instruction = kMapInstruction;
    req.user_prompt = "Given the following " + left_on + ":\n" + left_texts[r] +
                      "\n\nProduce the likely matching " + right_on + ". Respond with the " +
                      right_on + " only.";
    req.demonstrations = map_demos;
    req.task = TaskKind::kMap;
    req.sources = {SourceRef{&left, r, SourceRole::kLeft}};
    requests.push_back(std::move(req));
  }
  const auto mapped = s.complete(s.default_backend(), requests, kOp);
  std::vector<std::string> queries;
  queries.reserve(mapped.size());
  for (RowId r = 0; r < mapped.size(); ++r) {
    queries.push_back(mapped[r].error ? left_texts[r] : mapped[r].text);
  }

  // Phase 2: retrieve K right rows per projected key.
  const auto qv = s.embedder().embed(queries);
  if (s.embedder().dimension() != ridx->dimension()) {
    throw Error(ErrorCode::kValidation, "sem_join: embedder dimension differs from right index");
  }
  const std::size_t dim = ridx->dimension();
  const std::size_t depth = std::min(k, right.row_count());
  std::vector<std::vector<SearchHit>> hits(left.row_count());
  for (RowId r = 0; r < left.row_count(); ++r) {
    hits[r] = ridx->search(std::span<const float>(qv).subspan(r * dim, dim), depth);
  }

  // Phase 3: exact filter over the shortlisted pairs.
  const JoinPairs candidates = candidates_from_hits(hits);
  JoinPairs out = filter_pairs(s, left, right, l, candidates);
  if (stats != nullptr) {
    stats->k = k;
    stats->map_calls = left.row_count();
    stats->candidates = candidates.size();
    stats->filter_calls = candidates.size();
  }
  return out;
}

Table sem_join(Session& s, const Table& left, const Table& right, const std::string& predicate,
               const JoinConfig& cfg, JoinStats* stats) {
  OpTimer timer(s.meter(), kOp);
  const Langex l = Langex::parse(predicate);
  const Schema rs = right.schema();
  validate(l, left.schema(), LangexMode::kJoin, &rs);
  const std::string left_on = cfg.left_on.empty() ? l.columns(Side::kLeft).front() : cfg.left_on;
  const std::string right_on =
      cfg.right_on.empty() ? l.columns(Side::kRight).front() : cfg.right_on;
  if (!left.has_column(left_on)) throw Error(ErrorCode::kValidation, "sem_join: unknown left key '" + left_on + "'");
  if (!right.has_column(right_on)) throw Error(ErrorCode::kValidation, "sem_join: unknown right key '" + right_on + "'");

  const MeterCounts before = s.meter().for_op(kOp);
  JoinPairs pairs;
  if (cfg.pattern == JoinPattern::kNestedLoop) {
    pairs = nested_loop_join(s, left, right, l, stats);
  } else {
    if (!cfg.call_budget) {
      throw Error(ErrorCode::kValidation,
                  std::string("sem_join: pattern ") + join_pattern_name(cfg.pattern) +
                      " requires call_budget");
    }
    if (cfg.pattern == JoinPattern::kSearchFilter) {
      pairs = search_filter_join(s, left, right, l, *cfg.call_budget, left_on, right_on, stats);
    } else {
      pairs = map_search_filter_join(s, left, right, l, *cfg.call_budget, cfg.map_demos, left_on,
                                     right_on, stats);
    }
    const std::uint64_t spent = s.meter().for_op(kOp).lm_calls - before.lm_calls;
    if (spent > *cfg.call_budget) {
      throw Error(ErrorCode::kRuntime, "sem_join: spent " + std::to_string(spent) +
                                           " calls, over the budget of " +
                                           std::to_string(*cfg.call_budget));
    }
  }

  std::vector<RowPair> rows;
  rows.reserve(pairs.size());
  const bool keep_left = cfg.type == JoinType::kLeft || cfg.type == JoinType::kOuter;
  const bool keep_right = cfg.type == JoinType::kRight || cfg.type == JoinType::kOuter;
  std::vector<bool> right_matched(right.row_count(), false);
  std::size_t p = 0;
  for (RowId li = 0; li < left.row_count(); ++li) {
    bool matched = false;
    for (; p < pairs.size() && pairs[p].first == li; ++p) {
      rows.push_back(RowPair{pairs[p].first, pairs[p].second});
      right_matched[pairs[p].second] = true;
      matched = true;
    }
    if (!matched && keep_left) rows.push_back(RowPair{li, std::nullopt});
  }
  if (keep_right) {
    for (RowId ri = 0; ri < right.row_count(); ++ri) {
      if (!right_matched[ri]) rows.push_back(RowPair{std::nullopt, ri});
    }
  }
  return join_tables(left, right, rows);
}

}  // namespace semops
