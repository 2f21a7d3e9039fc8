#include "semops/topk.hpp"

#include <algorithm>
#include <map>
#include <random>

namespace semops {

const char* const kCompareInstruction =
    "Your job is to to select and return the most relevant document to the user's question. "
    "Carefully read the user's question and the two documents provided below. Respond only with "
    "the label of the document such as \"Document NUMBER\". NUMBER must be either 1 or 2, "
    "depending on which document is most relevant. You must pick a number and cannot say things "
    "like \"None\" or \"Neither\".";

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

OutcomeSource to_outcome_source(DecisionSource d) {
  switch (d) {
    case DecisionSource::kProxy:
      return OutcomeSource::kProxy;
    case DecisionSource::kOracle:
      return OutcomeSource::kOracle;
    case DecisionSource::kDefault:
      return OutcomeSource::kDefault;
    case DecisionSource::kModel:
      break;
  }
  return OutcomeSource::kModel;
}

// Orders `items` by wins over all pairs; ties by ascending row id.
std::vector<RowId> rank_by_wins(std::span<const RowId> items, Comparator& cmp) {
  RowPairList pairs;
  pairs.reserve(items.size() < 2 ? 0 : items.size() * (items.size() - 1) / 2);
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) pairs.emplace_back(items[i], items[j]);
  }
  std::map<RowId, std::size_t> wins;
  for (RowId r : items) wins[r] = 0;
  if (!pairs.empty()) {
    for (const ComparisonOutcome& o : cmp.compare(pairs)) ++wins[o.winner];
  }
  std::vector<RowId> order(items.begin(), items.end());
  std::sort(order.begin(), order.end(), [&](RowId a, RowId b) {
    if (wins[a] != wins[b]) return wins[a] > wins[b];
    return a < b;
  });
  return order;
}

}  // namespace

const char* topk_algorithm_name(TopkAlgorithm a) {
  switch (a) {
    case TopkAlgorithm::kQuadratic:
      return "quadratic";
    case TopkAlgorithm::kHeap:
      return "heap";
    case TopkAlgorithm::kQuickselect:
      return "quickselect";
  }
  return "unknown";
}

std::optional<TopkAlgorithm> parse_topk_algorithm(std::string_view name) {
  if (name == "quadratic") return TopkAlgorithm::kQuadratic;
  if (name == "heap") return TopkAlgorithm::kHeap;
  if (name == "quickselect") return TopkAlgorithm::kQuickselect;
  return std::nullopt;
}

bool Comparator::better(RowId a, RowId b) {
  const std::pair<RowId, RowId> p{a, b};
  return compare(std::span(&p, 1)).front().winner == a;
}

LmComparator::LmComparator(Session& s, const Table& t, const Langex& criterion,
                           std::optional<CascadeConfig> cascade, std::string op)
    : s_(s),
      t_(t),
      criterion_(criterion),
      cascade_(std::move(cascade)),
      op_(std::move(op)),
      question_(criterion.instruction_text()),
      criterion_hash_(mix64(fnv1a(criterion.source()) ^ mix64(t.uid()))) {}

LmRequest LmComparator::make_request(RowId doc1, RowId doc2) const {
  LmRequest req;
  req.system_instruction = kCompareInstruction;
  req.label_set = {"Document 1", "Document 2"};
  req.task = TaskKind::kCompare;
  req.max_output_chars = 32;
  req.user_prompt = "Question: " + question_ + "\n\nDocument 1: " +
                    row_document(criterion_, RowView{&t_, doc1}) +
                    "\n\nDocument 2: " + row_document(criterion_, RowView{&t_, doc2});
  req.sources = {SourceRef{&t_, doc1, SourceRole::kDocument1},
                 SourceRef{&t_, doc2, SourceRole::kDocument2}};
  return req;
}

std::vector<ComparisonOutcome> LmComparator::compare(
    std::span<const std::pair<RowId, RowId>> pairs) {
  std::vector<ComparisonOutcome> out(pairs.size());
  std::vector<LmRequest> requests;
  std::vector<std::pair<RowId, RowId>> asked;  // (doc1, doc2) per request
  std::map<std::pair<RowId, RowId>, std::size_t> request_of;
  std::vector<std::ptrdiff_t> pending(pairs.size(), -1);
  std::uint64_t hits = 0;

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [a, b] = pairs[i];
    if (a == b) throw Error(ErrorCode::kInvalidArgument, "compare: identical rows");
    const RowId lo = std::min(a, b);
    const RowId hi = std::max(a, b);
    out[i] = ComparisonOutcome{a, b, lo, OutcomeSource::kCache};
    if (auto w = s_.pair_cache().lookup(criterion_hash_, lo, hi)) {
      out[i].winner = *w;
      ++hits;
      continue;
    }
    auto [it, inserted] = request_of.try_emplace({lo, hi}, requests.size());
    if (inserted) {
      requests.push_back(make_request(lo, hi));
      asked.emplace_back(lo, hi);
    }
    pending[i] = static_cast<std::ptrdiff_t>(it->second);
  }
  if (hits) s_.meter().bump(op_, &MeterCounts::cache_hits, hits);
  if (requests.empty()) return out;

  LabelPolicy policy;
  policy.default_label = 0;  // unusable answers fall back to Document 1
  policy.retry_malformed = true;
  const auto decisions = decide_labels(s_, requests, cascade_, op_, policy);
  for (std::size_t r = 0; r < requests.size(); ++r) {
    const RowId winner = decisions[r].label == 0 ? asked[r].first : asked[r].second;
    s_.pair_cache().store(criterion_hash_, asked[r].first, asked[r].second, winner);
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pending[i] < 0) continue;
    const std::size_t r = static_cast<std::size_t>(pending[i]);
    out[i].winner = decisions[r].label == 0 ? asked[r].first : asked[r].second;
    out[i].source = to_outcome_source(decisions[r].source);
  }
  return out;
}

std::vector<ComparisonOutcome> FunctionComparator::compare(
    std::span<const std::pair<RowId, RowId>> pairs) {
  std::vector<ComparisonOutcome> out;
  out.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    out.push_back(ComparisonOutcome{a, b, a_better_(a, b) ? a : b, OutcomeSource::kModel});
  }
  comparisons_ += pairs.size();
  ++dispatches_;
  max_dispatch_ = std::max(max_dispatch_, pairs.size());
  return out;
}

std::vector<RowId> quadratic_topk(std::span<const RowId> items, Comparator& cmp, std::size_t k) {
  auto order = rank_by_wins(items, cmp);
  order.resize(std::min(k, order.size()));
  return order;
}

std::vector<RowId> heap_topk(std::span<const RowId> items, Comparator& cmp, std::size_t k) {
  if (k == 0) return {};
  // Min-heap on rank: heap[0] is the weakest member of the current top set.
  std::vector<RowId> heap;
  heap.reserve(k);
  auto sift_down = [&](std::size_t i) {
    for (;;) {
      const std::size_t l = 2 * i + 1;
      const std::size_t r = l + 1;
      if (l >= heap.size()) return;
      std::size_t weaker = l;
      if (r < heap.size() && cmp.better(heap[l], heap[r])) weaker = r;
      if (!cmp.better(heap[i], heap[weaker])) return;
      std::swap(heap[i], heap[weaker]);
      i = weaker;
    }
  };
  for (RowId x : items) {
    if (heap.size() < k) {
      heap.push_back(x);
      std::size_t i = heap.size() - 1;
      while (i > 0) {
        const std::size_t p = (i - 1) / 2;
        if (!cmp.better(heap[p], heap[i])) break;
        std::swap(heap[p], heap[i]);
        i = p;
      }
      continue;
    }
    if (cmp.better(x, heap[0])) {
      heap[0] = x;
      sift_down(0);
    }
  }
  std::vector<RowId> drained;
  drained.reserve(heap.size());
  while (!heap.empty()) {
    drained.push_back(heap[0]);
    heap[0] = heap.back();
    heap.pop_back();
    if (!heap.empty()) sift_down(0);
  }
  std::reverse(drained.begin(), drained.end());
  return drained;
}

PivotPicker random_pivot(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](std::span<const RowId> live, std::size_t, int) {
    return static_cast<std::size_t>((*rng)() % live.size());
  };
}

PivotPicker ranked_pivot(std::vector<RowId> similarity_order, std::size_t epsilon,
                         std::uint64_t seed) {
  auto fallback = random_pivot(seed);
  auto order = std::make_shared<const std::vector<RowId>>(std::move(similarity_order));
  return [order, epsilon, fallback](std::span<const RowId> live, std::size_t k, int round) {
    if (round > 0) return fallback(live, k, round);
    std::map<RowId, std::size_t> pos_in_live;
    for (std::size_t i = 0; i < live.size(); ++i) pos_in_live[live[i]] = i;
    const std::size_t target = std::min(k + epsilon, live.size());  // 1-based rank
    std::size_t seen = 0;
    for (RowId r : *order) {
      auto it = pos_in_live.find(r);
      if (it == pos_in_live.end()) continue;
      if (++seen == target) return it->second;
    }
    return fallback(live, k, round);
  };
}

std::vector<RowId> quickselect_topk(std::span<const RowId> items, Comparator& cmp, std::size_t k,
                                    const PivotPicker& pick) {
  std::vector<RowId> selected;
  std::vector<RowId> live(items.begin(), items.end());
  std::size_t need = std::min(k, live.size());
  for (int round = 0; need > 0; ++round) {
    if (live.size() <= need) {
      selected.insert(selected.end(), live.begin(), live.end());
      break;
    }
    const std::size_t p = pick(live, need, round);
    const RowId pivot = live[p];
    RowPairList pairs;
    pairs.reserve(live.size() - 1);
    for (RowId r : live) {
      if (r != pivot) pairs.emplace_back(r, pivot);
    }
    const auto outcomes = cmp.compare(pairs);
    std::vector<RowId> better;
    std::vector<RowId> worse;
    for (const ComparisonOutcome& o : outcomes) {
      (o.winner == o.first ? better : worse).push_back(o.first);
    }
    if (better.size() >= need) {
      live = std::move(better);
    } else if (better.size() + 1 == need) {
      selected.insert(selected.end(), better.begin(), better.end());
      selected.push_back(pivot);
      break;
    } else {
      selected.insert(selected.end(), better.begin(), better.end());
      selected.push_back(pivot);
      need -= better.size() + 1;
      live = std::move(worse);
    }
  }
  return rank_by_wins(selected, cmp);
}

std::vector<RowId> sem_topk_rows(Session& s, const Table& t, const std::string& criterion,
                                 const TopkConfig& cfg) {
  const Langex l = Langex::parse(criterion);
  validate(l, t.schema(), LangexMode::kSingle);
  if (cfg.k == 0) throw Error(ErrorCode::kInvalidArgument, "sem_topk: k must be >= 1");
  for (const auto& g : cfg.group_by) {
    if (!t.has_column(g)) throw Error(ErrorCode::kValidation, "sem_topk: unknown group_by column '" + g + "'");
  }

  std::vector<RowId> similarity_order;
  if (cfg.algorithm == TopkAlgorithm::kQuickselect &&
      cfg.pivot.kind == PivotStrategy::Kind::kSemIndex) {
    std::shared_ptr<const SimIndex> idx;
    for (const std::string& col : l.columns(Side::kNone)) {
      if ((idx = t.index_for(col))) break;
    }
    if (!idx) {
      throw Error(ErrorCode::kValidation,
                  "sem_topk: index pivot needs a similarity index on a referenced column");
    }
    const std::vector<std::string> q{l.literal_text()};
    for (const SearchHit& h : idx->rank_all(s.embedder().embed(q))) similarity_order.push_back(h.row);
  }

  const auto groups = partition_by_equality(t, cfg.group_by);
  LmComparator cmp(s, t, l, cfg.cascade);
  std::vector<RowId> out;
  for (const Group& g : groups) {
    std::vector<RowId> chosen;
    switch (cfg.algorithm) {
      case TopkAlgorithm::kQuadratic:
        chosen = quadratic_topk(g.rows, cmp, cfg.k);
        break;
      case TopkAlgorithm::kHeap:
        chosen = heap_topk(g.rows, cmp, cfg.k);
        break;
      case TopkAlgorithm::kQuickselect: {
        PivotPicker pick = random_pivot(cfg.pivot.seed);
        if (cfg.pivot.kind == PivotStrategy::Kind::kSemIndex) {
          const std::size_t eps = cfg.pivot.epsilon.value_or((cfg.k + 1) / 2);
          pick = ranked_pivot(similarity_order, eps, cfg.pivot.seed);
        }
        chosen = quickselect_topk(g.rows, cmp, cfg.k, pick);
        break;
      }
    }
    out.insert(out.end(), chosen.begin(), chosen.end());
  }
  return out;
}

Table sem_topk(Session& s, const Table& t, const std::string& criterion, const TopkConfig& cfg) {
  OpTimer timer(s.meter(), "sem_topk");
  const auto rows = sem_topk_rows(s, t, criterion, cfg);
  return t.select_rows(rows);
}

}  // namespace semops
