// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "semops/agg_ops.hpp"
#include "semops/bench.hpp"
#include "semops/embedding_index.hpp"
#include "semops/join_ops.hpp"
#include "semops/row_ops.hpp"
#include "semops/session.hpp"
#include "semops/topk.hpp"
#include "support.hpp"

using namespace semops;
using namespace semops::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

std::shared_ptr<KeyedOracleBackend> keyed(std::string id, double temperature, std::uint64_t seed) {
  KeyedOracleConfig c;
  c.key_column = "key";
  c.temperature = temperature;
  c.seed = seed;
  return std::make_shared<KeyedOracleBackend>(std::move(id), c);
}

// 1 ------------------------------------------------------------------------
Outcome call_counts() {
  Outcome o;
  std::mt19937_64 rng(1);
  for (std::size_t n : {100u, 200u}) {
    std::vector<double> keys(n);
    for (double& k : keys) k = uniform(rng, 0, 100);
    const Table t = keyed_table(keys, rng);
    Session s(keyed("oracle", 0.0, 1));
    TopkConfig cfg;
    cfg.k = 10;
    cfg.algorithm = TopkAlgorithm::kQuadratic;
    sem_topk(s, t, "the {text} is best", cfg);
    const std::uint64_t expect = n * (n - 1) / 2;
    const std::uint64_t got = s.meter().for_op("sem_topk").lm_calls;
    if (got != expect) o.fail("quadratic n=" + std::to_string(n) + ": " + std::to_string(got));
  }

  std::vector<std::vector<std::string>> lrows(250), rrows(24370);
  for (std::size_t i = 0; i < lrows.size(); ++i) lrows[i] = {"paper " + std::to_string(i)};
  for (std::size_t i = 0; i < rrows.size(); ++i) rrows[i] = {"reaction " + std::to_string(i)};
  const Table left = make_text_table({"abstract"}, lrows);
  const Table right = make_text_table({"reaction"}, rrows);
  SessionConfig sc;
  Session s(ScriptedBackend::constant("free", "True"), nullptr, sc);
  const Langex l = Langex::parse("the {abstract:left} mentions the {reaction:right}");
  const auto t0 = Clock::now();
  const auto pairs = nested_loop_join(s, left, right, l);
  const double secs = seconds_since(t0);
  const std::uint64_t calls = s.meter().for_op("sem_join").lm_calls;
  if (calls != 6'092'500) o.fail("nested-loop calls " + std::to_string(calls));
  if (pairs.size() != 6'092'500) o.fail("nested-loop pairs " + std::to_string(pairs.size()));
  if (secs >= 10.0) o.fail("nested-loop took " + std::to_string(secs) + " s");
  char buf[160];
  std::snprintf(buf, sizeof buf, "4950 / 19900 comparisons, 6092500 join calls in %.2f s", secs);
  if (o.pass) o.detail = buf;
  return o;
}

// 2 ------------------------------------------------------------------------
Outcome budget_compliance() {
  Outcome o;
  std::mt19937_64 rng(2);
  auto emb = std::make_shared<MockEmbedder>(64, 7);
  std::size_t runs = 0;
  for (int cfg = 0; cfg < 200; ++cfg) {
    const std::size_t n1 = 1 + rng() % 40;
    const std::size_t n2 = 1 + rng() % 80;
    auto make = [&](std::size_t n) {
      std::vector<double> keys(n);
      for (double& k : keys) k = static_cast<double>(rng() % 25);
      return keyed_table(keys, rng);
    };
    const Table left = make(n1);
    Table right = make(n2);
    right = right.with_index("text", sem_index(right, "text", "", *emb));
    const Langex l = Langex::parse("{text:left} matches {text:right}");

    for (JoinPattern pat : {JoinPattern::kSearchFilter, JoinPattern::kMapSearchFilter}) {
      const std::size_t floor = pat == JoinPattern::kSearchFilter ? n1 : 2 * n1;
      const std::size_t budget = floor + rng() % (n1 * n2 + n1 + 1);
      KeyedOracleConfig kc;
      kc.key_column = "key";
      kc.map_column = "text";
      auto rec = std::make_shared<RecordingBackend>(std::make_shared<KeyedOracleBackend>("m", kc));
      Session s(rec, emb);
      JoinStats stats;
      if (pat == JoinPattern::kSearchFilter) {
        search_filter_join(s, left, right, l, budget, "text", "text", &stats);
      } else {
        map_search_filter_join(s, left, right, l, budget, {}, "text", "text", &stats);
      }
      const auto seen = rec->seen();
      const std::size_t maps = std::count_if(seen.begin(), seen.end(), [](const LmRequest& r) {
        return r.task == TaskKind::kMap;
      });
      const std::uint64_t calls = s.meter().total().lm_calls;
      if (calls > budget || seen.size() > budget) {
        o.fail("budget " + std::to_string(budget) + " exceeded: " + std::to_string(calls));
      }
      if (pat == JoinPattern::kMapSearchFilter && maps != n1) {
        o.fail("map calls " + std::to_string(maps) + " != N1 " + std::to_string(n1));
      }
      if (pat == JoinPattern::kSearchFilter && maps != 0) o.fail("search-filter issued map calls");
      ++runs;
    }
  }
  if (o.pass) o.detail = std::to_string(runs) + " budgeted joins within budget";
  return o;
}

// 3 ------------------------------------------------------------------------
Outcome topk_oracle() {
  Outcome o;
  const auto t0 = Clock::now();
  std::size_t cases = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    for (std::size_t n : {20u, 100u}) {
      std::mt19937_64 rng(seed * 1000 + n);
      std::vector<double> keys(n);
      for (double& k : keys) k = uniform(rng, 0, 100);
      const Table t = keyed_table(keys, rng);
      const auto truth = sorted_by_key(keys);
      for (std::size_t k : {1u, 5u, 10u}) {
        for (TopkAlgorithm a :
             {TopkAlgorithm::kQuadratic, TopkAlgorithm::kHeap, TopkAlgorithm::kQuickselect}) {
          Session s(keyed("oracle", 0.0, seed));
          TopkConfig cfg;
          cfg.k = k;
          cfg.algorithm = a;
          cfg.pivot.seed = seed;
          const auto got = sem_topk_rows(s, t, "the {text} is best", cfg);
          const std::vector<RowId> want(truth.begin(), truth.begin() + k);
          if (got != want) {
            o.fail(std::string(topk_algorithm_name(a)) + " seed " + std::to_string(seed) + " n " +
                   std::to_string(n) + " k " + std::to_string(k));
          }
          ++cases;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 30.0) o.fail("took " + std::to_string(secs) + " s");
  if (o.pass) o.detail = std::to_string(cases) + " cases exact in " + std::to_string(secs) + " s";
  return o;
}

// 4 ------------------------------------------------------------------------
Outcome join_oracle() {
  Outcome o;
  std::mt19937_64 rng(4);
  auto name_of = [](std::int64_t key) {
    std::mt19937_64 r(static_cast<std::uint64_t>(key) * 7919 + 1);
    return "entity " + std::to_string(key) + " " + random_sentence(r, 3);
  };
  auto make = [&](std::size_t n) {
    Column name{{"name", ColumnKind::kText}, {}};
    Column key{{"key", ColumnKind::kInt}, {}};
    for (std::size_t i = 0; i < n; ++i) {
      const auto k = static_cast<std::int64_t>(rng() % 60);
      name.cells.emplace_back(name_of(k));
      key.cells.emplace_back(k);
    }
    return Table({std::move(name), std::move(key)});
  };
  const Table left = make(50);
  auto emb = std::make_shared<MockEmbedder>(64, 3);
  Table right = make(200);
  right = right.with_index("name", sem_index(right, "name", "", *emb));

  // Hash join on the key.
  std::multimap<std::int64_t, RowId> by_key;
  for (RowId r = 0; r < right.row_count(); ++r) by_key.emplace(std::get<std::int64_t>(right.cell("key", r)), r);
  std::set<std::pair<RowId, RowId>> truth;
  std::size_t multiplicity = 1;
  for (RowId l = 0; l < left.row_count(); ++l) {
    const auto k = std::get<std::int64_t>(left.cell("key", l));
    multiplicity = std::max<std::size_t>(multiplicity, by_key.count(k));
    for (auto [it, end] = by_key.equal_range(k); it != end; ++it) truth.emplace(l, it->second);
  }

  KeyedOracleConfig kc;
  kc.key_column = "key";
  kc.map_column = "name";
  Session s(std::make_shared<KeyedOracleBackend>("keys", kc), emb);
  const Langex l = Langex::parse("{name:left} is the same entity as {name:right}");
  const auto nested = nested_loop_join(s, left, right, l);
  const std::set<std::pair<RowId, RowId>> nested_set(nested.begin(), nested.end());
  if (nested_set != truth) o.fail("nested-loop differs from hash join");

  for (std::size_t k : {std::size_t{1}, multiplicity}) {
    const auto sf = search_filter_join(s, left, right, l, 50 * k, "name", "name");
    const auto msf = map_search_filter_join(s, left, right, l, 50 + 50 * k, {}, "name", "name");
    for (const auto* out : {&sf, &msf}) {
      const std::set<std::pair<RowId, RowId>> got(out->begin(), out->end());
      if (!std::includes(nested_set.begin(), nested_set.end(), got.begin(), got.end())) {
        o.fail("approximate output not a subset at K=" + std::to_string(k));
      }
      if (k == multiplicity && got != nested_set) {
        o.fail("approximate output misses matches at K=" + std::to_string(k));
      }
    }
  }
  if (o.pass) {
    o.detail = std::to_string(truth.size()) + " matches; subset at K=1, equal at K=" +
               std::to_string(multiplicity);
  }
  return o;
}

// 5 ------------------------------------------------------------------------
Outcome cascade() {
  Outcome o;
  std::mt19937_64 rng(5);
  std::vector<double> keys(100);
  for (double& k : keys) k = uniform(rng, 0, 100);
  const Table t = keyed_table(keys, rng);
  const std::string pred = "the {text} reports a strong result";
  auto rows_of = [](const Table& r) {
    std::vector<double> out;
    for (RowId i = 0; i < r.row_count(); ++i) out.push_back(std::get<double>(r.cell("key", i)));
    return out;
  };
  auto proxy = keyed("proxy", 8.0, 11);
  auto oracle = keyed("oracle", 0.0, 12);

  Session so(oracle);
  const auto oracle_only = rows_of(sem_filter(so, t, pred));
  Session sp(proxy);
  const auto proxy_only = rows_of(sem_filter(sp, t, pred));
  if (oracle_only == proxy_only) o.fail("proxy noise too small to distinguish tiers");

  std::uint64_t last = 0;
  std::string counts;
  for (int i = 0; i <= 20; ++i) {
    const double tau = i / 20.0;
    Session s(proxy);
    s.add_backend(oracle);
    FilterOptions fo;
    fo.cascade = CascadeConfig{"proxy", "oracle", tau};
    const auto got = rows_of(sem_filter(s, t, pred, fo));
    const std::uint64_t escalated = s.meter().total().oracle_calls;
    if (i == 0 && got != proxy_only) o.fail("tau=0 differs from proxy-only");
    if (i == 20 && got != oracle_only) o.fail("tau=1 differs from oracle-only");
    if (escalated < last) o.fail("escalations drop at tau=" + std::to_string(tau));
    if (i % 5 == 0) counts += (counts.empty() ? "" : "/") + std::to_string(escalated);
    last = escalated;
  }
  if (o.pass) o.detail = "escalated rows at tau 0/.25/.5/.75/1: " + counts;
  return o;
}

// 6 ------------------------------------------------------------------------
std::vector<std::pair<double, RowId>> brute_force(const std::vector<float>& vecs, std::size_t dim,
                                                  std::span<const float> q, std::size_t k) {
  std::vector<std::pair<double, RowId>> all;
  const std::size_t n = vecs.size() / dim;
  double qn = 0;
  for (float x : q) qn += double(x) * x;
  for (RowId r = 0; r < n; ++r) {
    double d = 0, rn = 0;
    for (std::size_t j = 0; j < dim; ++j) {
      d += double(vecs[r * dim + j]) * q[j];
      rn += double(vecs[r * dim + j]) * vecs[r * dim + j];
    }
    all.emplace_back(rn > 0 && qn > 0 ? d / std::sqrt(rn * qn) : 0.0, r);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

Outcome flat_index() {
  Outcome o;
  double worst = 0;
  for (std::uint64_t c = 0; c < 100; ++c) {
    std::mt19937_64 rng(600 + c);
    const std::size_t n = 1 + rng() % 1000;
    std::vector<std::vector<std::string>> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = {std::to_string(i), random_sentence(rng, 3 + rng() % 10)};
    Table t = make_text_table({"id", "text"}, rows);
    auto emb = std::make_shared<MockEmbedder>(64, c);
    t = t.with_index("text", sem_index(t, "text", "", *emb));
    const auto vecs = emb->embed(text_column(t, "text"));
    Session s(ScriptedBackend::echo("unused"), emb);

    const std::string query = random_sentence(rng, 4);
    SearchOptions so;
    so.k = 1 + rng() % std::min<std::size_t>(n, 50);
    so.return_scores = true;
    const Table hits = sem_search(s, t, "text", query, so);
    const auto qv = emb->embed(std::vector<std::string>{query});
    const auto want = brute_force(vecs, 64, qv, so.k);
    std::map<RowId, double> got;
    for (RowId i = 0; i < hits.row_count(); ++i) {
      got[static_cast<RowId>(std::stoul(std::get<std::string>(hits.cell("id", i))))] =
          std::get<double>(hits.cell("_score", i));
    }
    if (got.size() != want.size()) o.fail("corpus " + std::to_string(c) + ": wrong hit count");
    for (const auto& [score, row] : want) {
      auto it = got.find(row);
      if (it == got.end()) {
        o.fail("corpus " + std::to_string(c) + ": search result set differs");
        break;
      }
      worst = std::max(worst, std::abs(it->second - score));
    }

    // Similarity join of a few query rows against the corpus.
    std::vector<std::vector<std::string>> qrows(4);
    for (auto& r : qrows) r = {random_sentence(rng, 5)};
    const Table left = make_text_table({"query"}, qrows);
    const std::size_t k = 1 + rng() % std::min<std::size_t>(n, 10);
    const Table joined = sem_sim_join(s, left, t, "query", "text", k, true);
    std::map<std::string, std::map<RowId, double>> per_left;
    for (RowId i = 0; i < joined.row_count(); ++i) {
      per_left[std::get<std::string>(joined.cell("query", i))]
              [static_cast<RowId>(std::stoul(std::get<std::string>(joined.cell("id", i))))] =
                  std::get<double>(joined.cell("_score", i));
    }
    for (const auto& qr : qrows) {
      const auto want_j = brute_force(vecs, 64, emb->embed(qr), k);
      const auto& g = per_left[qr[0]];
      if (g.size() != want_j.size()) o.fail("corpus " + std::to_string(c) + ": sim join size");
      for (const auto& [score, row] : want_j) {
        auto it = g.find(row);
        if (it == g.end()) {
          o.fail("corpus " + std::to_string(c) + ": sim join set differs");
          break;
        }
        worst = std::max(worst, std::abs(it->second - score));
      }
    }
  }
  if (worst > 1e-6) o.fail("score deviation " + std::to_string(worst));
  if (o.pass) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "100 corpora exact, max score deviation %.2e", worst);
    o.detail = buf;
  }
  return o;
}

// 7 ------------------------------------------------------------------------
Outcome persistence() {
  Outcome o;
  TempDir dir;
  std::mt19937_64 rng(7);
  std::vector<std::vector<std::string>> rows(300);
  const std::string specials[] = {",", "\"", "\n", "\r\n", "  ", "é", "\xe2\x82\xac", "''", ";"};
  for (auto& r : rows) {
    std::string a = random_sentence(rng, 1 + rng() % 6);
    std::string b = "x";
    for (int i = 0; i < 4; ++i) {
      b += specials[rng() % std::size(specials)];
      b += vocabulary()[rng() % vocabulary().size()];
    }
    r = {a, b, rng() % 10 == 0 ? std::string() : random_sentence(rng, 2)};
  }
  const Table t = make_text_table({"title", "body", "notes"}, rows);
  MockEmbedder emb(48, 5);
  const auto built = sem_index(t, "body", dir / "idx", emb);
  const SimIndex loaded = SimIndex::load(dir / "idx");
  if (built->data().size() != loaded.data().size() ||
      std::memcmp(built->data().data(), loaded.data().data(), built->data().size_bytes()) != 0) {
    o.fail("index vectors differ after reload");
  }

  write_csv(t, dir / "t.csv");
  const Table back = load_csv(dir / "t.csv");
  if (back.row_count() != t.row_count() || back.column_count() != t.column_count()) {
    o.fail("csv shape changed");
  } else {
    for (std::size_t c = 0; c < t.column_count(); ++c) {
      if (back.column(c).spec.name != t.column(c).spec.name) o.fail("header changed");
      if (back.column(c).cells != t.column(c).cells) o.fail("cells of column " + t.column(c).spec.name + " changed");
    }
  }
  if (o.pass) o.detail = "index vectors bit-identical; 300x3 text cells round-trip";
  return o;
}

// 8 ------------------------------------------------------------------------
Outcome ranking_bench() {
  Outcome o;
  const auto t0 = Clock::now();
  BenchOptions opts;
  opts.n = 200;
  opts.k = 10;
  opts.trials = 20;
  opts.seed = 2024;
  opts.temperatures = {0.0, 1.0, 2.0, 5.0};
  const auto rows = bench_ranking(opts);
  std::map<std::pair<double, TopkAlgorithm>, BenchRow> by;
  for (const auto& r : rows) by[{r.temperature, r.algorithm}] = r;
  std::string detail;
  for (double temp : opts.temperatures) {
    const auto& q = by[{temp, TopkAlgorithm::kQuadratic}];
    const auto& h = by[{temp, TopkAlgorithm::kHeap}];
    const auto& s = by[{temp, TopkAlgorithm::kQuickselect}];
    if (temp == 0.0) {
      for (const auto* r : {&q, &h, &s}) {
        if (r->mean_ndcg != 1.0) o.fail(std::string(topk_algorithm_name(r->algorithm)) + " T=0 nDCG < 1");
      }
    } else {
      if (q.mean_ndcg < s.mean_ndcg) {
        o.fail("T=" + std::to_string(temp) + ": quadratic " + std::to_string(q.mean_ndcg) +
               " < quickselect " + std::to_string(s.mean_ndcg));
      }
      char buf[96];
      std::snprintf(buf, sizeof buf, "%sT=%g q=%.3f s=%.3f", detail.empty() ? "" : "; ", temp,
                    q.mean_ndcg, s.mean_ndcg);
      detail += buf;
    }
    if (h.max_batch_size != 1) o.fail("heap max batch size " + std::to_string(h.max_batch_size));
    if (s.mean_batches >= h.mean_batches) o.fail("quickselect batches not below heap batches");
  }
  const double secs = seconds_since(t0);
  if (secs >= 60.0) o.fail("took " + std::to_string(secs) + " s");
  if (o.pass) o.detail = detail;
  return o;
}

// 9 ------------------------------------------------------------------------
// Calls needed to reduce m items with per-pack capacity c_first, then merge
// partials of length p until one is left.
std::size_t recurrence(std::size_t m, std::size_t c_first, std::size_t c_merge) {
  std::size_t calls = (m + c_first - 1) / c_first;
  m = calls;
  while (m > 1) {
    const std::size_t level = (m + c_merge - 1) / c_merge;
    calls += level;
    m = level;
  }
  return calls;
}

Outcome aggregation() {
  Outcome o;
  const std::string instruction = "Summarize the findings in the {text}";
  const std::size_t instr_len = std::string("Summarize the findings in the text").size();
  const std::size_t sep = 5;
  std::size_t runs = 0;
  std::size_t prompts = 0;
  for (std::uint64_t c = 0; c < 100; ++c) {
    std::mt19937_64 rng(900 + c);
    const std::size_t max_ctx = 620 + instr_len + rng() % 4000;
    const std::size_t budget = max_ctx - 512 - instr_len;
    const std::size_t len = 1 + rng() % std::min<std::size_t>(budget, 300);
    const std::size_t out_len = 1 + rng() % ((budget - sep) / 2);
    const std::size_t n = 1 + rng() % 150;
    const std::size_t parts = 1 + rng() % 6;
    const bool uniform_len = c % 2 == 0;

    Column text{{"text", ColumnKind::kText}, {}};
    Column part{{"partition_id", ColumnKind::kInt}, {}};
    std::vector<std::int64_t> part_of(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t l = uniform_len ? len : 1 + rng() % len;
      std::string doc(l, 'a' + static_cast<char>(i % 26));
      text.cells.emplace_back(std::move(doc));
      part_of[i] = static_cast<std::int64_t>(rng() % parts);
      part.cells.emplace_back(part_of[i]);
    }
    const Table t({std::move(text), std::move(part)});

    for (int mode = 0; mode < 3; ++mode) {
      auto rec = std::make_shared<RecordingBackend>(
          ScriptedBackend::constant("summarizer", std::string(out_len, 'z')));
      Session s(rec);
      AggConfig cfg;
      cfg.max_context_chars = max_ctx;
      cfg.pattern = mode == 2 ? AggPattern::kFold : AggPattern::kHierarchical;
      if (mode == 1) cfg.partition_column = "partition_id";
      std::vector<AggStep> trace;
      const Table out = sem_agg(s, t, instruction, cfg, &trace);
      ++runs;
      const auto seen = rec->seen();
      prompts += seen.size();
      for (const LmRequest& r : seen) {
        const std::size_t chars = r.system_instruction.size() + r.user_prompt.size();
        if (chars > max_ctx) {
          o.fail("corpus " + std::to_string(c) + ": prompt of " + std::to_string(chars) + " > " +
                 std::to_string(max_ctx));
        }
      }
      if (out.row_count() != 1) o.fail("expected one output row");

      const std::size_t c_first = (budget + sep) / (len + sep);
      const std::size_t c_merge = (budget + sep) / (out_len + sep);
      if (mode == 0 && uniform_len && seen.size() != recurrence(n, c_first, c_merge)) {
        o.fail("corpus " + std::to_string(c) + ": " + std::to_string(seen.size()) +
               " calls, recurrence says " + std::to_string(recurrence(n, c_first, c_merge)));
      }
      if (mode == 1) {
        // Leaf prompts draw from one partition only.
        for (const LmRequest& r : seen) {
          std::set<std::int64_t> ps;
          for (const SourceRef& src : r.sources) ps.insert(part_of[src.row]);
          if (ps.size() > 1) o.fail("corpus " + std::to_string(c) + ": leaf prompt mixes partitions");
        }
        // Replay: before a partition's content meets another partition, its
        // single-partition steps must have reduced its m documents to one
        // partial, i.e. consumed m - 1 items net.
        std::map<std::int64_t, std::size_t> ordinal;
        for (auto p : part_of) ordinal.emplace(p, ordinal.size());
        std::vector<std::size_t> docs(ordinal.size(), 0);
        for (auto p : part_of) ++docs[ordinal[p]];
        std::vector<std::size_t> reduced(ordinal.size(), 0);
        std::vector<bool> met(ordinal.size(), false);
        for (const AggStep& st : trace) {
          if (st.partitions.size() == 1) {
            const std::size_t p = st.partitions[0];
            if (p < reduced.size() && !met[p]) reduced[p] += st.inputs - 1;
            continue;
          }
          for (std::size_t p : st.partitions) {
            if (p >= met.size() || met[p]) continue;
            met[p] = true;
            if (reduced[p] + 1 != docs[p]) {
              o.fail("corpus " + std::to_string(c) + ": partition merged early");
            }
          }
        }
        if (uniform_len) {
          std::map<std::int64_t, std::size_t> sizes;
          for (auto p : part_of) ++sizes[p];
          std::size_t expect = 0;
          for (const auto& [p, m] : sizes) expect += recurrence(m, c_first, c_merge);
          if (sizes.size() > 1) expect += recurrence(sizes.size(), c_merge, c_merge);
          if (seen.size() != expect) {
            o.fail("corpus " + std::to_string(c) + ": partitioned calls " +
                   std::to_string(seen.size()) + " != " + std::to_string(expect));
          }
        }
      }
      if (mode == 2 && s.meter().total().max_batch_size != 1) o.fail("fold batch size above 1");
    }
  }
  if (o.pass) {
    o.detail = std::to_string(runs) + " runs, " + std::to_string(prompts) +
               " prompts within limit, recurrence exact";
  }
  return o;
}

// 10 -----------------------------------------------------------------------
Outcome extract_verification() {
  Outcome o;
  std::mt19937_64 rng(10);
  std::vector<std::vector<std::string>> rows(200);
  for (auto& r : rows) r = {random_sentence(rng, 8 + rng() % 20)};
  const Table t = make_text_table({"text"}, rows);

  auto adversary = std::make_shared<ScriptedBackend>("adversary", [](const LmRequest& req) {
    const SourceRef& src = req.sources.front();
    const std::string text = std::get<std::string>(src.table->cell("text", src.row));
    std::mt19937_64 r(src.row * 31 + 7);
    auto span = [&] {
      const std::size_t a = r() % text.size();
      const std::size_t b = a + 1 + r() % (text.size() - a);
      return text.substr(a, b - a);
    };
    std::string out;
    for (int i = 0; i < 8; ++i) {
      std::string line;
      switch (r() % 7) {
        case 0: line = span(); break;
        case 1: line = "  " + span() + "\t"; break;
        case 2: line = "\"" + span() + "\""; break;
        case 3: {
          line = span();
          line[r() % line.size()] = '#';
          break;
        }
        case 4: line = "the model hallucinated this"; break;
        case 5: line = text + " and more"; break;
        default: line = ""; break;
      }
      out += line + "\n";
    }
    LmResult res;
    res.text = out;
    return res;
  });
  Session s(adversary);
  const Table out = sem_extract(s, t, "quote the claims in {text}", "quotes");
  std::size_t emitted = 0;
  for (RowId r = 0; r < out.row_count(); ++r) {
    const std::string& src = std::get<std::string>(out.cell("text", r));
    std::istringstream lines(std::get<std::string>(out.cell("quotes", r)));
    std::string line;
    while (std::getline(lines, line)) {
      ++emitted;
      if (line.empty() || src.find(line) == std::string::npos) {
        o.fail("row " + std::to_string(r) + ": unverified snippet '" + line + "'");
      }
    }
  }
  const auto dropped = s.meter().total().dropped_snippets;
  if (dropped == 0) o.fail("adversary produced no rejected snippets");
  if (o.pass) {
    o.detail = std::to_string(emitted) + " snippets verbatim, " + std::to_string(dropped) + " dropped";
  }
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"call-count exactness", call_counts},
      {"join budget compliance", budget_compliance},
      {"top-k oracle equivalence", topk_oracle},
      {"join oracle equivalence", join_oracle},
      {"cascade correctness", cascade},
      {"flat index exactness", flat_index},
      {"persistence round-trips", persistence},
      {"noisy ranking benchmark", ranking_bench},
      {"aggregation contracts", aggregation},
      {"extract verification", extract_verification},
  };
  int failures = 0;
  int i = 0;
  for (const Criterion& c : criteria) {
    ++i;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    std::printf("[%s] %2d %-26s %6.2fs  %s\n", o.pass ? "PASS" : "FAIL", i, c.name,
                seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  std::printf("%d/%d criteria passed\n", i - failures, i);
  return failures == 0 ? 0 : 1;
}
