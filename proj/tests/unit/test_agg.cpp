#include "doctest.h"

#include <set>

#include "../support.hpp"
#include "semops/agg_ops.hpp"

using namespace semops;

namespace {

// "Summarize text" is 14 characters, so this leaves 250 for content.
constexpr const char* kInstruction = "Summarize {text}";
constexpr std::size_t kCtx = 512 + 14 + 250;

Table docs(std::size_t n, std::size_t len) {
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back({std::string(len, 'a' + char(i % 26))});
  return make_text_table({"text"}, rows);
}

}  // namespace

TEST_SUITE("agg") {

TEST_CASE("content budget and greedy packing") {
  CHECK(agg_content_budget(kCtx, 14) == 250);
  CHECK_THROWS_AS(agg_content_budget(520, 14), Error);
  const std::vector<std::size_t> lens(25, 20);
  // 10 x 20 plus 9 separators is 245; an eleventh would need 270.
  CHECK(pack_greedy(lens, 250) == std::vector<std::size_t>{10, 10, 5});
  const std::vector<std::size_t> big{10, 300};
  CHECK_THROWS_AS(pack_greedy(big, 250), Error);
}

TEST_CASE("a single document takes one call") {
  Session s(ScriptedBackend::constant("m", "summary"));
  AggConfig cfg;
  cfg.max_context_chars = kCtx;
  const Table out = sem_agg(s, docs(1, 20), kInstruction, cfg);
  CHECK(out.row_count() == 1);
  CHECK(std::get<std::string>(out.cell("_output", 0)) == "summary");
  CHECK(s.meter().total().lm_calls == 1);
}

TEST_CASE("fifty documents at ten per pack take five leaves and one merge") {
  auto rec = std::make_shared<testing::RecordingBackend>(ScriptedBackend::constant("m", "summary"));
  Session s(rec);
  AggConfig cfg;
  cfg.max_context_chars = kCtx;
  std::vector<AggStep> trace;
  sem_agg(s, docs(50, 20), kInstruction, cfg, &trace);
  CHECK(s.meter().total().lm_calls == 6);
  CHECK(s.meter().total().batches == 2);
  REQUIRE(trace.size() == 6);
  CHECK(trace[5].merge);
  CHECK(trace[5].inputs == 5);
  for (const LmRequest& r : rec->seen()) CHECK(request_chars(r) <= kCtx);
}

TEST_CASE("fold runs one call at a time") {
  Session s(ScriptedBackend::constant("m", "summary"));
  AggConfig cfg;
  cfg.max_context_chars = kCtx;
  cfg.pattern = AggPattern::kFold;
  sem_agg(s, docs(5, 200), kInstruction, cfg);
  CHECK(s.meter().total().lm_calls == 5);
  CHECK(s.meter().total().max_batch_size == 1);
}

TEST_CASE("an oversized document is named in the error") {
  Session s(ScriptedBackend::constant("m", "summary"));
  AggConfig cfg;
  cfg.max_context_chars = kCtx;
  try {
    sem_agg(s, docs(3, 251), kInstruction, cfg);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kValidation);
    CHECK(std::string(e.what()).find("row 0") != std::string::npos);
  }
  CHECK(s.meter().total().lm_calls == 0);
}

TEST_CASE("group_by yields one output per group") {
  Table t = docs(9, 10);
  Column g{{"g", ColumnKind::kText}, {}};
  for (int i = 0; i < 9; ++i) g.cells.emplace_back(std::string(i % 3 == 0 ? "x" : "y"));
  t = t.with_column(std::move(g));
  Session s(ScriptedBackend::constant("m", "summary"));
  AggConfig cfg;
  cfg.max_context_chars = kCtx;
  cfg.group_by = {"g"};
  cfg.output_column = "answer";
  const Table out = sem_agg(s, t, kInstruction, cfg);
  REQUIRE(out.row_count() == 2);
  CHECK(std::get<std::string>(out.cell("g", 0)) == "x");
  CHECK(out.has_column("answer"));
}

TEST_CASE("partition functions") {
  const Table t = docs(30, 5);
  auto distinct = [](const Table& p) {
    std::set<std::int64_t> ids;
    for (RowId r = 0; r < p.row_count(); ++r) ids.insert(std::get<std::int64_t>(p.cell(kPartitionColumn, r)));
    return ids;
  };
  CHECK(distinct(sem_partition_by(t, [](RowView) { return std::int64_t{4}; })).size() == 1);
  CHECK(distinct(sem_partition_by(t, [](RowView v) { return std::int64_t(v.row); })).size() == 30);

  std::mt19937_64 rng(8);
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 60; ++i) rows.push_back({testing::random_sentence(rng, 6)});
  auto e = std::make_shared<MockEmbedder>(64, 0);
  Session s(ScriptedBackend::echo("m"), e);
  Table c = make_text_table({"text"}, rows);
  c = c.with_index("text", sem_index(c, "text", "", *e));
  const auto ids = distinct(sem_partition_by(s, c, 7, "text"));
  CHECK(*ids.begin() >= 0);
  CHECK(*ids.rbegin() < 7);
}

}
