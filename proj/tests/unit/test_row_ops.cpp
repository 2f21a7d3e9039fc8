#include "doctest.h"

#include "../support.hpp"
#include "semops/row_ops.hpp"

using namespace semops;

namespace {

std::vector<double> spread_keys(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> keys;
  for (std::size_t i = 0; i < n; ++i) keys.push_back(testing::uniform(rng, 0, 100));
  return keys;
}

}  // namespace

TEST_SUITE("row_ops") {

TEST_CASE("filter keeps exactly the rows the model accepts") {
  const auto keys = spread_keys(80, 1);
  std::mt19937_64 rng(2);
  const Table t = testing::keyed_table(keys, rng);
  Session s(std::make_shared<KeyedOracleBackend>("k", KeyedOracleConfig{}));
  const Table out = sem_filter(s, t, "The {text} is relevant");
  std::size_t expect = 0;
  for (double k : keys) expect += k > 50.0;
  REQUIRE(out.row_count() == expect);
  for (RowId r = 0; r < out.row_count(); ++r) CHECK(std::get<double>(out.cell("key", r)) > 50.0);
  CHECK(s.meter().total().lm_calls == 80);
  CHECK(s.meter().total().batches == 1);
}

TEST_CASE("filter validates before calling the model") {
  const Table t = make_text_table({"text"}, {{"a"}});
  auto rec = std::make_shared<testing::RecordingBackend>(ScriptedBackend::constant("m", "True"));
  Session s(rec);
  CHECK_THROWS_AS(sem_filter(s, t, "The {txt} is ok"), Error);
  CHECK(rec->seen().empty());
}

TEST_CASE("unparseable filter answers count as malformed and reject the row") {
  const Table t = make_text_table({"text"}, {{"a"}, {"b"}});
  Session s(ScriptedBackend::constant("m", "I cannot say"));
  const Table out = sem_filter(s, t, "{text} holds");
  CHECK(out.row_count() == 0);
  CHECK(s.meter().total().malformed_outputs >= 2);
}

TEST_CASE("escalation thresholds") {
  CHECK(should_escalate(0.3, 0.5));
  CHECK_FALSE(should_escalate(0.7, 0.5));
  CHECK_FALSE(should_escalate(0.0, 0.0));
  CHECK(should_escalate(1.0, 1.0));
}

TEST_CASE("cascade sends low-confidence rows to the oracle") {
  const auto keys = spread_keys(100, 5);
  std::mt19937_64 rng(6);
  const Table t = testing::keyed_table(keys, rng);
  KeyedOracleConfig noisy;
  noisy.temperature = 10.0;
  noisy.seed = 3;
  auto proxy = std::make_shared<KeyedOracleBackend>("proxy", noisy);
  auto oracle = std::make_shared<KeyedOracleBackend>("oracle", KeyedOracleConfig{});

  for (double tau : {0.0, 0.8, 1.0}) {
    Session s(proxy);
    s.add_backend(oracle);
    FilterOptions fo;
    fo.cascade = CascadeConfig{"proxy", "oracle", tau};
    const Table out = sem_filter(s, t, "{text} passes", fo);
    // Independent count: proxy confidence is the keyed correctness probability.
    std::size_t expect_escalated = 0;
    for (double k : keys) {
      expect_escalated += should_escalate(keyed_correct_probability(k - 50.0, 10.0), tau);
    }
    const MeterCounts m = s.meter().total();
    CHECK(m.proxy_calls == 100);
    CHECK(m.oracle_calls == expect_escalated);
    if (tau == 1.0) {
      std::size_t truth = 0;
      for (double k : keys) truth += k > 50.0;
      CHECK(out.row_count() == truth);
    }
  }
}

TEST_CASE("map adds one answer per row") {
  const Table base = make_text_table({"text", "label"}, {{"x", "one"}, {"y", "two"}});
  KeyedOracleConfig cfg;
  cfg.map_column = "label";
  Session s(std::make_shared<KeyedOracleBackend>("k", cfg));
  const Table out = sem_map(s, base, "Name the category of {text}", "category");
  CHECK(std::get<std::string>(out.cell("category", 1)) == "two");
  CHECK_THROWS_AS(sem_map(s, base, "{text}", "label"), Error);
}

TEST_CASE("snippet verification keeps verbatim lines only") {
  std::size_t dropped = 0;
  const std::string source = "alpha beta. gamma delta. epsilon";
  const auto kept = verify_snippets("gamma delta\nnot there\n  alpha beta \n\n", source, &dropped);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == "alpha beta");
  CHECK(kept[1] == "gamma delta");
  CHECK(dropped == 1);
}

TEST_CASE("extract records dropped snippets") {
  const Table t = make_text_table({"doc"}, {{"the model reaches 91% accuracy on the test"}});
  Session s(ScriptedBackend::constant("m", "reaches 91% accuracy\ninvented quote"));
  const Table out = sem_extract(s, t, "Quote the result in {doc}", "quote");
  CHECK(std::get<std::string>(out.cell("quote", 0)) == "reaches 91% accuracy");
  CHECK(s.meter().total().dropped_snippets == 1);
}

}
