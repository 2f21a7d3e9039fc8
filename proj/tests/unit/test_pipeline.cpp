#include "doctest.h"

#include <fstream>

#include "json.hpp"

#include "../support.hpp"
#include "semops/pipeline.hpp"

using namespace semops;
using json = nlohmann::ordered_json;

namespace {

void write(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

// Claims with a hidden support key plus a passage corpus.
struct Files {
  testing::TempDir dir;
  std::vector<double> keys;

  Files() {
    std::mt19937_64 rng(17);
    std::string claims = "claim,key\n";
    for (int i = 0; i < 20; ++i) {
      keys.push_back(testing::uniform(rng, 0, 100));
      claims += testing::random_sentence(rng, 6) + "," + std::to_string(keys.back()) + "\n";
    }
    write(dir / "claims.csv", claims);
    std::string wiki = "passage\n";
    for (int i = 0; i < 80; ++i) wiki += testing::random_sentence(rng, 10) + "\n";
    write(dir / "wiki.csv", wiki);
  }

  std::size_t supported() const {
    std::size_t n = 0;
    for (double k : keys) n += k > 50.0;
    return n;
  }
};

json base_doc() {
  return json{{"inputs",
               {{"claims", {{"csv", "claims.csv"}}}, {"wiki", {{"csv", "wiki.csv"}}}}},
              {"backends", {{{"id", "k"}, {"type", "keyed"}, {"map_column", "claim"}}}},
              {"source", "claims"}};
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("search over a fresh index makes no LM calls") {
  Files f;
  json doc = base_doc();
  doc["source"] = "wiki";
  doc["ops"] = {{{"op", "sem_index"}, {"column", "passage"}},
                {{"op", "sem_search"}, {"column", "passage"}, {"query", "neural graph"}, {"k", 10}}};
  Pipeline p = Pipeline::parse(doc.dump(), f.dir.path().string());
  RunMetrics m;
  const Table out = p.run(m);
  CHECK(out.row_count() == 10);
  CHECK(m.total.lm_calls == 0);
  CHECK(m.completed);
}

TEST_CASE("claim verification: map, sim join, concat, filter") {
  Files f;
  json doc = base_doc();
  doc["ops"] = {
      {{"op", "sem_index"}, {"column", "passage"}, {"input", "wiki"}, {"save_as", "wiki_idx"}},
      {{"op", "sem_map"}, {"input", "claims"}, {"langex", "Write a search query for {claim}"},
       {"name", "query"}},
      {{"op", "sem_sim_join"}, {"right", "wiki_idx"}, {"left_on", "query"},
       {"right_on", "passage"}, {"k", 10}},
      {{"op", "group_concat"}, {"by", {"claim", "key"}}, {"column", "passage"},
       {"name", "context"}},
      {{"op", "sem_filter"}, {"langex", "The {claim} is supported by {context}"}}};
  Pipeline p = Pipeline::parse(doc.dump(), f.dir.path().string());
  RunMetrics m;
  const Table out = p.run(m);
  CHECK(out.row_count() == f.supported());
  REQUIRE(m.ops.size() == 5);
  CHECK(m.ops[1].counts.lm_calls == 20);
  CHECK(m.ops[2].rows_out == 200);
  CHECK(m.ops[2].counts.lm_calls == 0);
  CHECK(m.ops[3].rows_out == 20);
  CHECK(m.ops[4].counts.lm_calls == 20);

  MeterCounts sum;
  for (const OpMetrics& o : m.ops) sum += o.counts;
  CHECK(sum.lm_calls == m.total.lm_calls);
  CHECK(sum.batches == m.total.batches);
  const json mj = json::parse(m.to_json());
  CHECK(mj["totals"]["lm_calls"] == 40);
  CHECK(mj.begin().key() == "completed");
}

TEST_CASE("a bad langex in op 3 fails preflight without LM calls") {
  Files f;
  json doc = base_doc();
  doc["ops"] = {{{"op", "sem_filter"}, {"langex", "{claim} is true"}},
                {{"op", "sem_map"}, {"langex", "Rephrase {claim}"}, {"name", "q"}},
                {{"op", "sem_filter"}, {"langex", "{qq} is fine"}}};
  Pipeline p = Pipeline::parse(doc.dump(), f.dir.path().string());
  try {
    RunMetrics m;
    p.run(m);
    FAIL("expected validation failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kValidation);
    CHECK(std::string(e.what()).rfind("op 3", 0) == 0);
  }
  CHECK(p.session().meter().total().lm_calls == 0);
}

TEST_CASE("preflight catches schema and option mistakes") {
  Files f;
  auto fails = [&](json ops) {
    json doc = base_doc();
    doc["ops"] = std::move(ops);
    try {
      Pipeline p = Pipeline::parse(doc.dump(), f.dir.path().string());
      p.validate();
    } catch (const Error& e) {
      return e.code() == ErrorCode::kValidation;
    }
    return false;
  };
  CHECK(fails({{{"op", "sem_search"}, {"column", "claim"}, {"query", "x"}, {"k", 3}}}));
  CHECK(fails({{{"op", "sem_topk"}, {"langex", "{claim}"}, {"k", 0}}}));
  CHECK(fails({{{"op", "sem_join"}, {"right", "wiki"}, {"langex", "{claim:left} {passage:right}"},
                {"pattern", "search-filter"}, {"budget", 100}}}));
  CHECK(fails({{{"op", "sem_filter"}, {"langex", "{claim}"}, {"demoz", json::array()}}}));
  CHECK(fails({{{"op", "sem_agg"}, {"langex", "{claim}"}, {"max_context_chars", 100}}}));
  CHECK(fails({{{"op", "explode"}}}));
  CHECK(fails({{{"op", "sem_map"}, {"langex", "{claim}"}, {"name", "key"}}}));

  json doc = base_doc();
  doc["colour"] = 1;
  CHECK_THROWS_AS(Pipeline::parse(doc.dump(), "."), Error);
  CHECK_THROWS_AS(Pipeline::parse("{not json", "."), Error);
}

TEST_CASE("saved tables feed a semantic join") {
  Files f;
  json doc = base_doc();
  doc["backends"] = {{{"id", "yes"}, {"type", "constant"}, {"text", "True"}}};
  doc["ops"] = {{{"op", "head"}, {"n", 3}},
                {{"op", "sem_join"}, {"right", "wiki"},
                 {"langex", "{claim:left} is backed by {passage:right}"}},
                {{"op", "select"}, {"columns", {"claim", "passage"}}}};
  Pipeline p = Pipeline::parse(doc.dump(), f.dir.path().string());
  RunMetrics m;
  const Table out = p.run(m);
  CHECK(out.row_count() == 3 * 80);
  CHECK(out.column_count() == 2);
  CHECK(m.total.lm_calls == 240);
}

}
