#include "doctest.h"

#include "../support.hpp"
#include "semops/error.hpp"
#include "semops/table.hpp"

using namespace semops;

TEST_SUITE("table") {

TEST_CASE("csv parse handles quotes, embedded separators and nulls") {
  const Table t = parse_csv("id,text,score\n1,\"a, \"\"quoted\"\" b\",0.5\n2,\"line\nbreak\",\n3,\"\",2\n");
  REQUIRE(t.row_count() == 3);
  CHECK(t.column("id").spec.kind == ColumnKind::kInt);
  CHECK(t.column("score").spec.kind == ColumnKind::kFloat);
  CHECK(std::get<std::string>(t.cell("text", 0)) == "a, \"quoted\" b");
  CHECK(std::get<std::string>(t.cell("text", 1)) == "line\nbreak");
  CHECK(is_null(t.cell("score", 1)));
  // A quoted empty field is an empty string, a bare one is null.
  CHECK(std::get<std::string>(t.cell("text", 2)).empty());
}

TEST_CASE("csv write then parse keeps every cell") {
  std::mt19937_64 rng(3);
  std::vector<std::vector<std::string>> rows;
  for (int i = 0; i < 50; ++i) {
    std::string tricky = testing::random_sentence(rng, 4);
    if (i % 3 == 0) tricky += ",\"x\"";
    if (i % 5 == 0) tricky += "\r\nsecond";
    rows.push_back({tricky, std::to_string(i)});
  }
  const Table t = make_text_table({"text", "n"}, rows);
  const Table back = parse_csv(to_csv(t));
  REQUIRE(back.row_count() == t.row_count());
  for (RowId r = 0; r < t.row_count(); ++r) {
    CHECK(cell_to_string(back.cell("text", r)) == cell_to_string(t.cell("text", r)));
    CHECK(cell_to_string(back.cell("n", r)) == cell_to_string(t.cell("n", r)));
  }
}

TEST_CASE("csv format errors") {
  auto code = [](std::string_view csv) {
    try {
      parse_csv(csv);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kRuntime;
  };
  CHECK(code("a,b\n1\n") == ErrorCode::kFormat);
  CHECK(code("a,a\n1,2\n") == ErrorCode::kFormat);
  CHECK(code("a\n\"open\n") == ErrorCode::kFormat);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), Error);
}

TEST_CASE("kind inference prefers int, then float, then bool") {
  using F = std::optional<std::string>;
  std::vector<F> ints{F("1"), std::nullopt, F("-7")};
  std::vector<F> floats{F("1"), F("2.5e3")};
  std::vector<F> bools{F("true"), F("False")};
  std::vector<F> text{F("1"), F("x")};
  CHECK(infer_kind(ints) == ColumnKind::kInt);
  CHECK(infer_kind(floats) == ColumnKind::kFloat);
  CHECK(infer_kind(bools) == ColumnKind::kBool);
  CHECK(infer_kind(text) == ColumnKind::kText);
}

TEST_CASE("floats print in shortest round-trip form") {
  CHECK(cell_to_string(Cell(0.1)) == "0.1");
  CHECK(cell_to_string(Cell(std::int64_t{42})) == "42");
  CHECK(cell_to_string(Cell()) == "");
  const double x = 1.0 / 3.0;
  CHECK(std::stod(cell_to_string(Cell(x))) == x);
}

TEST_CASE("row and column selection") {
  const Table t = make_text_table({"a", "b"}, {{"1", "x"}, {"2", "y"}, {"3", "z"}});
  const std::vector<RowId> rows{2, 0};
  const Table s = t.select_rows(rows);
  CHECK(s.row_count() == 2);
  CHECK(std::get<std::string>(s.cell("b", 0)) == "z");
  const std::vector<std::string> cols{"b"};
  CHECK(t.select_columns(cols).column_count() == 1);
  const std::vector<RowId> bad{3};
  CHECK_THROWS_AS(t.select_rows(bad), Error);
  CHECK_THROWS_AS(t.with_column(Column{{"a", ColumnKind::kText}, {"", "", ""}}), Error);
}

TEST_CASE("join_tables suffixes shared names and fills missing sides with nulls") {
  const Table l = make_text_table({"id", "name"}, {{"1", "a"}, {"2", "b"}});
  const Table r = make_text_table({"id", "city"}, {{"9", "x"}});
  const std::vector<RowPair> pairs{{0, 0}, {1, std::nullopt}, {std::nullopt, 0}};
  const Table j = join_tables(l, r, pairs);
  CHECK(j.has_column("id:left"));
  CHECK(j.has_column("id:right"));
  CHECK(j.has_column("name"));
  CHECK(j.has_column("city"));
  CHECK(j.row_count() == 3);
  CHECK(is_null(j.cell("city", 1)));
  CHECK(is_null(j.cell("name", 2)));
  CHECK(std::get<std::string>(j.cell("city", 2)) == "x");
}

TEST_CASE("equality groups appear in first-occurrence order") {
  const Table t = make_text_table({"g"}, {{"b"}, {"a"}, {"b"}, {"c"}, {"a"}});
  const std::vector<std::string> by{"g"};
  const auto groups = partition_by_equality(t, by);
  REQUIRE(groups.size() == 3);
  CHECK(std::get<std::string>(groups[0].key[0]) == "b");
  CHECK(groups[0].rows == std::vector<RowId>{0, 2});
  CHECK(groups[1].rows == std::vector<RowId>{1, 4});
  CHECK(groups[2].rows == std::vector<RowId>{3});
}

}
