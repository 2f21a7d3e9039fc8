#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace semops {

class SimIndex;

using RowId = std::uint32_t;

enum class ColumnKind { kText, kFloat, kInt, kBool };

const char* column_kind_name(ColumnKind kind);

// std::monostate marks an explicit null.
using Cell = std::variant<std::monostate, std::string, double, std::int64_t, bool>;

inline bool is_null(const Cell& c) { return std::holds_alternative<std::monostate>(c); }

// Textual form used in prompts and CSV output. Floats use the shortest
// representation that round-trips. Null renders as the empty string.
std::string cell_to_string(const Cell& c);

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::kText;
};

using Schema = std::vector<ColumnSpec>;

struct Column {
  ColumnSpec spec;
  std::vector<Cell> cells;
};

// Immutable, column-oriented table. Columns are shared between tables that
// are derived from one another without row changes (appending a column,
// attaching an index), so copies are cheap.
class Table {
 public:
  Table();
  explicit Table(std::vector<Column> columns);

  std::size_t row_count() const { return row_count_; }
  std::size_t column_count() const { return columns_.size(); }
  Schema schema() const;

  bool has_column(std::string_view name) const;
  std::size_t column_index(std::string_view name) const;
  const Column& column(std::size_t i) const { return *columns_[i]; }
  const Column& column(std::string_view name) const;
  const Cell& cell(std::string_view column, RowId row) const;

  // Identity for caches keyed on table content; stable for the table's
  // lifetime and shared by copies.
  std::uint64_t uid() const { return uid_; }

  Table with_column(Column c) const;
  Table select_rows(std::span<const RowId> rows) const;
  Table select_columns(std::span<const std::string> names) const;

  Table with_index(const std::string& column, std::shared_ptr<const SimIndex> index) const;
  std::shared_ptr<const SimIndex> index_for(std::string_view column) const;
  const std::map<std::string, std::shared_ptr<const SimIndex>, std::less<>>& indices() const {
    return indices_;
  }

 private:
  std::vector<std::shared_ptr<const Column>> columns_;
  std::map<std::string, std::shared_ptr<const SimIndex>, std::less<>> indices_;
  std::size_t row_count_ = 0;
  std::uint64_t uid_ = 0;
};

// Builds a text-only table; handy for fixtures.
Table make_text_table(const std::vector<std::string>& names,
                      const std::vector<std::vector<std::string>>& rows);

Table load_csv(const std::string& path);
Table parse_csv(std::string_view data);
void write_csv(const Table& t, const std::string& path);
std::string to_csv(const Table& t);

// Kind inference for one column of raw CSV fields: int, then float, then
// bool, then text. Empty fields are nulls and do not constrain the kind.
ColumnKind infer_kind(std::span<const std::optional<std::string>> fields);

// A row of a join result; a missing side is emitted as nulls.
struct RowPair {
  std::optional<RowId> left;
  std::optional<RowId> right;
};

// Concatenates left and right columns for each pair. Column names present on
// both sides get ":left" / ":right" suffixes.
Table join_tables(const Table& left, const Table& right, std::span<const RowPair> pairs);

struct Group {
  std::vector<Cell> key;
  std::vector<RowId> rows;
};

// Equality grouping over `cols`; groups appear in first-occurrence order.
std::vector<Group> partition_by_equality(const Table& t, std::span<const std::string> cols);

}  // namespace semops
