#include "semops/table.hpp"

#include <atomic>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "semops/error.hpp"

namespace semops {

namespace {

std::uint64_t next_uid() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

bool parse_int(std::string_view s, std::int64_t* out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_float(std::string_view s, double* out) {
  if (s.empty()) return false;
  // Reject inf/nan spellings; only plain decimal notation counts as a float.
  const char c = s.front();
  const bool numeric_start = (c >= '0' && c <= '9') || c == '-' || c == '.';
  if (!numeric_start) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  if (ec != std::errc() || ptr != s.data() + s.size()) return false;
  return s.find_first_of("nNiI") == std::string_view::npos;
}

bool parse_bool(std::string_view s, bool* out) {
  if (s == "true" || s == "True" || s == "TRUE") {
    *out = true;
    return true;
  }
  if (s == "false" || s == "False" || s == "FALSE") {
    *out = false;
    return true;
  }
  return false;
}

Cell convert(const std::optional<std::string>& field, ColumnKind kind) {
  if (!field) return std::monostate{};
  switch (kind) {
    case ColumnKind::kInt: {
      std::int64_t v = 0;
      parse_int(*field, &v);
      return v;
    }
    case ColumnKind::kFloat: {
      double v = 0;
      parse_float(*field, &v);
      return v;
    }
    case ColumnKind::kBool: {
      bool v = false;
      parse_bool(*field, &v);
      return v;
    }
    case ColumnKind::kText:
      return *field;
  }
  return std::monostate{};
}

struct CellHash {
  std::size_t operator()(const std::vector<Cell>& key) const {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (const Cell& c : key) {
      h ^= std::hash<std::string>{}(cell_to_string(c)) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
      h ^= c.index();
    }
    return h;
  }
};

// Parses RFC-4180 records; a field that was empty and unquoted maps to nullopt.
std::vector<std::vector<std::optional<std::string>>> parse_records(std::string_view data) {
  std::vector<std::vector<std::optional<std::string>>> records;
  std::vector<std::optional<std::string>> record;
  std::string field;
  bool in_quotes = false;
  bool field_quoted = false;
  bool record_started = false;
  std::size_t line = 1;

  auto end_field = [&] {
    if (field.empty() && !field_quoted) {
      record.emplace_back(std::nullopt);
    } else {
      record.emplace_back(std::move(field));
    }
    field.clear();
    field_quoted = false;
  };
  auto end_record = [&] {
    end_field();
    records.push_back(std::move(record));
    record.clear();
    record_started = false;
  };

  std::size_t i = 0;
  if (data.substr(0, 3) == "\xEF\xBB\xBF") i = 3;
  for (; i < data.size(); ++i) {
    const char c = data[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < data.size() && data[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_quoted) {
          throw Error(ErrorCode::kFormat,
                      "csv: unexpected quote inside field at line " + std::to_string(line));
        }
        in_quotes = true;
        field_quoted = true;
        record_started = true;
        break;
      case ',':
        end_field();
        record_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        field.push_back(c);
        record_started = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::kFormat, "csv: unterminated quoted field");
  if (record_started || !record.empty()) end_record();
  return records;
}

bool needs_quoting(std::string_view s) {
  return s.find_first_of(",\"\r\n") != std::string_view::npos || s.empty();
}

void write_field(std::ostream& out, std::string_view s) {
  if (!needs_quoting(s)) {
    out << s;
    return;
  }
  out << '"';
  for (char c : s) {
    if (c == '"') out << '"';
    out << c;
  }
  out << '"';
}

}  // namespace

const char* column_kind_name(ColumnKind kind) {
  switch (kind) {
    case ColumnKind::kText:
      return "text";
    case ColumnKind::kFloat:
      return "float";
    case ColumnKind::kInt:
      return "int";
    case ColumnKind::kBool:
      return "bool";
  }
  return "unknown";
}

std::string cell_to_string(const Cell& c) {
  struct Visitor {
    std::string operator()(std::monostate) const { return {}; }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(double d) const {
      char buf[64];
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), d);
      return std::string(buf, ptr);
    }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(bool b) const { return b ? "true" : "false"; }
  };
  return std::visit(Visitor{}, c);
}

Table::Table() : uid_(next_uid()) {}

Table::Table(std::vector<Column> columns) : uid_(next_uid()) {
  std::unordered_set<std::string> names;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const Column& c = columns[i];
    if (c.spec.name.empty()) throw Error(ErrorCode::kInvalidArgument, "table: empty column name");
    if (!names.insert(c.spec.name).second) {
      throw Error(ErrorCode::kInvalidArgument, "table: duplicate column name '" + c.spec.name + "'");
    }
    if (i == 0) {
      row_count_ = c.cells.size();
    } else if (c.cells.size() != row_count_) {
      throw Error(ErrorCode::kInvalidArgument,
                  "table: column '" + c.spec.name + "' has " + std::to_string(c.cells.size()) +
                      " cells, expected " + std::to_string(row_count_));
    }
  }
  columns_.reserve(columns.size());
  for (Column& c : columns) columns_.push_back(std::make_shared<const Column>(std::move(c)));
}

Schema Table::schema() const {
  Schema s;
  s.reserve(columns_.size());
  for (const auto& c : columns_) s.push_back(c->spec);
  return s;
}

bool Table::has_column(std::string_view name) const {
  for (const auto& c : columns_) {
    if (c->spec.name == name) return true;
  }
  return false;
}

std::size_t Table::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i]->spec.name == name) return i;
  }
  throw Error(ErrorCode::kNotFound, "unknown column '" + std::string(name) + "'");
}

const Column& Table::column(std::string_view name) const { return *columns_[column_index(name)]; }

const Cell& Table::cell(std::string_view column_name, RowId row) const {
  const Column& c = column(column_name);
  if (row >= c.cells.size()) {
    throw Error(ErrorCode::kInvalidArgument, "row id " + std::to_string(row) + " out of range");
  }
  return c.cells[row];
}

Table Table::with_column(Column c) const {
  if (has_column(c.spec.name)) {
    throw Error(ErrorCode::kInvalidArgument, "column '" + c.spec.name + "' already exists");
  }
  if (!columns_.empty() && c.cells.size() != row_count_) {
    throw Error(ErrorCode::kInvalidArgument, "new column '" + c.spec.name + "' has wrong length");
  }
  if (c.spec.name.empty()) throw Error(ErrorCode::kInvalidArgument, "table: empty column name");
  Table out = *this;
  out.uid_ = next_uid();
  if (columns_.empty()) out.row_count_ = c.cells.size();
  out.columns_.push_back(std::make_shared<const Column>(std::move(c)));
  return out;
}

Table Table::select_rows(std::span<const RowId> rows) const {
  std::vector<Column> cols;
  cols.reserve(columns_.size());
  for (const auto& src : columns_) {
    Column c{src->spec, {}};
    c.cells.reserve(rows.size());
    for (RowId r : rows) {
      if (r >= row_count_) {
        throw Error(ErrorCode::kInvalidArgument, "row id " + std::to_string(r) + " out of range");
      }
      c.cells.push_back(src->cells[r]);
    }
    cols.push_back(std::move(c));
  }
  Table out(std::move(cols));
  if (columns_.empty()) out.row_count_ = 0;
  return out;
}

Table Table::select_columns(std::span<const std::string> names) const {
  Table out;
  out.row_count_ = row_count_;
  for (const std::string& n : names) {
    out.columns_.push_back(columns_[column_index(n)]);
    if (auto idx = index_for(n)) out.indices_[n] = idx;
  }
  return out;
}

Table Table::with_index(const std::string& column_name, std::shared_ptr<const SimIndex> index) const {
  column_index(column_name);
  Table out = *this;
  out.indices_[column_name] = std::move(index);
  return out;
}

std::shared_ptr<const SimIndex> Table::index_for(std::string_view column_name) const {
  auto it = indices_.find(column_name);
  return it == indices_.end() ? nullptr : it->second;
}

Table make_text_table(const std::vector<std::string>& names,
                      const std::vector<std::vector<std::string>>& rows) {
  std::vector<Column> cols;
  for (std::size_t j = 0; j < names.size(); ++j) {
    Column c{{names[j], ColumnKind::kText}, {}};
    c.cells.reserve(rows.size());
    for (const auto& r : rows) {
      if (r.size() != names.size()) throw Error(ErrorCode::kInvalidArgument, "ragged fixture row");
      c.cells.emplace_back(r[j]);
    }
    cols.push_back(std::move(c));
  }
  return Table(std::move(cols));
}

ColumnKind infer_kind(std::span<const std::optional<std::string>> fields) {
  bool all_int = true;
  bool all_float = true;
  bool all_bool = true;
  bool any = false;
  for (const auto& f : fields) {
    if (!f) continue;
    any = true;
    std::int64_t i = 0;
    double d = 0;
    bool b = false;
    if (all_int && !parse_int(*f, &i)) all_int = false;
    if (all_float && !parse_float(*f, &d)) all_float = false;
    if (all_bool && !parse_bool(*f, &b)) all_bool = false;
    if (!all_int && !all_float && !all_bool) break;
  }
  if (!any) return ColumnKind::kText;
  if (all_int) return ColumnKind::kInt;
  if (all_float) return ColumnKind::kFloat;
  if (all_bool) return ColumnKind::kBool;
  return ColumnKind::kText;
}

Table parse_csv(std::string_view data) {
  auto records = parse_records(data);
  if (records.empty()) throw Error(ErrorCode::kFormat, "csv: missing header row");
  const auto& header = records.front();
  std::vector<std::string> names;
  std::unordered_set<std::string> seen;
  for (const auto& h : header) {
    std::string name = h.value_or("");
    if (name.empty()) throw Error(ErrorCode::kFormat, "csv: empty header name");
    if (!seen.insert(name).second) {
      throw Error(ErrorCode::kFormat, "csv: duplicate header name '" + name + "'");
    }
    names.push_back(std::move(name));
  }
  const std::size_t n_rows = records.size() - 1;
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != names.size()) {
      throw Error(ErrorCode::kFormat, "csv: record " + std::to_string(r) + " has " +
                                          std::to_string(records[r].size()) + " fields, header has " +
                                          std::to_string(names.size()));
    }
  }
  std::vector<Column> cols;
  cols.reserve(names.size());
  std::vector<std::optional<std::string>> fields(n_rows);
  for (std::size_t j = 0; j < names.size(); ++j) {
    for (std::size_t r = 0; r < n_rows; ++r) fields[r] = std::move(records[r + 1][j]);
    const ColumnKind kind = infer_kind(fields);
    Column c{{names[j], kind}, {}};
    c.cells.reserve(n_rows);
    for (const auto& f : fields) c.cells.push_back(convert(f, kind));
    cols.push_back(std::move(c));
  }
  return Table(std::move(cols));
}

Table load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

std::string to_csv(const Table& t) {
  std::ostringstream out;
  for (std::size_t j = 0; j < t.column_count(); ++j) {
    if (j) out << ',';
    write_field(out, t.column(j).spec.name);
  }
  out << '\n';
  for (std::size_t r = 0; r < t.row_count(); ++r) {
    for (std::size_t j = 0; j < t.column_count(); ++j) {
      if (j) out << ',';
      const Cell& c = t.column(j).cells[r];
      if (is_null(c)) continue;
      write_field(out, cell_to_string(c));
    }
    out << '\n';
  }
  return out.str();
}

void write_csv(const Table& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  out << to_csv(t);
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

std::vector<Group> partition_by_equality(const Table& t, std::span<const std::string> cols) {
  std::vector<const Column*> key_cols;
  for (const std::string& name : cols) key_cols.push_back(&t.column(name));
  std::vector<Group> groups;
  std::unordered_map<std::vector<Cell>, std::size_t, CellHash> lookup;
  for (RowId r = 0; r < t.row_count(); ++r) {
    std::vector<Cell> key;
    key.reserve(key_cols.size());
    for (const Column* c : key_cols) key.push_back(c->cells[r]);
    auto [it, inserted] = lookup.try_emplace(key, groups.size());
    if (inserted) groups.push_back(Group{std::move(key), {}});
    groups[it->second].rows.push_back(r);
  }
  return groups;
}

Table join_tables(const Table& left, const Table& right, std::span<const RowPair> pairs) {
  std::vector<Column> cols;
  auto emit = [&](const Table& side, const Table& other, const char* suffix, bool is_left) {
    for (std::size_t j = 0; j < side.column_count(); ++j) {
      const Column& src = side.column(j);
      Column c{src.spec, {}};
      if (other.has_column(src.spec.name)) c.spec.name += suffix;
      c.cells.reserve(pairs.size());
      for (const RowPair& p : pairs) {
        const auto& r = is_left ? p.left : p.right;
        c.cells.push_back(r ? src.cells[*r] : Cell{});
      }
      cols.push_back(std::move(c));
    }
  };
  emit(left, right, ":left", true);
  emit(right, left, ":right", false);
  return Table(std::move(cols));
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "invalid_argument";
    case ErrorCode::kValidation:
      return "validation";
    case ErrorCode::kNotFound:
      return "not_found";
    case ErrorCode::kIo:
      return "io";
    case ErrorCode::kFormat:
      return "format";
    case ErrorCode::kBudget:
      return "budget";
    case ErrorCode::kNullCell:
      return "null_cell";
    case ErrorCode::kBackend:
      return "backend";
    case ErrorCode::kRuntime:
      return "runtime";
  }
  return "unknown";
}

}  // namespace semops
