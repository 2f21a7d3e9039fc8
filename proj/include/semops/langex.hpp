#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "semops/table.hpp"

namespace semops {

enum class Side { kNone, kLeft, kRight };

struct Placeholder {
  std::string column;
  Side side = Side::kNone;

  bool operator==(const Placeholder&) const = default;
};

using Segment = std::variant<std::string, Placeholder>;

enum class LangexMode { kSingle, kJoin };

/// A parameterized natural-language expression, e.g.
/// "The {abstract} reports a new state of the art" or
/// "The {abstract:left} evaluates on {dataset:right}".
///
/// Placeholders use single braces; `{{` and `}}` produce literal braces.
class Langex {
 public:
  static Langex parse(std::string_view src);

  const std::string& source() const { return source_; }
  const std::vector<Segment>& segments() const { return segments_; }
  std::vector<Placeholder> placeholders() const;

  // Distinct referenced columns on one side, in first-reference order.
  std::vector<std::string> columns(Side side) const;

  // Canonical source text: literals with braces escaped, placeholders re-emitted.
  std::string unparse() const;

  // Placeholders replaced by their bare column names: "The abstract claims ...".
  std::string instruction_text() const;

  // Placeholders removed entirely; used as a similarity query.
  std::string literal_text() const;

 private:
  std::string source_;
  std::vector<Segment> segments_;
};

// Checks every placeholder against the schema(s). Throws Error(kValidation).
void validate(const Langex& l, const Schema& schema, LangexMode mode,
              const Schema* right_schema = nullptr);

struct RowView {
  const Table* table = nullptr;
  RowId row = 0;
};

// Substitutes each placeholder with the referenced cell's text. Left/right
// placeholders read from `row` and `right` respectively. Throws
// Error(kNullCell) naming the row when a referenced cell is null.
std::string render(const Langex& l, RowView row, const RowView* right = nullptr);

}  // namespace semops
