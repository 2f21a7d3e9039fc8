#include "semops/langex.hpp"

#include <algorithm>

#include "semops/error.hpp"

namespace semops {

namespace {

const char* side_name(Side s) {
  switch (s) {
    case Side::kLeft:
      return "left";
    case Side::kRight:
      return "right";
    case Side::kNone:
      break;
  }
  return "none";
}

void append_escaped(std::string& out, std::string_view literal) {
  for (char c : literal) {
    out.push_back(c);
    if (c == '{' || c == '}') out.push_back(c);
  }
}

bool has_column(const Schema& schema, std::string_view name) {
  return std::any_of(schema.begin(), schema.end(),
                     [&](const ColumnSpec& c) { return c.name == name; });
}

}  // namespace

Langex Langex::parse(std::string_view src) {
  Langex l;
  l.source_ = std::string(src);
  std::string literal;
  auto flush = [&] {
    if (!literal.empty()) l.segments_.emplace_back(std::move(literal));
    literal.clear();
  };
  for (std::size_t i = 0; i < src.size(); ++i) {
    const char c = src[i];
    if (c == '{') {
      if (i + 1 < src.size() && src[i + 1] == '{') {
        literal.push_back('{');
        ++i;
        continue;
      }
      const std::size_t close = src.find('}', i + 1);
      if (close == std::string_view::npos) {
        throw Error(ErrorCode::kValidation,
                    "langex: unbalanced '{' at offset " + std::to_string(i));
      }
      std::string_view body = src.substr(i + 1, close - i - 1);
      if (body.find('{') != std::string_view::npos) {
        throw Error(ErrorCode::kValidation,
                    "langex: unbalanced '{' at offset " + std::to_string(i));
      }
      Placeholder p;
      const std::size_t colon = body.rfind(':');
      if (colon != std::string_view::npos) {
        std::string_view tag = body.substr(colon + 1);
        if (tag == "left") {
          p.side = Side::kLeft;
        } else if (tag == "right") {
          p.side = Side::kRight;
        } else {
          throw Error(ErrorCode::kValidation,
                      "langex: invalid side tag '" + std::string(tag) + "'");
        }
        body = body.substr(0, colon);
      }
      if (body.empty()) throw Error(ErrorCode::kValidation, "langex: empty placeholder name");
      p.column = std::string(body);
      flush();
      l.segments_.emplace_back(std::move(p));
      i = close;
    } else if (c == '}') {
      if (i + 1 < src.size() && src[i + 1] == '}') {
        literal.push_back('}');
        ++i;
        continue;
      }
      throw Error(ErrorCode::kValidation, "langex: unbalanced '}' at offset " + std::to_string(i));
    } else {
      literal.push_back(c);
    }
  }
  flush();
  return l;
}

std::vector<Placeholder> Langex::placeholders() const {
  std::vector<Placeholder> out;
  for (const Segment& s : segments_) {
    if (const auto* p = std::get_if<Placeholder>(&s)) out.push_back(*p);
  }
  return out;
}

std::vector<std::string> Langex::columns(Side side) const {
  std::vector<std::string> out;
  for (const Segment& s : segments_) {
    const auto* p = std::get_if<Placeholder>(&s);
    if (p && p->side == side && std::find(out.begin(), out.end(), p->column) == out.end()) {
      out.push_back(p->column);
    }
  }
  return out;
}

std::string Langex::unparse() const {
  std::string out;
  for (const Segment& s : segments_) {
    if (const auto* lit = std::get_if<std::string>(&s)) {
      append_escaped(out, *lit);
    } else {
      const auto& p = std::get<Placeholder>(s);
      out += '{';
      out += p.column;
      if (p.side != Side::kNone) {
        out += ':';
        out += side_name(p.side);
      }
      out += '}';
    }
  }
  return out;
}

std::string Langex::instruction_text() const {
  std::string out;
  for (const Segment& s : segments_) {
    if (const auto* lit = std::get_if<std::string>(&s)) {
      out += *lit;
    } else {
      out += std::get<Placeholder>(s).column;
    }
  }
  return out;
}

std::string Langex::literal_text() const {
  std::string out;
  for (const Segment& s : segments_) {
    if (const auto* lit = std::get_if<std::string>(&s)) out += *lit;
  }
  return out;
}

void validate(const Langex& l, const Schema& schema, LangexMode mode, const Schema* right_schema) {
  bool saw_left = false;
  bool saw_right = false;
  for (const Placeholder& p : l.placeholders()) {
    if (mode == LangexMode::kSingle) {
      if (p.side != Side::kNone) {
        throw Error(ErrorCode::kValidation, "langex: side tag ':" + std::string(side_name(p.side)) +
                                                "' on '" + p.column +
                                                "' is only allowed in join expressions");
      }
      if (!has_column(schema, p.column)) {
        throw Error(ErrorCode::kValidation, "langex: unknown column '" + p.column + "'");
      }
      continue;
    }
    if (p.side == Side::kNone) {
      throw Error(ErrorCode::kValidation,
                  "langex: join placeholder '" + p.column + "' needs a :left or :right tag");
    }
    const Schema& target = p.side == Side::kLeft ? schema : *right_schema;
    if (p.side == Side::kRight && right_schema == nullptr) {
      throw Error(ErrorCode::kValidation, "langex: no right table for '" + p.column + "'");
    }
    if (!has_column(target, p.column)) {
      throw Error(ErrorCode::kValidation, "langex: unknown " + std::string(side_name(p.side)) +
                                              " column '" + p.column + "'");
    }
    (p.side == Side::kLeft ? saw_left : saw_right) = true;
  }
  if (mode == LangexMode::kJoin && (!saw_left || !saw_right)) {
    throw Error(ErrorCode::kValidation, std::string("langex: join expression is missing a ") +
                                            (saw_left ? "right" : "left") + " placeholder");
  }
}

std::string render(const Langex& l, RowView row, const RowView* right) {
  std::string out;
  out.reserve(l.source().size() + 64);
  for (const Segment& s : l.segments()) {
    if (const auto* lit = std::get_if<std::string>(&s)) {
      out += *lit;
      continue;
    }
    const auto& p = std::get<Placeholder>(s);
    const RowView& view = (p.side == Side::kRight && right != nullptr) ? *right : row;
    const Cell& c = view.table->cell(p.column, view.row);
    if (is_null(c)) {
      throw Error(ErrorCode::kNullCell, "langex: null cell in column '" + p.column + "' at row " +
                                            std::to_string(view.row));
    }
    if (const auto* text = std::get_if<std::string>(&c)) {
      out += *text;
    } else {
      out += cell_to_string(c);
    }
  }
  return out;
}

}  // namespace semops
