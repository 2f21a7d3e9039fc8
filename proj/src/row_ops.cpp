#include "semops/row_ops.hpp"

#include <algorithm>
#include <cctype>

namespace semops {

const char* const kFilterInstruction =
    "The user will provide a claim and some relevant context. Your job is to determine whether "
    "the claim is true for the given context. You must answer with a single word, \"True\" or "
    "\"False\".";

const char* const kMapInstruction =
    "The user will provide an instruction that refers to a record. Follow the instruction and "
    "respond with the answer only.";

const char* const kExtractInstruction =
    "The user will provide some context and an instruction. Answer the instruction with direct "
    "quotes copied verbatim from the context. Write each quote on its own line and output "
    "nothing else.";

namespace {

const std::vector<std::string>& bool_labels() {
  static const std::vector<std::string> labels = {"True", "False"};
  return labels;
}

LabelDecision interpret(const LmResult& r, const LmRequest& req) {
  LabelDecision d;
  if (r.error) {
    d.malformed = true;
    return d;
  }
  if (r.has_logprobs()) {
    const LabelChoice c = label_confidence(r);
    d.label = c.index;
    d.confidence = c.confidence;
    return d;
  }
  const auto m = match_label(r.text, req.label_set);
  if (!m) {
    d.malformed = true;
    return d;
  }
  d.label = *m;
  d.confidence = 1.0;
  return d;
}

// Runs `idx` subset of requests on one backend, retrying malformed answers
// once when asked to, and writes decisions into `out`.
void run_tier(Session& s, LmBackend& backend, std::span<const LmRequest> requests,
              const std::vector<std::size_t>& idx, Tier tier, DecisionSource source,
              std::string_view op, const LabelPolicy& policy, std::vector<LabelDecision>& out) {
  if (idx.empty()) return;
  std::vector<std::size_t> pending = idx;
  for (int round = 0; round < (policy.retry_malformed ? 2 : 1) && !pending.empty(); ++round) {
    std::vector<LmResult> results;
    if (pending.size() == requests.size()) {
      results = s.complete(backend, requests, op, tier);
    } else {
      std::vector<LmRequest> subset;
      subset.reserve(pending.size());
      for (std::size_t i : pending) subset.push_back(requests[i]);
      results = s.complete(backend, subset, op, tier);
    }
    std::vector<std::size_t> malformed;
    for (std::size_t j = 0; j < pending.size(); ++j) {
      const std::size_t i = pending[j];
      out[i] = interpret(results[j], requests[i]);
      out[i].source = source;
      if (out[i].malformed) malformed.push_back(i);
    }
    if (!malformed.empty()) s.meter().bump(op, &MeterCounts::malformed_outputs, malformed.size());
    pending = std::move(malformed);
  }
  for (std::size_t i : pending) {
    out[i].label = policy.default_label;
    out[i].confidence = 0.0;
    out[i].source = DecisionSource::kDefault;
    out[i].malformed = true;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

void require_text(const Cell& c, const std::string& column, RowId row) {
  if (is_null(c)) {
    throw Error(ErrorCode::kNullCell,
                "null cell in column '" + column + "' at row " + std::to_string(row));
  }
}

}  // namespace

bool should_escalate(double confidence, double threshold) {
  if (threshold >= 1.0) return true;
  return confidence < threshold;
}

std::vector<LabelDecision> decide_labels(Session& s, std::span<const LmRequest> requests,
                                         const std::optional<CascadeConfig>& cascade,
                                         std::string_view op, const LabelPolicy& policy) {
  std::vector<LabelDecision> out(requests.size());
  if (requests.empty()) return out;
  std::vector<std::size_t> all(requests.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  if (!cascade) {
    run_tier(s, s.default_backend(), requests, all, Tier::kSingle, DecisionSource::kModel, op,
             policy, out);
    return out;
  }
  run_tier(s, s.backend(cascade->proxy), requests, all, Tier::kProxy, DecisionSource::kProxy, op,
           policy, out);
  std::vector<std::size_t> escalate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (should_escalate(out[i].confidence, cascade->threshold)) escalate.push_back(i);
  }
  run_tier(s, s.backend(cascade->oracle), requests, escalate, Tier::kOracle,
           DecisionSource::kOracle, op, policy, out);
  return out;
}

std::string row_document(const Langex& l, RowView row, Side side) {
  const auto cols = l.columns(side);
  std::string out;
  for (const std::string& col : cols) {
    const Cell& c = row.table->cell(col, row.row);
    require_text(c, col, row.row);
    if (cols.size() == 1) return cell_to_string(c);
    if (!out.empty()) out += '\n';
    out += col;
    out += ": ";
    out += cell_to_string(c);
  }
  return out;
}

LmRequest make_filter_request(const Langex& l, RowView row, const RowView* right,
                              const std::vector<Demonstration>& demos) {
  LmRequest req;
  req.system_instruction = kFilterInstruction;
  req.label_set = bool_labels();
  req.demonstrations = demos;
  req.task = TaskKind::kFilter;
  req.max_output_chars = 16;
  std::string& p = req.user_prompt;
  p = "Context:\n";
  for (const Placeholder& ph : l.placeholders()) {
    const RowView& view = (ph.side == Side::kRight && right != nullptr) ? *right : row;
    const Cell& c = view.table->cell(ph.column, view.row);
    require_text(c, ph.column, view.row);
    p += '[';
    p += ph.column;
    if (ph.side == Side::kLeft) p += " (left)";
    if (ph.side == Side::kRight) p += " (right)";
    p += "]: ";
    p += cell_to_string(c);
    p += '\n';
  }
  p += "\nClaim: ";
  p += l.instruction_text();
  if (right != nullptr) {
    req.sources = {SourceRef{row.table, row.row, SourceRole::kLeft},
                   SourceRef{right->table, right->row, SourceRole::kRight}};
  } else {
    req.sources = {SourceRef{row.table, row.row, SourceRole::kRow}};
  }
  return req;
}

Table sem_filter(Session& s, const Table& t, const std::string& predicate,
                 const FilterOptions& opts) {
  OpTimer timer(s.meter(), "sem_filter");
  const Langex l = Langex::parse(predicate);
  validate(l, t.schema(), LangexMode::kSingle);
  std::vector<LmRequest> requests;
  requests.reserve(t.row_count());
  for (RowId r = 0; r < t.row_count(); ++r) {
    requests.push_back(make_filter_request(l, RowView{&t, r}, nullptr, opts.demos));
  }
  LabelPolicy policy;
  policy.default_label = 1;  // malformed -> False
  const auto decisions = decide_labels(s, requests, opts.cascade, "sem_filter", policy);
  std::vector<RowId> keep;
  for (RowId r = 0; r < decisions.size(); ++r) {
    if (decisions[r].label == 0) keep.push_back(r);
  }
  Table out = t.select_rows(keep);
  if (keep.size() == t.row_count()) {
    // Identical rows: keep the row-aligned indices.
    for (const auto& [col, idx] : t.indices()) out = out.with_index(col, idx);
  }
  return out;
}

Table sem_map(Session& s, const Table& t, const std::string& projection, const std::string& name,
              const std::vector<Demonstration>& demos) {
  OpTimer timer(s.meter(), "sem_map");
  const Langex l = Langex::parse(projection);
  validate(l, t.schema(), LangexMode::kSingle);
  if (t.has_column(name)) {
    throw Error(ErrorCode::kValidation, "sem_map: column '" + name + "' already exists");
  }
  std::vector<LmRequest> requests;
  requests.reserve(t.row_count());
  for (RowId r = 0; r < t.row_count(); ++r) {
    LmRequest req;
    req.system_instruction = kMapInstruction;
    req.user_prompt = render(l, RowView{&t, r});
    req.demonstrations = demos;
    req.task = TaskKind::kMap;
    req.sources = {SourceRef{&t, r, SourceRole::kRow}};
    requests.push_back(std::move(req));
  }
  const auto results = s.complete(s.default_backend(), requests, "sem_map");
  Column c{{name, ColumnKind::kText}, {}};
  c.cells.reserve(results.size());
  for (const LmResult& r : results) {
    if (r.error) {
      c.cells.emplace_back(std::monostate{});
    } else {
      c.cells.emplace_back(r.text);
    }
  }
  return t.with_column(std::move(c));
}

std::vector<std::string> verify_snippets(std::string_view output, std::string_view source,
                                         std::size_t* dropped) {
  struct Found {
    std::size_t pos;
    std::string text;
  };
  std::vector<Found> kept;
  std::size_t rejected = 0;
  std::size_t start = 0;
  while (start <= output.size()) {
    std::size_t end = output.find('\n', start);
    if (end == std::string_view::npos) end = output.size();
    std::string_view line = trim(output.substr(start, end - start));
    start = end + 1;
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"' &&
        source.find(line) == std::string_view::npos) {
      line = line.substr(1, line.size() - 2);
    }
    if (line.empty()) continue;
    const std::size_t pos = source.find(line);
    if (pos == std::string_view::npos) {
      ++rejected;
      continue;
    }
    kept.push_back(Found{pos, std::string(line)});
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const Found& a, const Found& b) { return a.pos < b.pos; });
  if (dropped != nullptr) *dropped = rejected;
  std::vector<std::string> out;
  out.reserve(kept.size());
  for (Found& f : kept) out.push_back(std::move(f.text));
  return out;
}

Table sem_extract(Session& s, const Table& t, const std::string& instruction,
                  const std::string& name) {
  OpTimer timer(s.meter(), "sem_extract");
  const Langex l = Langex::parse(instruction);
  validate(l, t.schema(), LangexMode::kSingle);
  if (t.has_column(name)) {
    throw Error(ErrorCode::kValidation, "sem_extract: column '" + name + "' already exists");
  }
  const auto cols = l.columns(Side::kNone);
  std::vector<std::string> sources(t.row_count());
  std::vector<LmRequest> requests;
  requests.reserve(t.row_count());
  for (RowId r = 0; r < t.row_count(); ++r) {
    std::string& src = sources[r];
    for (const std::string& col : cols) {
      const Cell& c = t.cell(col, r);
      require_text(c, col, r);
      if (!src.empty()) src += '\n';
      src += cell_to_string(c);
    }
    LmRequest req;
    req.system_instruction = kExtractInstruction;
    req.user_prompt = "Context:\n" + src + "\n\nInstruction: " + l.instruction_text();
    req.task = TaskKind::kExtract;
    req.sources = {SourceRef{&t, r, SourceRole::kRow}};
    requests.push_back(std::move(req));
  }
  const auto results = s.complete(s.default_backend(), requests, "sem_extract");
  Column c{{name, ColumnKind::kText}, {}};
  std::size_t total_dropped = 0;
  for (RowId r = 0; r < results.size(); ++r) {
    if (results[r].error) {
      c.cells.emplace_back(std::monostate{});
      continue;
    }
    std::size_t dropped = 0;
    const auto snippets = verify_snippets(results[r].text, sources[r], &dropped);
    total_dropped += dropped;
    std::string joined;
    for (const auto& sn : snippets) {
      if (!joined.empty()) joined += '\n';
      joined += sn;
    }
    c.cells.emplace_back(std::move(joined));
  }
  if (total_dropped) s.meter().bump("sem_extract", &MeterCounts::dropped_snippets, total_dropped);
  return t.with_column(std::move(c));
}

}  // namespace semops
