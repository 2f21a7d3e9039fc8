#include "semops/agg_ops.hpp"

#include <algorithm>

#include "semops/row_ops.hpp"

namespace semops {

const char* const kAggInstruction =
    "The user will provide an instruction and a set of documents or partial answers. Follow the "
    "instruction using only the material provided and respond with the answer only.";

namespace {

constexpr const char* kOp = "sem_agg";

struct Unit {
  std::string text;
  std::vector<std::size_t> parts;  // sorted partition ordinals
  std::vector<RowId> rows;         // source rows of leaf documents
};

struct Lane {
  std::vector<Unit> units;
  bool leaf = true;
};

struct GroupState {
  std::vector<Lane> lanes;
  bool merging = false;
  bool done = false;
};

std::vector<std::size_t> merge_parts(const std::vector<std::size_t>& a,
                                     const std::vector<std::size_t>& b) {
  std::vector<std::size_t> out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

// Cuts at a UTF-8 character boundary at or below `n` bytes.
std::string truncate_utf8(std::string s, std::size_t n) {
  if (s.size() <= n) return s;
  while (n > 0 && (static_cast<unsigned char>(s[n]) & 0xC0) == 0x80) --n;
  s.resize(n);
  return s;
}

void append_joined(std::string& out, std::span<const Unit> units) {
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (i > 0) out += kAggSeparator;
    out += units[i].text;
  }
}

LmRequest base_request(const std::string& instruction, std::size_t max_output) {
  LmRequest req;
  req.system_instruction = kAggInstruction;
  req.task = TaskKind::kAggregate;
  req.max_output_chars = max_output;
  req.user_prompt = "Instruction: ";
  req.user_prompt += instruction;
  return req;
}

void attach_sources(LmRequest& req, const Table& t, std::span<const Unit> units) {
  for (const Unit& u : units) {
    for (RowId r : u.rows) req.sources.push_back(SourceRef{&t, r, SourceRole::kRow});
  }
}

class Aggregator {
 public:
  Aggregator(Session& s, const Table& t, const AggConfig& cfg, std::string instruction,
             std::vector<AggStep>* trace)
      : s_(s), t_(t), cfg_(cfg), instruction_(std::move(instruction)), trace_(trace) {
    budget_ = agg_content_budget(cfg.max_context_chars, instruction_.size());
    output_cap_ = (budget_ - kAggSeparator.size()) / 2;
  }

  std::size_t budget() const { return budget_; }

  void check_doc(const Unit& u) const {
    if (u.text.size() > budget_) {
      throw Error(ErrorCode::kValidation,
                  "sem_agg: row " + std::to_string(u.rows.front()) + " renders to " +
                      std::to_string(u.text.size()) + " chars, above the per-prompt capacity of " +
                      std::to_string(budget_));
    }
  }

  // All groups advance level by level; each level's packs are one batch.
  std::vector<std::string> hierarchical(std::vector<GroupState>& groups) {
    std::vector<std::string> out(groups.size());
    for (int level = 0;; ++level) {
      struct Pending {
        std::size_t group;
        std::size_t lane;
        std::size_t begin;
        std::size_t count;
      };
      std::vector<Pending> pending;
      std::vector<LmRequest> requests;
      for (std::size_t g = 0; g < groups.size(); ++g) {
        GroupState& gs = groups[g];
        if (gs.done) continue;
        if (!gs.merging && std::none_of(gs.lanes.begin(), gs.lanes.end(), needs_work)) {
          if (gs.lanes.size() > 1) {
            Lane merged{{}, false};
            for (Lane& lane : gs.lanes) merged.units.push_back(std::move(lane.units.front()));
            gs.lanes = {std::move(merged)};
          }
          gs.merging = true;
        }
        if (gs.merging && !needs_work(gs.lanes.front())) {
          gs.done = true;
          out[g] = gs.lanes.empty() || gs.lanes.front().units.empty()
                       ? std::string()
                       : gs.lanes.front().units.front().text;
          continue;
        }
        for (std::size_t li = 0; li < gs.lanes.size(); ++li) {
          Lane& lane = gs.lanes[li];
          if (!needs_work(lane)) continue;
          std::vector<std::size_t> lengths;
          lengths.reserve(lane.units.size());
          for (const Unit& u : lane.units) lengths.push_back(u.text.size());
          const auto packs = pack_greedy(lengths, budget_);
          if (!lane.leaf && packs.size() == lane.units.size()) {
            throw Error(ErrorCode::kRuntime, "sem_agg: merge level made no progress");
          }
          std::size_t begin = 0;
          for (std::size_t count : packs) {
            requests.push_back(make_request(std::span(lane.units).subspan(begin, count),
                                            !lane.leaf, nullptr));
            pending.push_back(Pending{g, li, begin, count});
            record(level, g, std::span(lane.units).subspan(begin, count), !lane.leaf,
                   requests.back());
            begin += count;
          }
        }
      }
      if (requests.empty()) break;
      const auto results = s_.complete(s_.default_backend(), requests, kOp);

      // Rebuild each worked lane from its packs' answers, in pack order.
      std::vector<std::vector<std::vector<Unit>>> rebuilt(groups.size());
      for (std::size_t g = 0; g < groups.size(); ++g) rebuilt[g].resize(groups[g].lanes.size());
      for (std::size_t i = 0; i < pending.size(); ++i) {
        const Pending& p = pending[i];
        const Lane& lane = groups[p.group].lanes[p.lane];
        Unit u;
        u.text = answer(results[i]);
        for (std::size_t j = p.begin; j < p.begin + p.count; ++j) {
          u.parts = merge_parts(u.parts, lane.units[j].parts);
        }
        rebuilt[p.group][p.lane].push_back(std::move(u));
      }
      for (std::size_t g = 0; g < groups.size(); ++g) {
        for (std::size_t li = 0; li < groups[g].lanes.size(); ++li) {
          if (rebuilt[g][li].empty()) continue;
          groups[g].lanes[li].units = std::move(rebuilt[g][li]);
          groups[g].lanes[li].leaf = false;
        }
      }
    }
    return out;
  }

  // Sequential accumulation over the group's documents; one call per batch.
  std::string fold(std::size_t group, std::vector<Unit> docs) {
    std::optional<Unit> acc;
    std::size_t i = 0;
    int step = 0;
    while (i < docs.size()) {
      std::size_t avail = budget_;
      if (acc) {
        const std::size_t need = docs[i].text.size() + kAggSeparator.size();
        const std::size_t keep = std::min(acc->text.size(), budget_ >= need ? budget_ - need : 0);
        acc->text = truncate_utf8(std::move(acc->text), keep);
        avail = budget_ - acc->text.size() - kAggSeparator.size();
      }
      std::size_t used = 0;
      std::size_t j = i;
      while (j < docs.size()) {
        const std::size_t add = docs[j].text.size() + (j > i ? kAggSeparator.size() : 0);
        if (used + add > avail) break;
        used += add;
        ++j;
      }
      const auto pack = std::span(docs).subspan(i, j - i);
      LmRequest req = make_request(pack, false, acc ? &*acc : nullptr);
      std::vector<Unit> inputs(pack.begin(), pack.end());
      if (acc) inputs.insert(inputs.begin(), *acc);
      record(step++, group, inputs, acc.has_value(), req);
      const auto results = s_.complete(s_.default_backend(), std::span(&req, 1), kOp);
      Unit next;
      next.text = answer(results.front());
      for (const Unit& u : inputs) next.parts = merge_parts(next.parts, u.parts);
      acc = std::move(next);
      i = j;
    }
    return acc ? acc->text : std::string();
  }

 private:
  static bool needs_work(const Lane& lane) { return lane.leaf || lane.units.size() > 1; }

  LmRequest make_request(std::span<const Unit> units, bool merge, const Unit* acc) const {
    LmRequest req = base_request(instruction_, output_cap_);
    std::string& p = req.user_prompt;
    if (acc != nullptr) {
      p += "\n\nAnswer so far:\n";
      p += acc->text;
      p += kAggSeparator;
      p += "Additional documents:\n";
    } else if (merge) {
      p += "\n\nThe following are partial answers from earlier aggregation steps. Combine them "
           "into one answer.\n";
    } else {
      p += "\n\nDocuments:\n";
    }
    append_joined(p, units);
    if (!merge) attach_sources(req, t_, units);
    if (request_chars(req) > cfg_.max_context_chars) {
      throw Error(ErrorCode::kRuntime, "sem_agg: prompt of " + std::to_string(request_chars(req)) +
                                           " chars exceeds max_context_chars");
    }
    return req;
  }

  std::string answer(const LmResult& r) const {
    if (r.error) throw Error(ErrorCode::kBackend, "sem_agg: LM call failed: " + *r.error);
    return truncate_utf8(r.text, output_cap_);
  }

  void record(int level, std::size_t group, std::span<const Unit> units, bool merge,
              const LmRequest& req) {
    if (trace_ == nullptr) return;
    AggStep step;
    step.level = level;
    step.group = group;
    for (const Unit& u : units) step.partitions = merge_parts(step.partitions, u.parts);
    step.inputs = units.size();
    step.merge = merge;
    step.prompt_chars = request_chars(req);
    trace_->push_back(std::move(step));
  }

  Session& s_;
  const Table& t_;
  const AggConfig& cfg_;
  std::string instruction_;
  std::vector<AggStep>* trace_;
  std::size_t budget_ = 0;
  std::size_t output_cap_ = 0;
};

}  // namespace

std::optional<AggPattern> parse_agg_pattern(std::string_view name) {
  if (name == "hierarchical") return AggPattern::kHierarchical;
  if (name == "fold") return AggPattern::kFold;
  return std::nullopt;
}

std::size_t request_chars(const LmRequest& req) {
  std::size_t n = req.system_instruction.size() + req.user_prompt.size();
  for (const Demonstration& d : req.demonstrations) n += d.input.size() + d.output.size();
  return n;
}

std::size_t agg_content_budget(std::size_t max_context_chars, std::size_t instruction_chars) {
  const std::size_t overhead = kTemplateReserve + instruction_chars;
  if (max_context_chars <= overhead + 2 * kAggSeparator.size() + 2) {
    throw Error(ErrorCode::kValidation,
                "sem_agg: max_context_chars=" + std::to_string(max_context_chars) +
                    " leaves no room for documents (reserve " + std::to_string(overhead) + ")");
  }
  return max_context_chars - overhead;
}

std::vector<std::size_t> pack_greedy(std::span<const std::size_t> lengths, std::size_t budget) {
  std::vector<std::size_t> packs;
  std::size_t used = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] > budget) {
      throw Error(ErrorCode::kValidation, "item " + std::to_string(i) + " of " +
                                              std::to_string(lengths[i]) +
                                              " chars exceeds the pack capacity of " +
                                              std::to_string(budget));
    }
    const std::size_t add = lengths[i] + (count > 0 ? kAggSeparator.size() : 0);
    if (count > 0 && used + add > budget) {
      packs.push_back(count);
      used = lengths[i];
      count = 1;
    } else {
      used += add;
      ++count;
    }
  }
  if (count > 0) packs.push_back(count);
  return packs;
}

Table sem_agg(Session& s, const Table& t, const std::string& instruction, const AggConfig& cfg,
              std::vector<AggStep>* trace) {
  OpTimer timer(s.meter(), kOp);
  const Langex l = Langex::parse(instruction);
  validate(l, t.schema(), LangexMode::kSingle);
  if (l.placeholders().empty()) {
    throw Error(ErrorCode::kValidation, "sem_agg: the instruction references no column");
  }
  for (const std::string& col : cfg.group_by) {
    if (!t.has_column(col)) throw Error(ErrorCode::kValidation, "sem_agg: unknown group_by column '" + col + "'");
  }
  if (!cfg.partition_column.empty() && !t.has_column(cfg.partition_column)) {
    throw Error(ErrorCode::kValidation,
                "sem_agg: unknown partition column '" + cfg.partition_column + "'");
  }
  if (t.has_column(cfg.output_column) &&
      std::find(cfg.group_by.begin(), cfg.group_by.end(), cfg.output_column) != cfg.group_by.end()) {
    throw Error(ErrorCode::kValidation, "sem_agg: output column collides with a group_by column");
  }

  Aggregator agg(s, t, cfg, l.instruction_text(), trace);

  std::vector<Group> groups;
  if (cfg.group_by.empty()) {
    Group all;
    all.rows.resize(t.row_count());
    for (RowId r = 0; r < t.row_count(); ++r) all.rows[r] = r;
    groups.push_back(std::move(all));
  } else {
    groups = partition_by_equality(t, cfg.group_by);
  }

  // Documents per group, split into partitions in first-occurrence order.
  std::vector<std::vector<std::vector<Unit>>> parted(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    std::vector<std::vector<RowId>> part_rows;
    if (cfg.partition_column.empty()) {
      part_rows.push_back(groups[g].rows);
    } else {
      const Table sub = t.select_rows(groups[g].rows);
      const std::string col = cfg.partition_column;
      for (Group& pg : partition_by_equality(sub, std::span(&col, 1))) {
        for (RowId& r : pg.rows) r = groups[g].rows[r];
        part_rows.push_back(std::move(pg.rows));
      }
    }
    for (std::size_t p = 0; p < part_rows.size(); ++p) {
      std::vector<Unit> docs;
      for (RowId r : part_rows[p]) {
        Unit u{row_document(l, RowView{&t, r}), {p}, {r}};
        agg.check_doc(u);
        docs.push_back(std::move(u));
      }
      parted[g].push_back(std::move(docs));
    }
  }

  std::vector<std::optional<std::string>> answers(groups.size());
  if (cfg.pattern == AggPattern::kFold) {
    for (std::size_t g = 0; g < groups.size(); ++g) {
      std::vector<Unit> docs;
      for (auto& part : parted[g]) {
        for (Unit& u : part) docs.push_back(std::move(u));
      }
      if (!docs.empty()) answers[g] = agg.fold(g, std::move(docs));
    }
  } else {
    std::vector<GroupState> states(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (auto& part : parted[g]) {
        if (!part.empty()) states[g].lanes.push_back(Lane{std::move(part), true});
      }
      if (states[g].lanes.empty()) states[g].done = true;
    }
    const auto out = agg.hierarchical(states);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (!states[g].lanes.empty()) answers[g] = out[g];
    }
  }

  std::vector<Column> cols;
  for (std::size_t c = 0; c < cfg.group_by.size(); ++c) {
    Column col{{cfg.group_by[c], t.column(cfg.group_by[c]).spec.kind}, {}};
    for (const Group& g : groups) col.cells.push_back(g.key[c]);
    cols.push_back(std::move(col));
  }
  Column out{{cfg.output_column, ColumnKind::kText}, {}};
  for (auto& a : answers) {
    if (a) {
      out.cells.emplace_back(std::move(*a));
    } else {
      out.cells.emplace_back(std::monostate{});
    }
  }
  cols.push_back(std::move(out));
  return Table(std::move(cols));
}

Table sem_partition_by(const Table& t, const PartitionFn& f) {
  Column ids{{kPartitionColumn, ColumnKind::kInt}, {}};
  ids.cells.reserve(t.row_count());
  for (RowId r = 0; r < t.row_count(); ++r) ids.cells.emplace_back(f(RowView{&t, r}));
  return t.with_column(std::move(ids));
}

Table sem_partition_by(Session& s, const Table& t, std::size_t clusters, const std::string& column,
                       std::uint64_t seed) {
  const Table clustered = sem_cluster_by(s, t, column, clusters, false, seed);
  Column ids = clustered.column("cluster_id");
  ids.spec.name = kPartitionColumn;
  return t.with_column(std::move(ids));
}

}  // namespace semops
