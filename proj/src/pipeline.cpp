#include "semops/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"

#include "semops/agg_ops.hpp"
#include "semops/join_ops.hpp"
#include "semops/row_ops.hpp"
#include "semops/topk.hpp"

namespace semops {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kDefaultEmbedder = "mock-ngram:d=64:s=0";

Error invalid(const std::string& msg) { return Error(ErrorCode::kValidation, msg); }

// Typed access to one JSON object; remembers which keys were read so unknown
// (usually misspelled) keys can be reported.
class Params {
 public:
  Params(const json& j, std::string what) : j_(j), what_(std::move(what)) {
    if (!j_.is_object()) throw invalid(what_ + ": expected an object");
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  std::string str(const std::string& key) {
    if (!has(key)) throw invalid(what_ + ": missing '" + key + "'");
    return as_str(key);
  }
  std::string str_or(const std::string& key, std::string def) {
    return has(key) ? as_str(key) : std::move(def);
  }
  std::size_t size(const std::string& key) {
    if (!has(key)) throw invalid(what_ + ": missing '" + key + "'");
    return as_size(key);
  }
  std::size_t size_or(const std::string& key, std::size_t def) { return has(key) ? as_size(key) : def; }
  std::optional<std::size_t> opt_size(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return as_size(key);
  }
  double num_or(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_number()) throw invalid(what_ + ": '" + key + "' must be a number");
    return v.get<double>();
  }
  bool flag_or(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw invalid(what_ + ": '" + key + "' must be true or false");
    return v.get<bool>();
  }
  std::vector<std::string> strings_or_empty(const std::string& key) {
    std::vector<std::string> out;
    if (!has(key)) return out;
    const json& v = j_.at(key);
    if (v.is_string()) return {v.get<std::string>()};
    if (!v.is_array()) throw invalid(what_ + ": '" + key + "' must be a list of strings");
    for (const json& e : v) {
      if (!e.is_string()) throw invalid(what_ + ": '" + key + "' must be a list of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  void reject_unknown() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.contains(it.key())) throw invalid(what_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  std::string as_str(const std::string& key) const {
    const json& v = j_.at(key);
    if (!v.is_string()) throw invalid(what_ + ": '" + key + "' must be a string");
    return v.get<std::string>();
  }
  std::size_t as_size(const std::string& key) const {
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
      throw invalid(what_ + ": '" + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
  }

  const json& j_;
  std::string what_;
  std::set<std::string> used_;
};

struct SimTable {
  Schema schema;
  std::set<std::string> indexed;
};

const ColumnSpec* find_column(const Schema& s, std::string_view name) {
  for (const ColumnSpec& c : s) {
    if (c.name == name) return &c;
  }
  return nullptr;
}

void require_column(const SimTable& t, const std::string& name, const char* role = "column") {
  if (find_column(t.schema, name) == nullptr) {
    throw invalid(std::string("unknown ") + role + " '" + name + "'");
  }
}

void require_text_column(const SimTable& t, const std::string& name) {
  const ColumnSpec* c = find_column(t.schema, name);
  if (c == nullptr) throw invalid("unknown column '" + name + "'");
  if (c->kind != ColumnKind::kText) {
    throw invalid("column '" + name + "' is " + column_kind_name(c->kind) + ", not text");
  }
}

void require_index(const SimTable& t, const std::string& column) {
  require_column(t, column);
  if (!t.indexed.contains(column)) {
    throw invalid("column '" + column + "' has no similarity index (load one under inputs or add "
                  "a sem_index op)");
  }
}

void add_column(SimTable& t, const std::string& name, ColumnKind kind) {
  if (find_column(t.schema, name) != nullptr) throw invalid("column '" + name + "' already exists");
  t.schema.push_back({name, kind});
}

Table empty_table(const Schema& s) {
  std::vector<Column> cols;
  for (const ColumnSpec& c : s) cols.push_back(Column{c, {}});
  return Table(std::move(cols));
}

Schema joined_schema(const Schema& l, const Schema& r) {
  return join_tables(empty_table(l), empty_table(r), {}).schema();
}

std::vector<Demonstration> parse_demos(Params& p, const std::string& key) {
  std::vector<Demonstration> out;
  if (!p.has(key)) return out;
  const json& arr = p.raw(key);
  if (!arr.is_array()) throw invalid("'" + key + "' must be a list");
  for (const json& d : arr) {
    Params dp(d, key);
    out.push_back(Demonstration{dp.str("input"), dp.str("output")});
    dp.reject_unknown();
  }
  return out;
}

std::optional<CascadeConfig> parse_cascade(Params& p, const Session& s) {
  if (!p.has("cascade")) return std::nullopt;
  Params cp(p.raw("cascade"), "cascade");
  CascadeConfig c;
  c.proxy = cp.str("proxy");
  c.oracle = cp.str("oracle");
  c.threshold = cp.num_or("threshold", c.threshold);
  cp.reject_unknown();
  if (c.threshold < 0.0 || c.threshold > 1.0) throw invalid("cascade threshold must be in [0, 1]");
  for (const std::string& id : {c.proxy, c.oracle}) {
    if (!s.has_backend(id)) throw invalid("cascade names unknown backend '" + id + "'");
  }
  return c;
}

Langex checked_langex(const std::string& src, const SimTable& t) {
  Langex l = Langex::parse(src);
  validate(l, t.schema, LangexMode::kSingle);
  return l;
}

Table group_concat(const Table& t, const std::vector<std::string>& by, const std::string& column,
                   const std::string& name, const std::string& sep) {
  const auto groups = partition_by_equality(t, by);
  std::vector<Column> cols;
  for (std::size_t c = 0; c < by.size(); ++c) {
    Column col{t.column(by[c]).spec, {}};
    for (const Group& g : groups) col.cells.push_back(g.key[c]);
    cols.push_back(std::move(col));
  }
  Column joined{{name, ColumnKind::kText}, {}};
  for (const Group& g : groups) {
    std::string s;
    bool first = true;
    for (RowId r : g.rows) {
      const Cell& c = t.cell(column, r);
      if (is_null(c)) continue;
      if (!first) s += sep;
      s += cell_to_string(c);
      first = false;
    }
    joined.cells.emplace_back(std::move(s));
  }
  cols.push_back(std::move(joined));
  return Table(std::move(cols));
}

using Tables = std::map<std::string, Table, std::less<>>;
using RunFn = std::function<Table(Session&, const Table&, const Tables&)>;

struct OpPlan {
  std::string name;
  std::optional<std::string> input;
  std::optional<std::string> save_as;
  RunFn run;
};

json counts_json(const MeterCounts& m) {
  json j;
  j["lm_calls"] = m.lm_calls;
  j["batches"] = m.batches;
  j["proxy_calls"] = m.proxy_calls;
  j["oracle_calls"] = m.oracle_calls;
  j["cache_hits"] = m.cache_hits;
  j["malformed_outputs"] = m.malformed_outputs;
  j["failed_calls"] = m.failed_calls;
  j["retries"] = m.retries;
  j["dropped_snippets"] = m.dropped_snippets;
  j["max_batch_size"] = m.max_batch_size;
  j["wall_time_s"] = m.wall_time_s;
  return j;
}

BackendPtr make_backend(const json& spec, std::size_t i) {
  Params p(spec, "backend " + std::to_string(i + 1));
  const std::string id = p.str("id");
  const std::string type = p.str("type");
  BackendPtr b;
  if (type == "keyed") {
    KeyedOracleConfig c;
    c.key_column = p.str_or("key_column", c.key_column);
    c.temperature = p.num_or("temperature", 0.0);
    c.seed = p.size_or("seed", 0);
    c.filter_threshold = p.num_or("filter_threshold", c.filter_threshold);
    c.left_key_column = p.str_or("left_key_column", "");
    c.right_key_column = p.str_or("right_key_column", "");
    c.map_column = p.str_or("map_column", "");
    b = std::make_shared<KeyedOracleBackend>(id, c);
  } else if (type == "constant") {
    b = ScriptedBackend::constant(id, p.str("text"));
  } else if (type == "echo") {
    b = ScriptedBackend::echo(id);
  } else if (type == "http") {
    HttpBackendConfig c;
    c.id = id;
    c.base_url = p.str("base_url");
    c.path = p.str_or("path", c.path);
    c.model = p.str("model");
    c.api_key_env = p.str_or("api_key_env", "");
    c.temperature = p.num_or("temperature", c.temperature);
    c.top_logprobs = static_cast<int>(p.size_or("top_logprobs", c.top_logprobs));
    c.timeout_s = static_cast<int>(p.size_or("timeout_s", c.timeout_s));
    b = std::make_shared<HttpBackend>(c);
  } else {
    throw invalid("backend '" + id + "': unknown type '" + type +
                  "' (expected keyed, constant, echo or http)");
  }
  p.reject_unknown();
  return b;
}

}  // namespace

std::string RunMetrics::to_json() const {
  json j;
  j["completed"] = completed;
  j["error"] = error;
  j["result_rows"] = result_rows;
  j["wall_time_s"] = wall_time_s;
  j["totals"] = counts_json(total);
  json ops_j = json::array();
  for (const OpMetrics& o : ops) {
    json e;
    e["index"] = o.index;
    e["op"] = o.op;
    e["rows_out"] = o.rows_out;
    const json counts = counts_json(o.counts);
    for (auto it = counts.begin(); it != counts.end(); ++it) e[it.key()] = it.value();
    ops_j.push_back(std::move(e));
  }
  j["ops"] = std::move(ops_j);
  j["warnings"] = warnings;
  return j.dump(2);
}

struct Pipeline::Impl {
  fs::path base;
  json doc;
  std::vector<std::pair<std::string, json>> inputs;
  std::string source;
  json ops;
  std::optional<std::string> output;
  std::optional<std::string> metrics;
  std::unique_ptr<Session> session;

  Tables loaded;
  std::map<std::string, SimTable> loaded_sims;
  std::vector<OpPlan> plans;
  bool validated = false;

  std::string resolve(const std::string& p) const {
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
  }

  void load_inputs();
  OpPlan plan_op(const json& op, std::map<std::string, SimTable>& sims, SimTable& current);
};

void Pipeline::Impl::load_inputs() {
  if (!loaded.empty()) return;
  for (const auto& [name, spec] : inputs) {
    Params p(spec, "input '" + name + "'");
    const std::string csv = resolve(p.str("csv"));
    Table t;
    try {
      t = load_csv(csv);
    } catch (const Error& e) {
      throw invalid("input '" + name + "': " + e.what());
    }
    if (p.has("indices")) {
      const json& idx = p.raw("indices");
      if (!idx.is_object()) throw invalid("input '" + name + "': 'indices' must be an object");
      for (auto it = idx.begin(); it != idx.end(); ++it) {
        if (!it.value().is_string()) throw invalid("input '" + name + "': index dir must be a string");
        try {
          t = load_sem_index(t, it.key(), resolve(it.value().get<std::string>()),
                             session->embedder());
        } catch (const Error& e) {
          throw invalid("input '" + name + "', index on '" + it.key() + "': " + e.what());
        }
      }
    }
    p.reject_unknown();
    SimTable sim{t.schema(), {}};
    for (const auto& [col, _] : t.indices()) sim.indexed.insert(col);
    loaded_sims[name] = std::move(sim);
    loaded.emplace(name, std::move(t));
  }
}

OpPlan Pipeline::Impl::plan_op(const json& op, std::map<std::string, SimTable>& sims,
                               SimTable& current) {
  Params p(op, "op");
  OpPlan plan;
  plan.name = p.str("op");
  if (p.has("input")) {
    plan.input = p.str("input");
    auto it = sims.find(*plan.input);
    if (it == sims.end()) throw invalid("unknown table '" + *plan.input + "'");
    current = it->second;
  }
  if (p.has("save_as")) plan.save_as = p.str("save_as");
  const std::string& name = plan.name;
  Session& s = *session;
  auto right_sim = [&](const std::string& right) -> const SimTable& {
    auto it = sims.find(right);
    if (it == sims.end()) throw invalid("unknown table '" + right + "'");
    return it->second;
  };

  if (name == "sem_filter") {
    const std::string src = p.str("langex");
    checked_langex(src, current);
    FilterOptions fo;
    fo.demos = parse_demos(p, "demos");
    fo.cascade = parse_cascade(p, s);
    current.indexed.clear();
    plan.run = [src, fo](Session& s, const Table& t, const Tables&) {
      return sem_filter(s, t, src, fo);
    };
  } else if (name == "sem_map" || name == "sem_extract") {
    const std::string src = p.str("langex");
    const std::string col = p.str("name");
    checked_langex(src, current);
    add_column(current, col, ColumnKind::kText);
    if (name == "sem_map") {
      const auto demos = parse_demos(p, "demos");
      plan.run = [src, col, demos](Session& s, const Table& t, const Tables&) {
        return sem_map(s, t, src, col, demos);
      };
    } else {
      plan.run = [src, col](Session& s, const Table& t, const Tables&) {
        return sem_extract(s, t, src, col);
      };
    }
  } else if (name == "sem_topk") {
    const std::string src = p.str("langex");
    const Langex l = checked_langex(src, current);
    TopkConfig tc;
    tc.k = p.size("k");
    if (tc.k == 0) throw invalid("k must be >= 1");
    const std::string algo = p.str_or("algorithm", "quickselect");
    const auto a = parse_topk_algorithm(algo);
    if (!a) throw invalid("unknown algorithm '" + algo + "'");
    tc.algorithm = *a;
    const std::string pivot = p.str_or("pivot", "random");
    if (pivot == "sem-index") {
      tc.pivot.kind = PivotStrategy::Kind::kSemIndex;
      bool any = false;
      for (const std::string& c : l.columns(Side::kNone)) any = any || current.indexed.contains(c);
      if (!any) throw invalid("pivot 'sem-index' needs a similarity index on a referenced column");
    } else if (pivot != "random") {
      throw invalid("unknown pivot '" + pivot + "' (expected random or sem-index)");
    }
    tc.pivot.epsilon = p.opt_size("epsilon");
    tc.pivot.seed = p.size_or("seed", 0);
    tc.group_by = p.strings_or_empty("group_by");
    for (const auto& g : tc.group_by) require_column(current, g, "group_by column");
    tc.cascade = parse_cascade(p, s);
    current.indexed.clear();
    plan.run = [src, tc](Session& s, const Table& t, const Tables&) {
      return sem_topk(s, t, src, tc);
    };
  } else if (name == "sem_join") {
    const std::string right = p.str("right");
    const SimTable& rs = right_sim(right);
    const std::string src = p.str("langex");
    const Langex l = Langex::parse(src);
    semops::validate(l, current.schema, LangexMode::kJoin, &rs.schema);
    JoinConfig jc;
    const std::string pattern = p.str_or("pattern", "nested-loop");
    const auto pat = parse_join_pattern(pattern);
    if (!pat) throw invalid("unknown pattern '" + pattern + "'");
    jc.pattern = *pat;
    jc.call_budget = p.opt_size("budget");
    const std::string type = p.str_or("type", "inner");
    const auto jt = parse_join_type(type);
    if (!jt) throw invalid("unknown join type '" + type + "'");
    jc.type = *jt;
    jc.left_on = p.str_or("left_on", l.columns(Side::kLeft).front());
    jc.right_on = p.str_or("right_on", l.columns(Side::kRight).front());
    jc.map_demos = parse_demos(p, "map_demos");
    require_column(current, jc.left_on, "left_on column");
    require_column(rs, jc.right_on, "right_on column");
    if (jc.pattern != JoinPattern::kNestedLoop) {
      if (!jc.call_budget) throw invalid(std::string(join_pattern_name(jc.pattern)) + " needs 'budget'");
      require_text_column(current, jc.left_on);
      require_index(rs, jc.right_on);
    }
    current = SimTable{joined_schema(current.schema, rs.schema), {}};
    plan.run = [right, src, jc](Session& s, const Table& t, const Tables& named) {
      return sem_join(s, t, named.at(right), src, jc);
    };
  } else if (name == "sem_sim_join") {
    const std::string right = p.str("right");
    const SimTable& rs = right_sim(right);
    const std::string left_on = p.str("left_on");
    const std::string right_on = p.str("right_on");
    const std::size_t k = p.size("k");
    const bool scores = p.flag_or("scores", false);
    if (k == 0) throw invalid("k must be >= 1");
    require_text_column(current, left_on);
    require_index(rs, right_on);
    current = SimTable{joined_schema(current.schema, rs.schema), {}};
    if (scores) add_column(current, "_score", ColumnKind::kFloat);
    plan.run = [=](Session& s, const Table& t, const Tables& named) {
      return sem_sim_join(s, t, named.at(right), left_on, right_on, k, scores);
    };
  } else if (name == "sem_search") {
    const std::string col = p.str("column");
    const std::string query = p.str("query");
    SearchOptions so;
    so.k = p.size("k");
    so.n_rerank = p.opt_size("n_rerank");
    so.return_scores = p.flag_or("scores", false);
    if (so.k == 0) throw invalid("k must be >= 1");
    if (so.n_rerank && *so.n_rerank > so.k) throw invalid("n_rerank exceeds k");
    if (so.n_rerank && s.reranker() == nullptr) throw invalid("n_rerank needs a top-level 'reranker'");
    require_index(current, col);
    current.indexed.clear();
    if (so.return_scores) add_column(current, "_score", ColumnKind::kFloat);
    plan.run = [col, query, so](Session& s, const Table& t, const Tables&) {
      return sem_search(s, t, col, query, so);
    };
  } else if (name == "sem_cluster_by" || name == "sem_partition_by") {
    const std::string col = p.str("column");
    const std::size_t clusters = p.size("clusters");
    const std::uint64_t seed = p.size_or("seed", 0);
    if (clusters == 0) throw invalid("clusters must be >= 1");
    require_index(current, col);
    if (name == "sem_cluster_by") {
      const bool scores = p.flag_or("scores", false);
      add_column(current, "cluster_id", ColumnKind::kInt);
      if (scores) add_column(current, "cluster_score", ColumnKind::kFloat);
      plan.run = [=](Session& s, const Table& t, const Tables&) {
        return sem_cluster_by(s, t, col, clusters, scores, seed);
      };
    } else {
      add_column(current, kPartitionColumn, ColumnKind::kInt);
      plan.run = [=](Session& s, const Table& t, const Tables&) {
        return sem_partition_by(s, t, clusters, col, seed);
      };
    }
  } else if (name == "sem_agg") {
    const std::string src = p.str("langex");
    const Langex l = checked_langex(src, current);
    if (l.placeholders().empty()) throw invalid("the aggregation langex references no column");
    AggConfig ac;
    const std::string pattern = p.str_or("pattern", "hierarchical");
    const auto pat = parse_agg_pattern(pattern);
    if (!pat) throw invalid("unknown pattern '" + pattern + "'");
    ac.pattern = *pat;
    ac.max_context_chars = p.size_or("max_context_chars", ac.max_context_chars);
    agg_content_budget(ac.max_context_chars, l.instruction_text().size());
    ac.group_by = p.strings_or_empty("group_by");
    ac.partition_column = p.str_or("partition_column", "");
    ac.output_column = p.str_or("output", ac.output_column);
    SimTable next;
    for (const auto& g : ac.group_by) {
      require_column(current, g, "group_by column");
      next.schema.push_back(*find_column(current.schema, g));
    }
    if (!ac.partition_column.empty()) require_column(current, ac.partition_column, "partition column");
    add_column(next, ac.output_column, ColumnKind::kText);
    current = std::move(next);
    plan.run = [src, ac](Session& s, const Table& t, const Tables&) {
      return sem_agg(s, t, src, ac);
    };
  } else if (name == "sem_index") {
    const std::string col = p.str("column");
    const std::string dir = p.has("dir") ? resolve(p.str("dir")) : std::string();
    require_text_column(current, col);
    current.indexed.insert(col);
    plan.run = [col, dir](Session& s, const Table& t, const Tables&) {
      return t.with_index(col, sem_index(t, col, dir, s.embedder()));
    };
  } else if (name == "select") {
    const auto cols = p.strings_or_empty("columns");
    if (cols.empty()) throw invalid("'columns' must name at least one column");
    SimTable next;
    for (const auto& c : cols) {
      require_column(current, c);
      if (find_column(next.schema, c) != nullptr) throw invalid("column '" + c + "' listed twice");
      next.schema.push_back(*find_column(current.schema, c));
      if (current.indexed.contains(c)) next.indexed.insert(c);
    }
    current = std::move(next);
    plan.run = [cols](Session&, const Table& t, const Tables&) { return t.select_columns(cols); };
  } else if (name == "head") {
    const std::size_t n = p.size("n");
    current.indexed.clear();
    plan.run = [n](Session&, const Table& t, const Tables&) {
      std::vector<RowId> rows(std::min<std::size_t>(n, t.row_count()));
      for (RowId r = 0; r < rows.size(); ++r) rows[r] = r;
      return t.select_rows(rows);
    };
  } else if (name == "group_concat") {
    const auto by = p.strings_or_empty("by");
    const std::string col = p.str("column");
    const std::string out = p.str_or("name", col);
    const std::string sep = p.str_or("separator", "\n");
    SimTable next;
    for (const auto& c : by) {
      require_column(current, c);
      next.schema.push_back(*find_column(current.schema, c));
    }
    require_column(current, col);
    add_column(next, out, ColumnKind::kText);
    current = std::move(next);
    plan.run = [=](Session&, const Table& t, const Tables&) {
      return group_concat(t, by, col, out, sep);
    };
  } else {
    throw invalid("unknown operator '" + name + "'");
  }
  p.reject_unknown();
  if (plan.save_as) sims[*plan.save_as] = current;
  return plan;
}

Pipeline::Pipeline(std::unique_ptr<Impl> impl) : impl_(std::move(impl)) {}
Pipeline::Pipeline(Pipeline&&) noexcept = default;
Pipeline& Pipeline::operator=(Pipeline&&) noexcept = default;
Pipeline::~Pipeline() = default;

Pipeline Pipeline::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open pipeline file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path parent = fs::path(path).parent_path();
  return parse(ss.str(), parent.empty() ? "." : parent.string());
}

Pipeline Pipeline::parse(std::string_view json_text, const std::string& base_dir) {
  auto impl = std::make_unique<Impl>();
  impl->base = base_dir;
  try {
    impl->doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kValidation, std::string("pipeline: malformed JSON: ") + e.what());
  }
  Params p(impl->doc, "pipeline");

  const json& inputs = p.raw("inputs");
  if (!inputs.is_object() || inputs.empty()) throw invalid("pipeline: 'inputs' must be a non-empty object");
  for (auto it = inputs.begin(); it != inputs.end(); ++it) impl->inputs.emplace_back(it.key(), it.value());
  impl->source = p.str_or("source", impl->inputs.front().first);

  const std::string embedder_id = p.str_or("embedder", kDefaultEmbedder);
  std::shared_ptr<const Embedder> embedder;
  try {
    embedder = make_embedder(embedder_id);
  } catch (const Error& e) {
    throw invalid(std::string("pipeline: ") + e.what());
  }

  SessionConfig sc;
  sc.parallelism = p.size_or("parallelism", sc.parallelism);
  if (sc.parallelism == 0) throw invalid("pipeline: parallelism must be >= 1");
  sc.max_batch_requests = p.size_or("max_batch_requests", sc.max_batch_requests);

  std::vector<BackendPtr> backends;
  if (p.has("backends")) {
    const json& arr = p.raw("backends");
    if (!arr.is_array()) throw invalid("pipeline: 'backends' must be a list");
    for (std::size_t i = 0; i < arr.size(); ++i) backends.push_back(make_backend(arr[i], i));
  }
  if (backends.empty()) throw invalid("pipeline: at least one backend is required");
  const std::string def = p.str_or("default_backend", backends.front()->id());
  BackendPtr def_backend;
  for (const auto& b : backends) {
    if (b->id() == def) def_backend = b;
  }
  if (!def_backend) throw invalid("pipeline: default_backend '" + def + "' is not defined");
  impl->session = std::make_unique<Session>(def_backend, embedder, sc);
  for (const auto& b : backends) {
    if (b != def_backend) {
      if (impl->session->has_backend(b->id())) throw invalid("pipeline: duplicate backend id '" + b->id() + "'");
      impl->session->add_backend(b);
    }
  }
  const std::string reranker = p.str_or("reranker", "");
  if (reranker == "overlap") {
    impl->session->set_reranker(std::make_shared<OverlapReranker>());
  } else if (!reranker.empty()) {
    throw invalid("pipeline: unknown reranker '" + reranker + "'");
  }

  impl->ops = p.has("ops") ? p.raw("ops") : json::array();
  if (!impl->ops.is_array()) throw invalid("pipeline: 'ops' must be a list");
  if (p.has("output")) impl->output = impl->resolve(p.str("output"));
  if (p.has("metrics")) impl->metrics = impl->resolve(p.str("metrics"));
  p.reject_unknown();
  return Pipeline(std::move(impl));
}

void Pipeline::validate() {
  Impl& im = *impl_;
  if (im.validated) return;
  im.load_inputs();
  std::map<std::string, SimTable> sims = im.loaded_sims;
  auto src = sims.find(im.source);
  if (src == sims.end()) throw invalid("pipeline: source '" + im.source + "' is not an input");
  SimTable current = src->second;
  std::vector<OpPlan> plans;
  for (std::size_t i = 0; i < im.ops.size(); ++i) {
    const json& op = im.ops[i];
    std::string label = "op " + std::to_string(i + 1);
    if (op.is_object() && op.contains("op") && op["op"].is_string()) {
      label += " (" + op["op"].get<std::string>() + ")";
    }
    try {
      plans.push_back(im.plan_op(op, sims, current));
    } catch (const Error& e) {
      throw Error(ErrorCode::kValidation, label + ": " + e.what());
    }
  }
  im.plans = std::move(plans);
  im.validated = true;
}

Table Pipeline::run(RunMetrics& metrics) {
  validate();
  Impl& im = *impl_;
  Session& s = *im.session;
  metrics = RunMetrics{};
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [](std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  Tables named = im.loaded;
  Table current = named.at(im.source);
  for (std::size_t i = 0; i < im.plans.size(); ++i) {
    const OpPlan& plan = im.plans[i];
    s.meter().reset();
    const auto op_start = std::chrono::steady_clock::now();
    OpMetrics om;
    om.index = i + 1;
    om.op = plan.name;
    try {
      const Table& in = plan.input ? named.at(*plan.input) : current;
      current = plan.run(s, in, named);
    } catch (const std::exception& e) {
      om.counts = s.meter().total();
      om.counts.wall_time_s = elapsed(op_start);
      metrics.total += om.counts;
      metrics.ops.push_back(std::move(om));
      metrics.error = "op " + std::to_string(i + 1) + " (" + plan.name + "): " + e.what();
      metrics.wall_time_s = elapsed(start);
      metrics.warnings = s.warnings();
      if (const auto* err = dynamic_cast<const Error*>(&e)) throw Error(err->code(), metrics.error);
      throw Error(ErrorCode::kRuntime, metrics.error);
    }
    om.counts = s.meter().total();
    om.counts.wall_time_s = elapsed(op_start);
    om.rows_out = current.row_count();
    metrics.total += om.counts;
    metrics.ops.push_back(std::move(om));
    if (plan.save_as) named.insert_or_assign(*plan.save_as, current);
  }
  s.meter().reset();
  metrics.completed = true;
  metrics.result_rows = current.row_count();
  metrics.wall_time_s = elapsed(start);
  metrics.warnings = s.warnings();
  return current;
}

std::optional<std::string> Pipeline::output_path() const { return impl_->output; }
std::optional<std::string> Pipeline::metrics_path() const { return impl_->metrics; }
Session& Pipeline::session() { return *impl_->session; }

}  // namespace semops
