#include "semops/lm_runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <limits>
#include <thread>

namespace semops {

namespace {

std::string_view trim_answer(std::string_view s) {
  auto junk = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '"' || c == '\'' || c == '*' ||
           c == '`';
  };
  while (!s.empty() && junk(s.front())) s.remove_prefix(1);
  while (!s.empty() && (junk(s.back()) || s.back() == '.' || s.back() == '!')) s.remove_suffix(1);
  return s;
}

bool iequals_prefix(std::string_view text, std::string_view label) {
  if (text.size() < label.size()) return false;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[i])) !=
        std::tolower(static_cast<unsigned char>(label[i]))) {
      return false;
    }
  }
  return true;
}

}  // namespace

LabelChoice label_confidence(const LmResult& r) {
  if (r.label_logprobs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "label_confidence: result carries no log-probs");
  }
  double max_lp = -std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  for (std::size_t i = 0; i < r.label_logprobs.size(); ++i) {
    if (r.label_logprobs[i].logprob > max_lp) {
      max_lp = r.label_logprobs[i].logprob;
      best = i;
    }
  }
  LabelChoice out;
  out.index = best;
  out.label = r.label_logprobs[best].label;
  if (std::isinf(max_lp) && max_lp < 0) {
    // No mass anywhere: uniform over labels.
    out.confidence = 1.0 / static_cast<double>(r.label_logprobs.size());
    return out;
  }
  double z = 0.0;
  for (const auto& l : r.label_logprobs) z += std::exp(l.logprob - max_lp);
  out.confidence = 1.0 / z;
  return out;
}

std::optional<std::size_t> match_label(std::string_view text, std::span<const std::string> labels) {
  const std::string_view t = trim_answer(text);
  std::optional<std::size_t> best;
  std::size_t best_len = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::string& label = labels[i];
    if (!iequals_prefix(t, label)) continue;
    if (t.size() > label.size() && std::isalnum(static_cast<unsigned char>(t[label.size()]))) {
      continue;
    }
    if (!best || label.size() > best_len) {
      best = i;
      best_len = label.size();
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

MeterCounts& MeterCounts::operator+=(const MeterCounts& o) {
  lm_calls += o.lm_calls;
  batches += o.batches;
  proxy_calls += o.proxy_calls;
  oracle_calls += o.oracle_calls;
  cache_hits += o.cache_hits;
  malformed_outputs += o.malformed_outputs;
  failed_calls += o.failed_calls;
  retries += o.retries;
  dropped_snippets += o.dropped_snippets;
  max_batch_size = std::max(max_batch_size, o.max_batch_size);
  wall_time_s += o.wall_time_s;
  return *this;
}

MeterCounts operator-(const MeterCounts& a, const MeterCounts& b) {
  MeterCounts d;
  d.lm_calls = a.lm_calls - b.lm_calls;
  d.batches = a.batches - b.batches;
  d.proxy_calls = a.proxy_calls - b.proxy_calls;
  d.oracle_calls = a.oracle_calls - b.oracle_calls;
  d.cache_hits = a.cache_hits - b.cache_hits;
  d.malformed_outputs = a.malformed_outputs - b.malformed_outputs;
  d.failed_calls = a.failed_calls - b.failed_calls;
  d.retries = a.retries - b.retries;
  d.dropped_snippets = a.dropped_snippets - b.dropped_snippets;
  // A max is not differenceable; the later snapshot's value is the bound.
  d.max_batch_size = a.max_batch_size;
  d.wall_time_s = a.wall_time_s - b.wall_time_s;
  return d;
}

void CallMeter::add(std::string_view op, const MeterCounts& delta) {
  std::lock_guard lock(mu_);
  auto it = ops_.find(op);
  if (it == ops_.end()) it = ops_.emplace(std::string(op), MeterCounts{}).first;
  it->second += delta;
}

void CallMeter::record_batch(std::string_view op, std::size_t size, Tier tier) {
  MeterCounts d;
  d.lm_calls = size;
  d.batches = 1;
  d.max_batch_size = size;
  if (tier == Tier::kProxy) d.proxy_calls = size;
  if (tier == Tier::kOracle) d.oracle_calls = size;
  add(op, d);
}

void CallMeter::bump(std::string_view op, std::uint64_t MeterCounts::*field, std::uint64_t n) {
  MeterCounts d;
  d.*field = n;
  add(op, d);
}

void CallMeter::add_wall_time(std::string_view op, double seconds) {
  MeterCounts d;
  d.wall_time_s = seconds;
  add(op, d);
}

MeterCounts CallMeter::for_op(std::string_view op) const {
  std::lock_guard lock(mu_);
  auto it = ops_.find(op);
  return it == ops_.end() ? MeterCounts{} : it->second;
}

MeterCounts CallMeter::total() const {
  std::lock_guard lock(mu_);
  MeterCounts t;
  for (const auto& [_, c] : ops_) t += c;
  return t;
}

std::vector<std::pair<std::string, MeterCounts>> CallMeter::per_op() const {
  std::lock_guard lock(mu_);
  return {ops_.begin(), ops_.end()};
}

void CallMeter::reset() {
  std::lock_guard lock(mu_);
  ops_.clear();
}

OpTimer::OpTimer(CallMeter& meter, std::string op)
    : meter_(meter), op_(std::move(op)), start_(std::chrono::steady_clock::now()) {}

OpTimer::~OpTimer() {
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start_;
  meter_.add_wall_time(op_, elapsed.count());
}

std::size_t PairCache::KeyHash::operator()(const Key& k) const {
  return static_cast<std::size_t>(
      mix64(k.criterion ^ mix64((static_cast<std::uint64_t>(k.lo) << 32) | k.hi)));
}

std::optional<RowId> PairCache::lookup(std::uint64_t criterion, RowId a, RowId b) const {
  std::lock_guard lock(mu_);
  auto it = map_.find(Key{criterion, std::min(a, b), std::max(a, b)});
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void PairCache::store(std::uint64_t criterion, RowId a, RowId b, RowId winner) {
  std::lock_guard lock(mu_);
  map_[Key{criterion, std::min(a, b), std::max(a, b)}] = winner;
}

std::size_t PairCache::size() const {
  std::lock_guard lock(mu_);
  return map_.size();
}

void PairCache::clear() {
  std::lock_guard lock(mu_);
  map_.clear();
}

// ---------------------------------------------------------------------------

std::vector<LmResult> complete_batch(LmBackend& backend, std::span<const LmRequest> requests,
                                     const BatchOptions& opts) {
  const std::size_t n = requests.size();
  std::vector<LmResult> results(n);
  if (n == 0) return results;

  std::atomic<std::uint64_t> retries{0};
  std::atomic<std::uint64_t> failures{0};
  const int attempts = std::max(1, opts.retry.attempts);

  auto run_one = [&](std::size_t i) {
    std::string last_error;
    for (int attempt = 0; attempt < attempts; ++attempt) {
      try {
        results[i] = backend.complete(requests[i]);
        if (results[i].backend_id.empty()) results[i].backend_id = backend.id();
        return;
      } catch (const TransportError& e) {
        last_error = e.what();
        if (attempt + 1 < attempts) {
          retries.fetch_add(1, std::memory_order_relaxed);
          std::this_thread::sleep_for(opts.retry.initial_backoff * (1LL << attempt));
        }
      } catch (const std::exception& e) {
        last_error = e.what();
        break;
      }
    }
    results[i] = LmResult{};
    results[i].backend_id = backend.id();
    results[i].error = last_error;
    failures.fetch_add(1, std::memory_order_relaxed);
  };

  const std::size_t workers =
      std::min({std::max<std::size_t>(1, opts.parallelism), n, backend.max_concurrency()});
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) run_one(i);
      });
    }
  }

  if (opts.meter != nullptr) {
    opts.meter->record_batch(opts.op, n, opts.tier);
    MeterCounts d;
    d.retries = retries.load();
    d.failed_calls = failures.load();
    if (d.retries || d.failed_calls) opts.meter->add(opts.op, d);
  }
  return results;
}

// ---------------------------------------------------------------------------

ScriptedBackend::ScriptedBackend(std::string id, Script script)
    : id_(std::move(id)), script_(std::move(script)) {}

std::shared_ptr<ScriptedBackend> ScriptedBackend::constant(std::string id, std::string text) {
  return std::make_shared<ScriptedBackend>(std::move(id), [text](const LmRequest& req) {
    LmResult r;
    r.text = text;
    if (!req.label_set.empty()) {
      const auto hit = match_label(text, req.label_set);
      if (hit) {
        for (std::size_t i = 0; i < req.label_set.size(); ++i) {
          r.label_logprobs.push_back(
              {req.label_set[i], i == *hit ? 0.0 : -std::numeric_limits<double>::infinity()});
        }
      }
    }
    return r;
  });
}

std::shared_ptr<ScriptedBackend> ScriptedBackend::echo(std::string id) {
  return std::make_shared<ScriptedBackend>(std::move(id), [](const LmRequest& req) {
    LmResult r;
    r.text = req.user_prompt;
    return r;
  });
}

LmResult ScriptedBackend::complete(const LmRequest& req) {
  LmResult r = script_(req);
  if (r.backend_id.empty()) r.backend_id = id_;
  return r;
}

std::size_t ScriptedBackend::max_concurrency() const {
  return std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double stream_uniform(std::uint64_t stream) {
  return static_cast<double>(mix64(stream) >> 11) * 0x1.0p-53;
}

double keyed_correct_probability(double gap, double temperature) {
  if (temperature <= 0.0) return 1.0;
  return 1.0 / (1.0 + std::exp(-std::abs(gap) / temperature));
}

namespace {

const std::string kDoc1 = "Document 1";
const std::string kDoc2 = "Document 2";

// Emits `chosen` of a binary label set. The emitted label carries
// ln(max(p, 1-p)) and the other ln(min(p, 1-p)), so the argmax always agrees
// with the text and the confidence reflects how decisive the gap was.
void set_binary_logprobs(LmResult& r, const std::vector<std::string>& labels, std::size_t chosen,
                         double p) {
  const double hi = std::max(p, 1.0 - p);
  const double lo = 1.0 - hi;
  r.label_logprobs.clear();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    r.label_logprobs.push_back({labels[i], std::log(i == chosen ? hi : lo)});
  }
}

}  // namespace

LmResult keyed_compare(const KeyedOracleConfig& cfg, double key_1, double key_2,
                       std::uint64_t stream) {
  const double gap = key_1 - key_2;
  const double p = keyed_correct_probability(gap, cfg.temperature);
  const bool doc1_better = gap >= 0.0;
  bool correct = true;
  if (cfg.temperature > 0.0) correct = stream_uniform(stream) < p;
  const bool pick_doc1 = correct ? doc1_better : !doc1_better;
  LmResult r;
  r.text = pick_doc1 ? kDoc1 : kDoc2;
  static const std::vector<std::string> labels = {kDoc1, kDoc2};
  set_binary_logprobs(r, labels, pick_doc1 ? 0 : 1, p);
  return r;
}

KeyedOracleBackend::KeyedOracleBackend(std::string id, KeyedOracleConfig cfg)
    : id_(std::move(id)), cfg_(std::move(cfg)) {
  if (cfg_.left_key_column.empty()) cfg_.left_key_column = cfg_.key_column;
  if (cfg_.right_key_column.empty()) cfg_.right_key_column = cfg_.key_column;
}

std::size_t KeyedOracleBackend::max_concurrency() const {
  return std::max(1u, std::thread::hardware_concurrency());
}

double KeyedOracleBackend::key_of(const SourceRef& s, const std::string& column) const {
  const Cell& c = s.table->cell(column, s.row);
  if (const auto* d = std::get_if<double>(&c)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&c)) return static_cast<double>(*i);
  if (const auto* b = std::get_if<bool>(&c)) return *b ? 1.0 : 0.0;
  if (const auto* t = std::get_if<std::string>(&c)) {
    try {
      return std::stod(*t);
    } catch (const std::exception&) {
    }
  }
  throw Error(ErrorCode::kInvalidArgument,
              "keyed oracle: column '" + column + "' has no numeric key at row " +
                  std::to_string(s.row));
}

LmResult KeyedOracleBackend::complete(const LmRequest& req) {
  const SourceRef* doc1 = nullptr;
  const SourceRef* doc2 = nullptr;
  const SourceRef* left = nullptr;
  const SourceRef* right = nullptr;
  const SourceRef* row = nullptr;
  for (const SourceRef& s : req.sources) {
    switch (s.role) {
      case SourceRole::kDocument1:
        doc1 = &s;
        break;
      case SourceRole::kDocument2:
        doc2 = &s;
        break;
      case SourceRole::kLeft:
        left = &s;
        break;
      case SourceRole::kRight:
        right = &s;
        break;
      case SourceRole::kRow:
        if (row == nullptr) row = &s;
        break;
    }
  }

  LmResult r;
  r.backend_id = id_;
  if (req.task == TaskKind::kCompare && doc1 != nullptr && doc2 != nullptr) {
    const RowId lo = std::min(doc1->row, doc2->row);
    const RowId hi = std::max(doc1->row, doc2->row);
    const std::uint64_t stream =
        mix64(cfg_.seed ^ mix64((static_cast<std::uint64_t>(lo) << 32) | hi));
    r = keyed_compare(cfg_, key_of(*doc1, cfg_.key_column), key_of(*doc2, cfg_.key_column), stream);
    r.backend_id = id_;
    return r;
  }
  if (req.task == TaskKind::kFilter && left != nullptr && right != nullptr) {
    const bool match = cell_to_string(left->table->cell(cfg_.left_key_column, left->row)) ==
                       cell_to_string(right->table->cell(cfg_.right_key_column, right->row));
    r.text = match ? "True" : "False";
    if (req.label_set.size() == 2) set_binary_logprobs(r, req.label_set, match ? 0 : 1, 1.0);
    return r;
  }
  if (req.task == TaskKind::kFilter && row != nullptr) {
    const double gap = key_of(*row, cfg_.key_column) - cfg_.filter_threshold;
    const bool truth = gap > 0.0;
    double p = 1.0;
    bool answer = truth;
    if (cfg_.temperature > 0.0) {
      p = keyed_correct_probability(gap, cfg_.temperature);
      const std::uint64_t stream = mix64(cfg_.seed ^ mix64(0xF11Eull ^ row->row));
      answer = stream_uniform(stream) < p ? truth : !truth;
    }
    r.text = answer ? "True" : "False";
    if (req.label_set.size() == 2) set_binary_logprobs(r, req.label_set, answer ? 0 : 1, p);
    return r;
  }
  const SourceRef* mapped = row != nullptr ? row : left;
  if ((req.task == TaskKind::kMap || req.task == TaskKind::kExtract) && mapped != nullptr &&
      !cfg_.map_column.empty()) {
    r.text = cell_to_string(mapped->table->cell(cfg_.map_column, mapped->row));
    return r;
  }
  r.text = req.user_prompt;
  return r;
}

}  // namespace semops
