#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semops/error.hpp"
#include "semops/table.hpp"

namespace semops {

// What an operator is asking for. Remote backends ignore it; the offline
// mocks use it (together with `sources`) to answer from table data.
enum class TaskKind { kGeneric, kFilter, kCompare, kMap, kExtract, kAggregate };

enum class SourceRole { kRow, kLeft, kRight, kDocument1, kDocument2 };

// Provenance of a prompt: which table rows were rendered into it.
struct SourceRef {
  const Table* table = nullptr;
  RowId row = 0;
  SourceRole role = SourceRole::kRow;
};

struct Demonstration {
  std::string input;
  std::string output;
};

struct LmRequest {
  std::string system_instruction;
  std::string user_prompt;
  std::vector<std::string> label_set;  // empty for free-form generation
  std::vector<Demonstration> demonstrations;
  std::size_t max_output_chars = 1024;
  TaskKind task = TaskKind::kGeneric;
  std::vector<SourceRef> sources;
};

struct LabelLogprob {
  std::string label;
  double logprob = 0.0;  // natural log, <= 0
};

struct LmResult {
  std::string text;
  std::vector<LabelLogprob> label_logprobs;  // empty when unavailable; label_set order
  std::string backend_id;
  std::optional<std::string> error;  // set when the call failed after retries

  bool has_logprobs() const { return !label_logprobs.empty(); }
};

struct LabelChoice {
  std::size_t index = 0;
  std::string label;
  double confidence = 0.0;
};

// Normalized exponentiated log-probabilities over the label set; the chosen
// label is the argmax, ties resolved to the earliest label.
LabelChoice label_confidence(const LmResult& r);

// Matches free-form model text against a label set ("True.", " document 2").
std::optional<std::size_t> match_label(std::string_view text, std::span<const std::string> labels);

// Raised by backends for retryable transport failures.
class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error(ErrorCode::kBackend, what) {}
};

class LmBackend {
 public:
  virtual ~LmBackend() = default;
  virtual const std::string& id() const = 0;
  // Must be safe to call concurrently.
  virtual LmResult complete(const LmRequest& req) = 0;
  // Upper bound on useful concurrent calls; in-process mocks gain nothing
  // from more threads than cores.
  virtual std::size_t max_concurrency() const { return SIZE_MAX; }
};

using BackendPtr = std::shared_ptr<LmBackend>;

enum class Tier { kSingle, kProxy, kOracle };

struct MeterCounts {
  std::uint64_t lm_calls = 0;
  std::uint64_t batches = 0;
  std::uint64_t proxy_calls = 0;
  std::uint64_t oracle_calls = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t malformed_outputs = 0;
  std::uint64_t failed_calls = 0;
  std::uint64_t retries = 0;
  std::uint64_t dropped_snippets = 0;
  std::uint64_t max_batch_size = 0;
  double wall_time_s = 0.0;

  MeterCounts& operator+=(const MeterCounts& o);
};

MeterCounts operator-(const MeterCounts& a, const MeterCounts& b);

// Per-operator call accounting. All updates are serialized.
class CallMeter {
 public:
  void add(std::string_view op, const MeterCounts& delta);
  void record_batch(std::string_view op, std::size_t size, Tier tier);
  void bump(std::string_view op, std::uint64_t MeterCounts::*field, std::uint64_t n = 1);
  void add_wall_time(std::string_view op, double seconds);

  MeterCounts for_op(std::string_view op) const;
  MeterCounts total() const;
  std::vector<std::pair<std::string, MeterCounts>> per_op() const;
  void reset();

 private:
  mutable std::mutex mu_;
  std::map<std::string, MeterCounts, std::less<>> ops_;
};

// Adds the scope's duration to the operator's wall time on destruction.
class OpTimer {
 public:
  OpTimer(CallMeter& meter, std::string op);
  ~OpTimer();
  OpTimer(const OpTimer&) = delete;
  OpTimer& operator=(const OpTimer&) = delete;

 private:
  CallMeter& meter_;
  std::string op_;
  std::chrono::steady_clock::time_point start_;
};

// Winners of pairwise comparisons, keyed by unordered row pair and a hash of
// the ranking criterion.
class PairCache {
 public:
  std::optional<RowId> lookup(std::uint64_t criterion, RowId a, RowId b) const;
  void store(std::uint64_t criterion, RowId a, RowId b, RowId winner);
  std::size_t size() const;
  void clear();

 private:
  struct Key {
    std::uint64_t criterion;
    RowId lo;
    RowId hi;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  mutable std::mutex mu_;
  std::unordered_map<Key, RowId, KeyHash> map_;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
};

struct BatchOptions {
  std::size_t parallelism = 64;
  RetryPolicy retry;
  CallMeter* meter = nullptr;
  std::string op = "lm";
  Tier tier = Tier::kSingle;
};

// Runs every request against `backend` with at most `parallelism` calls in
// flight. Results are positionally aligned with requests. A request whose
// transport keeps failing gets a result with `error` set; the batch goes on.
std::vector<LmResult> complete_batch(LmBackend& backend, std::span<const LmRequest> requests,
                                     const BatchOptions& opts);

// ---------------------------------------------------------------------------
// Offline backends

// Answers through a user-supplied function.
class ScriptedBackend : public LmBackend {
 public:
  using Script = std::function<LmResult(const LmRequest&)>;
  ScriptedBackend(std::string id, Script script);

  // Always answers `text`. When the request has a label set containing it,
  // log-probs put all mass on that label.
  static std::shared_ptr<ScriptedBackend> constant(std::string id, std::string text);
  // Answers with the user prompt verbatim.
  static std::shared_ptr<ScriptedBackend> echo(std::string id);

  const std::string& id() const override { return id_; }
  LmResult complete(const LmRequest& req) override;
  std::size_t max_concurrency() const override;

 private:
  std::string id_;
  Script script_;
};

struct KeyedOracleConfig {
  std::string key_column = "key";
  double temperature = 0.0;  // Bradley-Terry noise scale; 0 is noiseless
  std::uint64_t seed = 0;
  double filter_threshold = 50.0;  // filters answer True iff key > threshold
  std::string left_key_column;     // join predicates: left key == right key
  std::string right_key_column;
  std::string map_column;  // map/extract answers with this column's cell
};

// P(correct) of a keyed comparison at key gap |gap| and temperature T.
double keyed_correct_probability(double gap, double temperature);

// Uniform double in [0,1) from a 64-bit stream id; platform independent.
double stream_uniform(std::uint64_t stream);
std::uint64_t mix64(std::uint64_t x);

// One keyed comparison between Document 1 (key_1) and Document 2 (key_2).
// `stream` identifies the unordered pair; the answer is a pure function of it.
LmResult keyed_compare(const KeyedOracleConfig& cfg, double key_1, double key_2,
                       std::uint64_t stream);

// Stand-in LM that answers from a hidden numeric key column: comparisons by
// noisy key order, filters by a key threshold, join predicates by key
// equality, maps by copying a column.
class KeyedOracleBackend : public LmBackend {
 public:
  KeyedOracleBackend(std::string id, KeyedOracleConfig cfg);
  const std::string& id() const override { return id_; }
  LmResult complete(const LmRequest& req) override;
  std::size_t max_concurrency() const override;
  const KeyedOracleConfig& config() const { return cfg_; }

 private:
  double key_of(const SourceRef& s, const std::string& column) const;
  std::string id_;
  KeyedOracleConfig cfg_;
};

struct HttpBackendConfig {
  std::string id = "http";
  std::string base_url;  // e.g. https://api.openai.com
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  double temperature = 0.0;
  int top_logprobs = 5;
  int timeout_s = 60;
};

// Chat-completion client. Label log-probs come from the first answer token
// that identifies a single label, read from that position's top_logprobs.
class HttpBackend : public LmBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg);
  const std::string& id() const override { return cfg_.id; }
  LmResult complete(const LmRequest& req) override;

  // Exposed for tests: request body and response decoding.
  std::string build_body(const LmRequest& req) const;
  static LmResult parse_response(std::string_view body, const LmRequest& req,
                                 const std::string& backend_id);

 private:
  HttpBackendConfig cfg_;
  std::string api_key_;
};

}  // namespace semops
