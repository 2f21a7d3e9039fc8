#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semops/embedding_index.hpp"
#include "semops/lm_runtime.hpp"

namespace semops {

struct SessionConfig {
  std::size_t parallelism = 64;
  RetryPolicy retry;
  // Operators that generate very large request sets (nested-loop joins)
  // dispatch them in chunks of this size.
  std::size_t max_batch_requests = 1 << 15;
};

// Execution context shared by operators: backends, embedder, reranker,
// metering and the comparison cache.
class Session {
 public:
  explicit Session(BackendPtr default_backend,
                   std::shared_ptr<const Embedder> embedder = nullptr, SessionConfig cfg = {});

  void add_backend(BackendPtr backend);
  bool has_backend(std::string_view id) const;
  LmBackend& backend(std::string_view id) const;
  LmBackend& default_backend() const { return *default_; }
  void set_default_backend(std::string_view id);

  void set_embedder(std::shared_ptr<const Embedder> e) { embedder_ = std::move(e); }
  const Embedder& embedder() const;
  void set_reranker(std::shared_ptr<const Reranker> r) { reranker_ = std::move(r); }
  const Reranker* reranker() const { return reranker_.get(); }

  CallMeter& meter() { return meter_; }
  PairCache& pair_cache() { return cache_; }
  const SessionConfig& config() const { return cfg_; }

  std::vector<LmResult> complete(LmBackend& backend, std::span<const LmRequest> requests,
                                 std::string_view op, Tier tier = Tier::kSingle);

  void warn(std::string message);
  std::vector<std::string> warnings() const;

 private:
  std::map<std::string, BackendPtr, std::less<>> backends_;
  BackendPtr default_;
  std::shared_ptr<const Embedder> embedder_;
  std::shared_ptr<const Reranker> reranker_;
  CallMeter meter_;
  PairCache cache_;
  SessionConfig cfg_;
  mutable std::mutex warn_mu_;
  std::vector<std::string> warnings_;
};

}  // namespace semops
