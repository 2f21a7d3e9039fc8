// Fixtures shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <mutex>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "semops/lm_runtime.hpp"
#include "semops/table.hpp"

namespace semops::testing {

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "graph",   "neural", "protein", "retrieval", "sparse", "dense",    "language",
      "vision",  "query",  "index",   "cluster",   "kernel", "matrix",   "token",
      "entity",  "claim",  "drug",    "reaction",  "model",  "transfer", "robust",
      "privacy", "audio",  "speech",  "planning",  "agent",  "reward",   "causal"};
  return words;
}

inline std::string random_sentence(std::mt19937_64& rng, std::size_t words) {
  const auto& v = vocabulary();
  std::string s;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) s += ' ';
    s += v[rng() % v.size()];
  }
  return s;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
}

// Table with a text column "text" and a float column "key".
inline Table keyed_table(const std::vector<double>& keys, std::mt19937_64& rng) {
  Column text{{"text", ColumnKind::kText}, {}};
  Column key{{"key", ColumnKind::kFloat}, {}};
  for (double k : keys) {
    text.cells.emplace_back(random_sentence(rng, 6));
    key.cells.emplace_back(k);
  }
  return Table({std::move(text), std::move(key)});
}

// Row ids by descending key, ties by ascending id.
inline std::vector<RowId> sorted_by_key(const std::vector<double>& keys) {
  std::vector<RowId> ids(keys.size());
  for (RowId i = 0; i < ids.size(); ++i) ids[i] = i;
  std::sort(ids.begin(), ids.end(), [&](RowId a, RowId b) {
    return keys[a] != keys[b] ? keys[a] > keys[b] : a < b;
  });
  return ids;
}

// Wraps a backend and keeps a copy of every request it sees.
class RecordingBackend : public LmBackend {
 public:
  explicit RecordingBackend(std::shared_ptr<LmBackend> inner) : inner_(std::move(inner)) {}
  const std::string& id() const override { return inner_->id(); }
  LmResult complete(const LmRequest& req) override {
    {
      std::lock_guard lock(mu_);
      seen_.push_back(req);
    }
    return inner_->complete(req);
  }
  std::vector<LmRequest> seen() const {
    std::lock_guard lock(mu_);
    return seen_;
  }

 private:
  std::shared_ptr<LmBackend> inner_;
  mutable std::mutex mu_;
  std::vector<LmRequest> seen_;
};

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("semops_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace semops::testing
