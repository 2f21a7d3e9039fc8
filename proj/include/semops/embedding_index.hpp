#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semops/table.hpp"

namespace semops {

class Session;

/// Maps texts to unit-norm vectors of a fixed dimension.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual const std::string& id() const = 0;
  virtual std::size_t dimension() const = 0;
  // Row-major texts.size() x dimension().
  virtual std::vector<float> embed(std::span<const std::string> texts) const = 0;
};

/// Deterministic stand-in embedder: character trigrams and lower-cased words
/// are hashed (seeded) into signed buckets, then L2-normalized. Texts sharing
/// many n-grams land close together; identical texts map to identical vectors.
class MockEmbedder : public Embedder {
 public:
  explicit MockEmbedder(std::size_t dimension = 64, std::uint64_t seed = 0);
  const std::string& id() const override { return id_; }
  std::size_t dimension() const override { return dimension_; }
  std::vector<float> embed(std::span<const std::string> texts) const override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
  std::string id_;
};

// Rebuilds an embedder from its id (as recorded in an index manifest).
std::shared_ptr<const Embedder> make_embedder(std::string_view id);

class Reranker {
 public:
  virtual ~Reranker() = default;
  virtual const std::string& id() const = 0;
  virtual double score(std::string_view query, std::string_view document) const = 0;
};

// Jaccard overlap of lower-cased word sets.
class OverlapReranker : public Reranker {
 public:
  const std::string& id() const override { return id_; }
  double score(std::string_view query, std::string_view document) const override;

 private:
  std::string id_ = "overlap";
};

struct IndexManifest {
  int format_version = 1;
  std::string embedder_id;
  std::size_t dimension = 0;
  std::string metric = "cosine";
  std::size_t row_count = 0;
  std::string column;
  std::string content_hash;  // 16 hex digits
};

struct SearchHit {
  RowId row = 0;
  double score = 0.0;
};

/// Exact (flat) cosine index over one text column. Row i of the matrix is
/// the embedding of row i of the source table.
class SimIndex {
 public:
  SimIndex(IndexManifest manifest, std::vector<float> vectors);

  const IndexManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.row_count; }
  std::size_t dimension() const { return manifest_.dimension; }
  std::span<const float> vector(RowId row) const;
  std::span<const float> data() const { return vectors_; }

  // Top-k rows by cosine similarity, descending; ties by ascending row id.
  // Stored vectors are unit length up to float rounding; scores divide by
  // the exact norms so near-ties rank the same as a direct cosine.
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k) const;
  // All rows ranked by similarity.
  std::vector<SearchHit> rank_all(std::span<const float> query) const;

  // Writes `manifest` and `vectors.f32` (little-endian float32, row-major).
  void save(const std::string& dir) const;
  static SimIndex load(const std::string& dir);

 private:
  double cosine(RowId row, std::span<const float> query, double query_norm) const;

  IndexManifest manifest_;
  std::vector<float> vectors_;
  std::vector<double> norms_;
};

double dot(std::span<const float> a, std::span<const float> b);

// FNV-1a over the column's cells (length-prefixed); hex encoded.
std::string column_content_hash(const Table& t, std::string_view column);

// Text of every cell in a text column; throws on null or non-text columns.
std::vector<std::string> text_column(const Table& t, std::string_view column);

// ---------------------------------------------------------------------------
// Operators

// Embeds the column; writes the index to `dir` unless it is empty.
std::shared_ptr<const SimIndex> sem_index(const Table& t, const std::string& column,
                                          const std::string& dir, const Embedder& embedder);

// Loads the index in `dir` and attaches it to `column` of a copy of `t`.
Table load_sem_index(const Table& t, const std::string& column, const std::string& dir,
                     const Embedder& embedder);

struct SearchOptions {
  std::size_t k = 10;
  std::optional<std::size_t> n_rerank;
  bool return_scores = false;
};

Table sem_search(Session& s, const Table& t, const std::string& column, const std::string& query,
                 const SearchOptions& opts);

// For each left row, the K most similar right rows (left text embedded on the
// fly unless the left column has an index).
std::vector<std::vector<SearchHit>> sim_join_hits(Session& s, const Table& left,
                                                  const std::string& left_on, const Table& right,
                                                  const std::string& right_on, std::size_t k);

Table sem_sim_join(Session& s, const Table& left, const Table& right, const std::string& left_on,
                   const std::string& right_on, std::size_t k, bool return_scores = false);

struct KMeansResult {
  std::vector<std::uint32_t> assignment;
  std::vector<double> centroids;  // C x dim
  std::vector<double> objective_history;  // sum of squared distances per iteration
  int iterations = 0;
};

// kmeans++ seeding followed by Lloyd iterations until the largest centroid
// shift drops below `tol` or `max_iter` is reached.
KMeansResult kmeans(std::span<const float> data, std::size_t dim, std::size_t clusters,
                    std::uint64_t seed, int max_iter = 100, double tol = 1e-4);

Table sem_cluster_by(Session& s, const Table& t, const std::string& column, std::size_t clusters,
                     bool return_scores = false, std::uint64_t seed = 0);

}  // namespace semops
