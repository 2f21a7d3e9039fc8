#include "semops/embedding_index.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "semops/error.hpp"
#include "semops/lm_runtime.hpp"
#include "semops/session.hpp"

namespace semops {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv1a_u64(std::uint64_t v, std::uint64_t h) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

bool better_hit(const SearchHit& a, const SearchHit& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.row < b.row;
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::shared_ptr<const SimIndex> require_index(const Table& t, const std::string& column) {
  auto idx = t.index_for(column);
  if (!idx) throw Error(ErrorCode::kValidation, "no similarity index on column '" + column + "'");
  return idx;
}

}  // namespace

MockEmbedder::MockEmbedder(std::size_t dimension, std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension == 0) throw Error(ErrorCode::kInvalidArgument, "embedder: dimension must be > 0");
  id_ = "mock-ngram:d=" + std::to_string(dimension) + ":s=" + std::to_string(seed);
}

std::vector<float> MockEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<float> out(texts.size() * dimension_);
  std::vector<double> acc(dimension_);
  for (std::size_t t = 0; t < texts.size(); ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    auto add_feature = [&](std::string_view feature, std::uint64_t salt) {
      const std::uint64_t h = mix64(fnv1a(feature) ^ mix64(seed_ ^ salt));
      acc[h % dimension_] += (h >> 63) ? 1.0 : -1.0;
    };
    std::string lowered;
    lowered.reserve(texts[t].size() + 2);
    lowered.push_back(' ');
    for (char c : texts[t]) lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    lowered.push_back(' ');
    for (std::size_t i = 0; i + 3 <= lowered.size(); ++i) {
      add_feature(std::string_view(lowered).substr(i, 3), 3);
    }
    for (const std::string& w : words_of(texts[t])) add_feature(w, 1);

    double norm = 0.0;
    for (double v : acc) norm += v * v;
    if (norm == 0.0) {
      acc[mix64(seed_) % dimension_] = 1.0;
      norm = 1.0;
    }
    norm = std::sqrt(norm);
    for (std::size_t d = 0; d < dimension_; ++d) {
      out[t * dimension_ + d] = static_cast<float>(acc[d] / norm);
    }
  }
  return out;
}

std::shared_ptr<const Embedder> make_embedder(std::string_view id) {
  // mock-ngram:d=<dim>:s=<seed>
  constexpr std::string_view prefix = "mock-ngram:d=";
  if (id.substr(0, prefix.size()) == prefix) {
    const std::size_t s_pos = id.find(":s=", prefix.size());
    if (s_pos != std::string_view::npos) {
      try {
        const std::size_t dim = std::stoul(std::string(id.substr(prefix.size(), s_pos - prefix.size())));
        const std::uint64_t seed = std::stoull(std::string(id.substr(s_pos + 3)));
        return std::make_shared<MockEmbedder>(dim, seed);
      } catch (const std::logic_error&) {
      }
    }
  }
  throw Error(ErrorCode::kNotFound, "unknown embedder id '" + std::string(id) + "'");
}

double OverlapReranker::score(std::string_view query, std::string_view document) const {
  const auto qw = words_of(query);
  const auto dw = words_of(document);
  const std::set<std::string> q(qw.begin(), qw.end());
  const std::set<std::string> d(dw.begin(), dw.end());
  if (q.empty() && d.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& w : q) inter += d.count(w);
  return static_cast<double>(inter) / static_cast<double>(q.size() + d.size() - inter);
}

// ---------------------------------------------------------------------------

SimIndex::SimIndex(IndexManifest manifest, std::vector<float> vectors)
    : manifest_(std::move(manifest)), vectors_(std::move(vectors)) {
  if (manifest_.dimension == 0) throw Error(ErrorCode::kFormat, "index: zero dimension");
  if (vectors_.size() != manifest_.row_count * manifest_.dimension) {
    throw Error(ErrorCode::kFormat, "index: vector matrix does not match row_count x dimension");
  }
  norms_.resize(manifest_.row_count);
  for (RowId r = 0; r < manifest_.row_count; ++r) {
    const auto v = vector(r);
    norms_[r] = std::sqrt(dot(v, v));
  }
}

double SimIndex::cosine(RowId row, std::span<const float> query, double query_norm) const {
  const double denom = norms_[row] * query_norm;
  return denom > 0.0 ? dot(vector(row), query) / denom : 0.0;
}

std::span<const float> SimIndex::vector(RowId row) const {
  return std::span<const float>(vectors_).subspan(static_cast<std::size_t>(row) * dimension(),
                                                  dimension());
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

std::vector<SearchHit> SimIndex::rank_all(std::span<const float> query) const {
  if (query.size() != dimension()) throw Error(ErrorCode::kInvalidArgument, "index: query dimension mismatch");
  const double qn = std::sqrt(dot(query, query));
  std::vector<SearchHit> hits(size());
  for (RowId r = 0; r < size(); ++r) hits[r] = SearchHit{r, cosine(r, query, qn)};
  std::sort(hits.begin(), hits.end(), better_hit);
  return hits;
}

std::vector<SearchHit> SimIndex::search(std::span<const float> query, std::size_t k) const {
  if (query.size() != dimension()) throw Error(ErrorCode::kInvalidArgument, "index: query dimension mismatch");
  const double qn = std::sqrt(dot(query, query));
  std::vector<SearchHit> hits(size());
  for (RowId r = 0; r < size(); ++r) hits[r] = SearchHit{r, cosine(r, query, qn)};
  const std::size_t top = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top), hits.end(),
                    better_hit);
  hits.resize(top);
  return hits;
}

void SimIndex::save(const std::string& dir) const {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "index: cannot create '" + dir + "': " + ec.message());
  {
    std::ofstream m(fs::path(dir) / "manifest", std::ios::trunc);
    if (!m) throw Error(ErrorCode::kIo, "index: cannot write manifest in '" + dir + "'");
    m << "format_version=" << manifest_.format_version << '\n'
      << "embedder_id=" << manifest_.embedder_id << '\n'
      << "dimension=" << manifest_.dimension << '\n'
      << "metric=" << manifest_.metric << '\n'
      << "row_count=" << manifest_.row_count << '\n'
      << "column=" << manifest_.column << '\n'
      << "content_hash=" << manifest_.content_hash << '\n';
    if (!m) throw Error(ErrorCode::kIo, "index: manifest write failed");
  }
  std::ofstream v(fs::path(dir) / "vectors.f32", std::ios::binary | std::ios::trunc);
  if (!v) throw Error(ErrorCode::kIo, "index: cannot write vectors in '" + dir + "'");
  for (float f : vectors_) write_u32_le(v, std::bit_cast<std::uint32_t>(f));
  if (!v) throw Error(ErrorCode::kIo, "index: vector write failed");
}

SimIndex SimIndex::load(const std::string& dir) {
  std::ifstream m(fs::path(dir) / "manifest");
  if (!m) throw Error(ErrorCode::kNotFound, "index: no manifest in '" + dir + "'");
  IndexManifest man;
  std::set<std::string> seen;
  std::string line;
  try {
    while (std::getline(m, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw Error(ErrorCode::kFormat, "index: corrupt manifest line '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      seen.insert(key);
      if (key == "format_version") {
        man.format_version = std::stoi(val);
      } else if (key == "embedder_id") {
        man.embedder_id = val;
      } else if (key == "dimension") {
        man.dimension = std::stoul(val);
      } else if (key == "metric") {
        man.metric = val;
      } else if (key == "row_count") {
        man.row_count = std::stoul(val);
      } else if (key == "column") {
        man.column = val;
      } else if (key == "content_hash") {
        man.content_hash = val;
      }
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kFormat, "index: corrupt manifest in '" + dir + "'");
  }
  for (const char* required : {"format_version", "embedder_id", "dimension", "metric", "row_count",
                               "column", "content_hash"}) {
    if (!seen.contains(required)) {
      throw Error(ErrorCode::kFormat, std::string("index: manifest missing '") + required + "'");
    }
  }
  if (man.format_version != 1) throw Error(ErrorCode::kFormat, "index: unsupported format version");
  if (man.metric != "cosine") throw Error(ErrorCode::kFormat, "index: unsupported metric '" + man.metric + "'");

  std::ifstream v(fs::path(dir) / "vectors.f32", std::ios::binary);
  if (!v) throw Error(ErrorCode::kNotFound, "index: no vectors.f32 in '" + dir + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(v)), std::istreambuf_iterator<char>());
  if (bytes.size() != man.row_count * man.dimension * 4) {
    throw Error(ErrorCode::kFormat, "index: vectors.f32 size does not match manifest");
  }
  std::vector<float> vectors(man.row_count * man.dimension);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                            (static_cast<std::uint32_t>(b[2]) << 16) |
                            (static_cast<std::uint32_t>(b[3]) << 24);
    vectors[i] = std::bit_cast<float>(u);
  }
  return SimIndex(std::move(man), std::move(vectors));
}

std::string column_content_hash(const Table& t, std::string_view column) {
  const Column& c = t.column(column);
  std::uint64_t h = kFnvOffset;
  for (const Cell& cell : c.cells) {
    if (is_null(cell)) {
      h = fnv1a_u64(~0ULL, h);
      continue;
    }
    const std::string s = cell_to_string(cell);
    h = fnv1a_u64(s.size(), h);
    h = fnv1a(s, h);
  }
  return hex64(h);
}

std::vector<std::string> text_column(const Table& t, std::string_view column) {
  const Column& c = t.column(column);
  if (c.spec.kind != ColumnKind::kText) {
    throw Error(ErrorCode::kValidation, "column '" + std::string(column) + "' is not a text column");
  }
  std::vector<std::string> out;
  out.reserve(c.cells.size());
  for (RowId r = 0; r < c.cells.size(); ++r) {
    const auto* s = std::get_if<std::string>(&c.cells[r]);
    if (s == nullptr) {
      throw Error(ErrorCode::kNullCell, "column '" + std::string(column) + "' has a null at row " +
                                            std::to_string(r));
    }
    out.push_back(*s);
  }
  return out;
}

// ---------------------------------------------------------------------------

std::shared_ptr<const SimIndex> sem_index(const Table& t, const std::string& column,
                                          const std::string& dir, const Embedder& embedder) {
  const auto texts = text_column(t, column);
  IndexManifest man;
  man.embedder_id = embedder.id();
  man.dimension = embedder.dimension();
  man.row_count = t.row_count();
  man.column = column;
  man.content_hash = column_content_hash(t, column);
  auto idx = std::make_shared<const SimIndex>(std::move(man), embedder.embed(texts));
  if (!dir.empty()) idx->save(dir);
  return idx;
}

Table load_sem_index(const Table& t, const std::string& column, const std::string& dir,
                     const Embedder& embedder) {
  auto idx = std::make_shared<const SimIndex>(SimIndex::load(dir));
  const IndexManifest& man = idx->manifest();
  if (!t.has_column(column)) throw Error(ErrorCode::kNotFound, "unknown column '" + column + "'");
  if (man.row_count != t.row_count()) {
    throw Error(ErrorCode::kValidation, "index row_count " + std::to_string(man.row_count) +
                                            " does not match table row_count " +
                                            std::to_string(t.row_count()));
  }
  if (man.embedder_id != embedder.id()) {
    throw Error(ErrorCode::kValidation, "index built with embedder '" + man.embedder_id +
                                            "', session uses '" + embedder.id() + "'");
  }
  if (man.dimension != embedder.dimension()) {
    throw Error(ErrorCode::kValidation, "index dimension mismatch");
  }
  if (man.content_hash != column_content_hash(t, column)) {
    throw Error(ErrorCode::kValidation,
                "index content hash mismatch for column '" + column + "'; rebuild the index");
  }
  return t.with_index(column, std::move(idx));
}

Table sem_search(Session& s, const Table& t, const std::string& column, const std::string& query,
                 const SearchOptions& opts) {
  OpTimer timer(s.meter(), "sem_search");
  auto idx = require_index(t, column);
  if (opts.k == 0) throw Error(ErrorCode::kInvalidArgument, "sem_search: K must be >= 1");
  if (opts.n_rerank && *opts.n_rerank > opts.k) {
    throw Error(ErrorCode::kInvalidArgument, "sem_search: n_rerank exceeds K");
  }
  const std::vector<std::string> q{query};
  const auto qv = s.embedder().embed(q);
  std::vector<SearchHit> hits = idx->search(qv, opts.k);
  if (opts.n_rerank) {
    const Reranker* rr = s.reranker();
    if (rr == nullptr) throw Error(ErrorCode::kInvalidArgument, "sem_search: no reranker configured");
    for (SearchHit& h : hits) h.score = rr->score(query, cell_to_string(t.cell(column, h.row)));
    std::stable_sort(hits.begin(), hits.end(), better_hit);
    hits.resize(std::min(hits.size(), *opts.n_rerank));
  }
  std::vector<RowId> rows;
  rows.reserve(hits.size());
  for (const auto& h : hits) rows.push_back(h.row);
  Table out = t.select_rows(rows);
  if (opts.return_scores) {
    Column sc{{"_score", ColumnKind::kFloat}, {}};
    for (const auto& h : hits) sc.cells.emplace_back(h.score);
    out = out.with_column(std::move(sc));
  }
  return out;
}

std::vector<std::vector<SearchHit>> sim_join_hits(Session& s, const Table& left,
                                                  const std::string& left_on, const Table& right,
                                                  const std::string& right_on, std::size_t k) {
  auto ridx = require_index(right, right_on);
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "sim join: K must be >= 1");
  if (k > ridx->size()) {
    s.warn("sim join: K=" + std::to_string(k) + " exceeds right table size " +
           std::to_string(ridx->size()) + "; returning all right rows");
  }
  std::vector<float> lv;
  std::size_t dim = ridx->dimension();
  if (auto lidx = left.index_for(left_on);
      lidx && lidx->manifest().embedder_id == ridx->manifest().embedder_id) {
    lv.assign(lidx->data().begin(), lidx->data().end());
  } else {
    lv = s.embedder().embed(text_column(left, left_on));
    if (s.embedder().dimension() != dim) {
      throw Error(ErrorCode::kValidation, "sim join: embedder dimension differs from right index");
    }
  }
  std::vector<std::vector<SearchHit>> out(left.row_count());
  for (RowId r = 0; r < left.row_count(); ++r) {
    out[r] = ridx->search(std::span<const float>(lv).subspan(r * dim, dim), k);
  }
  return out;
}

Table sem_sim_join(Session& s, const Table& left, const Table& right, const std::string& left_on,
                   const std::string& right_on, std::size_t k, bool return_scores) {
  OpTimer timer(s.meter(), "sem_sim_join");
  const auto hits = sim_join_hits(s, left, left_on, right, right_on, k);
  std::vector<RowPair> pairs;
  Column sc{{"_score", ColumnKind::kFloat}, {}};
  for (RowId l = 0; l < hits.size(); ++l) {
    for (const SearchHit& h : hits[l]) {
      pairs.push_back(RowPair{l, h.row});
      sc.cells.emplace_back(h.score);
    }
  }
  Table out = join_tables(left, right, pairs);
  if (return_scores) out = out.with_column(std::move(sc));
  return out;
}

// ---------------------------------------------------------------------------

KMeansResult kmeans(std::span<const float> data, std::size_t dim, std::size_t clusters,
                    std::uint64_t seed, int max_iter, double tol) {
  if (dim == 0 || data.size() % dim != 0) throw Error(ErrorCode::kInvalidArgument, "kmeans: bad shape");
  const std::size_t n = data.size() / dim;
  if (clusters == 0 || clusters > n) {
    throw Error(ErrorCode::kInvalidArgument, "kmeans: cluster count " + std::to_string(clusters) +
                                                 " out of range [1, " + std::to_string(n) + "]");
  }
  std::mt19937_64 rng(seed);
  auto uniform = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  auto sqdist = [&](std::size_t row, const double* c) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = data[row * dim + d] - c[d];
      s += diff * diff;
    }
    return s;
  };

  KMeansResult res;
  res.centroids.assign(clusters * dim, 0.0);
  std::vector<bool> chosen(n, false);
  auto place = [&](std::size_t c, std::size_t row) {
    chosen[row] = true;
    for (std::size_t d = 0; d < dim; ++d) res.centroids[c * dim + d] = data[row * dim + d];
  };

  // kmeans++ seeding
  place(0, rng() % n);
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sqdist(i, &res.centroids[0]);
  for (std::size_t c = 1; c < clusters; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += chosen[i] ? 0.0 : d2[i];
    std::size_t pick = n;
    if (total > 0.0) {
      double target = uniform() * total;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || d2[i] == 0.0) continue;
        pick = i;
        target -= d2[i];
        if (target < 0.0) break;
      }
    }
    if (pick == n) {
      // Every remaining point coincides with a centroid.
      std::vector<std::size_t> free_rows;
      for (std::size_t i = 0; i < n; ++i) {
        if (!chosen[i]) free_rows.push_back(i);
      }
      pick = free_rows[rng() % free_rows.size()];
    }
    place(c, pick);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sqdist(i, &res.centroids[c * dim]));
  }

  res.assignment.assign(n, 0);
  std::vector<double> next(clusters * dim);
  std::vector<std::size_t> counts(clusters);
  for (int it = 0; it < max_iter; ++it) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::uint32_t arg = 0;
      for (std::size_t c = 0; c < clusters; ++c) {
        const double dd = sqdist(i, &res.centroids[c * dim]);
        if (dd < best) {
          best = dd;
          arg = static_cast<std::uint32_t>(c);
        }
      }
      res.assignment[i] = arg;
      objective += best;
    }
    res.objective_history.push_back(objective);
    res.iterations = it + 1;

    std::fill(next.begin(), next.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignment[i];
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) next[c * dim + d] += data[i * dim + d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < clusters; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      double s = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double v = next[c * dim + d] / static_cast<double>(counts[c]);
        const double diff = v - res.centroids[c * dim + d];
        s += diff * diff;
        res.centroids[c * dim + d] = v;
      }
      shift = std::max(shift, std::sqrt(s));
    }
    if (shift < tol) break;
  }
  return res;
}

Table sem_cluster_by(Session& s, const Table& t, const std::string& column, std::size_t clusters,
                     bool return_scores, std::uint64_t seed) {
  OpTimer timer(s.meter(), "sem_cluster_by");
  auto idx = require_index(t, column);
  if (clusters == 0 || clusters > t.row_count()) {
    throw Error(ErrorCode::kInvalidArgument, "sem_cluster_by: C=" + std::to_string(clusters) +
                                                 " out of range [1, " +
                                                 std::to_string(t.row_count()) + "]");
  }
  const std::size_t dim = idx->dimension();
  const KMeansResult km = kmeans(idx->data(), dim, clusters, seed);
  Column ids{{"cluster_id", ColumnKind::kInt}, {}};
  Column scores{{"cluster_score", ColumnKind::kFloat}, {}};
  for (RowId r = 0; r < t.row_count(); ++r) {
    const std::uint32_t c = km.assignment[r];
    ids.cells.emplace_back(static_cast<std::int64_t>(c));
    if (return_scores) {
      double norm = 0.0;
      double dotp = 0.0;
      const auto v = idx->vector(r);
      for (std::size_t d = 0; d < dim; ++d) {
        const double cv = km.centroids[c * dim + d];
        norm += cv * cv;
        dotp += cv * v[d];
      }
      scores.cells.emplace_back(norm > 0.0 ? dotp / std::sqrt(norm) : 0.0);
    }
  }
  Table out = t.with_column(std::move(ids));
  if (return_scores) out = out.with_column(std::move(scores));
  return out;
}

}  // namespace semops
