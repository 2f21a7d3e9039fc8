#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "semops/langex.hpp"
#include "semops/session.hpp"

namespace semops {

extern const char* const kAggInstruction;

// Characters of every prompt held back for instructions and headers.
inline constexpr std::size_t kTemplateReserve = 512;
// Placed between documents (or partial answers) inside one prompt.
inline constexpr std::string_view kAggSeparator = "\n---\n";

enum class AggPattern { kHierarchical, kFold };

std::optional<AggPattern> parse_agg_pattern(std::string_view name);

struct AggConfig {
  AggPattern pattern = AggPattern::kHierarchical;
  std::size_t max_context_chars = 32768;
  std::vector<std::string> group_by;
  std::string partition_column;  // empty: no partitions
  std::string output_column = "_output";
};

// One LM call made by sem_agg, for inspection.
struct AggStep {
  int level = 0;                 // 0 for leaves; fold counts calls
  std::size_t group = 0;
  std::vector<std::size_t> partitions;  // partition ordinals whose content went in
  std::size_t inputs = 0;        // documents or partial answers packed
  bool merge = false;
  std::size_t prompt_chars = 0;
};

// Length of a request as seen by the context limit.
std::size_t request_chars(const LmRequest& req);

// Room left for documents once the reserve and instruction are taken out.
std::size_t agg_content_budget(std::size_t max_context_chars, std::size_t instruction_chars);

// Greedy packing in order: each pack holds as many consecutive items as fit
// in `budget` with separators between them. Returns pack sizes. Throws if a
// single item is larger than `budget`.
std::vector<std::size_t> pack_greedy(std::span<const std::size_t> lengths, std::size_t budget);

Table sem_agg(Session& s, const Table& t, const std::string& instruction, const AggConfig& cfg,
              std::vector<AggStep>* trace = nullptr);

using PartitionFn = std::function<std::int64_t(RowView)>;

inline constexpr const char* kPartitionColumn = "partition_id";

// Appends partition_id computed per row.
Table sem_partition_by(const Table& t, const PartitionFn& f);
// Appends partition_id from kmeans over the index on `column`.
Table sem_partition_by(Session& s, const Table& t, std::size_t clusters, const std::string& column,
                       std::uint64_t seed = 0);

}  // namespace semops
