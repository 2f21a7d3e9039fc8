#pragma once

#include <optional>
#include <string>
#include <vector>

#include "semops/langex.hpp"
#include "semops/session.hpp"

namespace semops {

extern const char* const kFilterInstruction;
extern const char* const kMapInstruction;
extern const char* const kExtractInstruction;

// Two-tier execution: every item goes to `proxy`; items whose label
// confidence falls below `threshold` are re-asked of `oracle`, whose answer
// is final. threshold 0 never escalates, threshold 1 always does.
struct CascadeConfig {
  std::string proxy;
  std::string oracle;
  double threshold = 0.9;
};

bool should_escalate(double confidence, double threshold);

enum class DecisionSource { kModel, kProxy, kOracle, kDefault };

struct LabelDecision {
  std::size_t label = 0;
  double confidence = 0.0;
  DecisionSource source = DecisionSource::kModel;
  bool malformed = false;
};

struct LabelPolicy {
  std::size_t default_label = 0;   // used when the output matches no label
  bool retry_malformed = false;    // re-ask once before falling back
};

// Runs labeled requests (shared label set) and returns one decision per
// request, applying the cascade when given. Used by filters, join filters and
// pairwise comparisons.
std::vector<LabelDecision> decide_labels(Session& s, std::span<const LmRequest> requests,
                                         const std::optional<CascadeConfig>& cascade,
                                         std::string_view op, const LabelPolicy& policy);

// Referenced cells of a row as prompt text: a lone column renders as its
// value, several as "column: value" lines.
std::string row_document(const Langex& l, RowView row, Side side = Side::kNone);

LmRequest make_filter_request(const Langex& l, RowView row, const RowView* right,
                              const std::vector<Demonstration>& demos);

struct FilterOptions {
  std::vector<Demonstration> demos;
  std::optional<CascadeConfig> cascade;
};

Table sem_filter(Session& s, const Table& t, const std::string& predicate,
                 const FilterOptions& opts = {});

Table sem_map(Session& s, const Table& t, const std::string& projection, const std::string& name,
              const std::vector<Demonstration>& demos = {});

// Lines of `output` that occur verbatim in `source`, ordered by where they
// first occur in the source. `dropped` receives the number rejected.
std::vector<std::string> verify_snippets(std::string_view output, std::string_view source,
                                         std::size_t* dropped);

// New text column of newline-joined verified quotes.
Table sem_extract(Session& s, const Table& t, const std::string& instruction,
                  const std::string& name);

}  // namespace semops
