#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semops/session.hpp"
#include "semops/table.hpp"

namespace semops {

struct OpMetrics {
  std::size_t index = 0;  // 1-based
  std::string op;
  std::size_t rows_out = 0;
  MeterCounts counts;
};

struct RunMetrics {
  std::vector<OpMetrics> ops;
  MeterCounts total;
  double wall_time_s = 0.0;
  std::size_t result_rows = 0;
  bool completed = false;
  std::string error;
  std::vector<std::string> warnings;

  // Stable key order.
  std::string to_json() const;
};

// A declarative operator pipeline read from a JSON document; see
// docs/pipeline.md for the format. Relative paths resolve against the
// directory of the pipeline file.
class Pipeline {
 public:
  static Pipeline load(const std::string& path);
  static Pipeline parse(std::string_view json_text, const std::string& base_dir);

  Pipeline(Pipeline&&) noexcept;
  Pipeline& operator=(Pipeline&&) noexcept;
  ~Pipeline();

  // Loads the inputs and checks every op against the schemas the earlier ops
  // would produce. No LM call is made. Throws Error(kValidation) with a
  // message starting "op N".
  void validate();

  // Validates, then runs the ops in order. On a runtime failure the error is
  // rethrown and `metrics` keeps the ops that finished.
  Table run(RunMetrics& metrics);

  std::optional<std::string> output_path() const;
  std::optional<std::string> metrics_path() const;
  Session& session();

 private:
  struct Impl;
  explicit Pipeline(std::unique_ptr<Impl> impl);
  std::unique_ptr<Impl> impl_;
};

}  // namespace semops
