#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "entrain/analysis.hpp"
#include "entrain/condition.hpp"
#include "entrain/logit_backend.hpp"
#include "entrain/scaling_fit.hpp"

namespace entrain::cli {

// Settings shared by every subcommand. Loaded from a JSON config file, then
// overridden by command-line flags.
struct RunConfig {
  std::optional<std::filesystem::path> relations;   // bundled examples when absent
  std::optional<std::filesystem::path> vocabulary;  // bundled word list when absent
  std::vector<ContextCondition> conditions{kAllConditions.begin(), kAllConditions.end()};
  std::size_t cap = 100000;
  std::uint64_t seed = 0;
  std::vector<ModelSpec> models;
  std::size_t concurrency = 1;
  std::filesystem::path out = "entrain-out";
  std::optional<std::filesystem::path> cache_dir;
  AnalysisOptions analysis;
  std::set<ReportFormat> formats = {ReportFormat::kMarkdown, ReportFormat::kJson,
                                    ReportFormat::kCsv};
};

// Throws ValidationError on malformed or out-of-range settings.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::filesystem::path& path);
void validate(const RunConfig& config);

// Runs one invocation and returns the process exit code. Never throws.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace entrain::cli
