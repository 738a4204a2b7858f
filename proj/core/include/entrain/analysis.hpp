#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entrain/condition.hpp"
#include "entrain/metrics.hpp"
#include "entrain/scaling_fit.hpp"

namespace entrain {

enum class GapDirection { kConvergent, kDivergent, kFlat, kSignCrossing };

std::string_view to_string(GapDirection d);

struct GapPoint {
  std::string model;
  std::uint64_t param_count = 0;
  double delta_gold = 0;
  double delta_dstr = 0;
  double gap = 0;  // delta_dstr - delta_gold; positive favours the distractor
};

struct GapTrajectory {
  ContextCondition condition = ContextCondition::kRelated;
  std::vector<GapPoint> points;  // ascending N
  // gap(smallest N) / gap(largest N); absent for sign-crossing trajectories.
  std::optional<double> ratio_first_to_last;
  GapDirection direction = GapDirection::kFlat;

  // Narrowing factor for convergent, widening factor for divergent.
  std::optional<double> change_factor() const;
};

// Needs at least two sizes of `condition` among `aggregates` (one family).
GapTrajectory gap_trajectory(std::span<const ConditionAggregate> aggregates,
                             ContextCondition condition);

struct HeatmapMatrix {
  std::vector<ContextCondition> rows;  // kAllConditions order
  std::vector<std::string> columns;    // model names, ascending N
  std::vector<std::uint64_t> column_params;
  std::vector<std::vector<double>> cells;  // mean delta_dstr, [row][column]

  double at(ContextCondition c, std::string_view model) const;
  std::string to_csv() const;
};

// Throws StatsError listing every missing (condition, model) cell.
HeatmapMatrix heatmap_matrix(std::span<const ConditionAggregate> aggregates);

// Everything the report needs for one model family.
struct FamilyAnalysis {
  std::string family;
  std::vector<ConditionAggregate> aggregates;
  std::vector<FitOutcome> fits;
  BaselineReport baselines;
  std::optional<SignSplitReport> sign_split;  // absent if a delta_dstr fit failed
  std::string sign_split_error;
  std::vector<GapTrajectory> trajectories;
  std::optional<HeatmapMatrix> heatmap;
  std::string heatmap_error;
};

struct AnalysisOptions {
  FitOptions fit;
  BaselineOptions baseline;
  StrengthThresholds strength;
};

// Metrics fitted per condition, grouped as in the full regression tables.
inline constexpr Metric kReportedMetrics[] = {
    Metric::kDeltaDstr, Metric::kDeltaOverall, Metric::kGoldNo,
    Metric::kOverallNo, Metric::kGoldWith,     Metric::kOverallWith};

// Fits, baselines, sign split, gap trajectories and heatmap for one family.
FamilyAnalysis analyze_family(std::span<const ConditionAggregate> aggregates,
                              std::string_view family, const AnalysisOptions& options = {});

std::vector<FamilyAnalysis> analyze_all(std::span<const ConditionAggregate> aggregates,
                                        const AnalysisOptions& options = {});

enum class ReportFormat { kMarkdown, kJson, kCsv, kSvg };

struct ManifestEntry {
  std::string file;
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct ReportOptions {
  std::set<ReportFormat> formats = {ReportFormat::kMarkdown, ReportFormat::kJson,
                                    ReportFormat::kCsv};
  StrengthThresholds strength;
};

// In-memory rendering of every report file, keyed by file name.
std::vector<std::pair<std::string, std::string>> render_report(
    std::span<const FamilyAnalysis> families, const ReportOptions& options = {});

// Writes the rendered files and manifest.json into `out_dir`. Nothing is left
// behind if any write fails.
std::vector<ManifestEntry> emit_report(std::span<const FamilyAnalysis> families,
                                       const std::filesystem::path& out_dir,
                                       const ReportOptions& options = {});

std::string markdown_fit_table(std::span<const FitOutcome> fits, Metric metric);

}  // namespace entrain
