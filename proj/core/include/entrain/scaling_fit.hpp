#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entrain/condition.hpp"
#include "entrain/metrics.hpp"

namespace entrain {

struct SeriesPoint {
  std::uint64_t n = 0;  // parameter count
  double value = 0;
};

enum class CriticalValue { kStudentT, kNormal };

struct FitOptions {
  double confidence = 0.95;
  CriticalValue critical = CriticalValue::kStudentT;
};

// E(N) = series_sign * a * N^b, estimated by OLS of log10|E| on log10 N.
struct PowerLawFit {
  double a = 0;
  double b = 0;
  double se_b = 0;
  double ci_lo = 0;
  double ci_hi = 0;
  double r_squared = 0;
  double p_value = 1;
  int n_points = 0;
  int series_sign = 1;

  // Regression internals kept for confidence bands.
  double intercept = 0;    // log10 a
  double residual_se = 0;  // sqrt(SSR / (n - 2))
  double x_mean = 0;
  double sxx = 0;
  double critical = 0;  // t (or z) multiplier used for ci95

  double predict_log10(double log10_n) const { return intercept + b * log10_n; }
  // Half-width of the confidence band for the mean response at log10_n.
  double band_half_width(double log10_n) const;
  bool excludes_zero() const { return (ci_lo > 0 && ci_hi > 0) || (ci_lo < 0 && ci_hi < 0); }
};

PowerLawFit fit_power_law(std::span<const SeriesPoint> series, const FitOptions& options = {});

struct StrengthThresholds {
  double r2_strong = 0.8;
  double p_strong = 0.01;
};

bool is_strong(const PowerLawFit& fit, const StrengthThresholds& thresholds = {});

enum class Metric {
  kDeltaDstr,
  kDeltaGold,
  kDeltaOverall,  // relative advantage, delta_gold - delta_dstr
  kDstrNo,
  kDstrWith,
  kGoldNo,
  kGoldWith,
  kOverallNo,
  kOverallWith,
};

std::string_view to_string(Metric m);
std::optional<Metric> parse_metric(std::string_view name);
double metric_value(const ConditionAggregate& a, Metric m);

// Points of one (condition, metric) series, ascending in N.
std::vector<SeriesPoint> series_for(std::span<const ConditionAggregate> aggregates,
                                    ContextCondition condition, Metric metric);

struct FitOutcome {
  Metric metric = Metric::kDeltaDstr;
  ContextCondition condition = ContextCondition::kRelated;
  std::string family;
  std::optional<PowerLawFit> fit;
  std::string error;  // set when fit is absent
};

FitOutcome try_fit(std::span<const ConditionAggregate> aggregates, std::string_view family,
                   ContextCondition condition, Metric metric, const FitOptions& options = {});

struct BaselineOptions {
  double gold_b_lo = 0.10;
  double gold_b_hi = 0.16;
  double gold_r2_min = 0.93;
  double dstr_r2_max = 0.25;
  double dstr_p_min = 0.1;
};

struct BaselineEntry {
  ContextCondition condition = ContextCondition::kRelated;
  FitOutcome gold_no;
  FitOutcome dstr_no;
  bool gold_pass = false;
  bool dstr_non_scaling = false;
};

struct BaselineReport {
  std::string family;
  BaselineOptions options;
  std::vector<BaselineEntry> entries;
  bool all_gold_pass = false;
  bool all_dstr_non_scaling = false;
};

BaselineReport validate_baselines(std::span<const ConditionAggregate> aggregates,
                                  std::string_view family,
                                  const BaselineOptions& options = {},
                                  const FitOptions& fit_options = {});

struct SignSplitEntry {
  ContextCondition condition = ContextCondition::kRelated;
  PowerLawFit fit;
  bool semantic = false;
  bool excludes_zero = false;
};

struct SignSplitReport {
  std::vector<SignSplitEntry> entries;  // fixed condition order
  // No semantic interval overlaps any non-semantic interval.
  bool groups_separated = false;
  // max semantic ci_hi < min non-semantic ci_lo.
  bool semantic_below = false;
  bool semantic_negative = false;      // every semantic interval lies below zero
  bool nonsemantic_positive = false;   // every non-semantic interval lies above zero
};

SignSplitReport classify_sign_split(const std::map<ContextCondition, PowerLawFit>& fits);

}  // namespace entrain
