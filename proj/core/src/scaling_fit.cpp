#include "entrain/scaling_fit.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "entrain/error.hpp"
#include "entrain/student_t.hpp"

namespace entrain {

double PowerLawFit::band_half_width(double log10_n) const {
  if (n_points <= 0 || sxx <= 0) return 0.0;
  const double dx = log10_n - x_mean;
  return critical * residual_se * std::sqrt(1.0 / n_points + dx * dx / sxx);
}

PowerLawFit fit_power_law(std::span<const SeriesPoint> series, const FitOptions& options) {
  if (series.size() < 3) {
    throw StatsError(fmt::format("insufficient data: {} points, need at least 3", series.size()));
  }
  if (!(options.confidence > 0 && options.confidence < 1)) {
    throw ValidationError("confidence level must lie in (0, 1)");
  }
  std::set<std::uint64_t> seen;
  bool any_pos = false;
  bool any_neg = false;
  for (const auto& p : series) {
    if (p.n == 0) throw ValidationError("parameter count must be positive");
    if (!seen.insert(p.n).second) {
      throw ValidationError(fmt::format("duplicate parameter count {}", p.n));
    }
    if (!std::isfinite(p.value)) throw StatsError("series value is not finite");
    if (p.value == 0.0) throw StatsError(fmt::format("zero value at N={} cannot be log-transformed", p.n));
    (p.value > 0 ? any_pos : any_neg) = true;
  }
  if (any_pos && any_neg) {
    throw StatsError("mixed-sign series cannot be fitted as a single power law");
  }

  const auto count = series.size();
  std::vector<double> x(count);
  std::vector<double> y(count);
  for (std::size_t i = 0; i < count; ++i) {
    x[i] = std::log10(static_cast<double>(series[i].n));
    y[i] = std::log10(std::fabs(series[i].value));
  }
  double x_mean = 0;
  double y_mean = 0;
  for (std::size_t i = 0; i < count; ++i) {
    x_mean += x[i];
    y_mean += y[i];
  }
  x_mean /= static_cast<double>(count);
  y_mean /= static_cast<double>(count);

  double sxx = 0;
  double sxy = 0;
  double syy = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double dx = x[i] - x_mean;
    const double dy = y[i] - y_mean;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }

  PowerLawFit fit;
  fit.n_points = static_cast<int>(count);
  fit.series_sign = any_neg ? -1 : 1;
  fit.b = sxy / sxx;
  fit.intercept = y_mean - fit.b * x_mean;
  fit.a = std::pow(10.0, fit.intercept);
  fit.x_mean = x_mean;
  fit.sxx = sxx;

  double ssr = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const double r = y[i] - (fit.intercept + fit.b * x[i]);
    ssr += r * r;
  }
  // A constant series has nothing to explain; report R^2 = 0 rather than 0/0.
  fit.r_squared = syy > 0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 0.0;

  const int df = fit.n_points - 2;
  fit.residual_se = std::sqrt(ssr / df);
  fit.se_b = fit.residual_se / std::sqrt(sxx);

  const double upper = 0.5 + options.confidence / 2.0;
  const bool use_t = options.critical == CriticalValue::kStudentT;
  fit.critical = use_t ? student_t_quantile(upper, df) : normal_quantile(upper);
  fit.ci_lo = fit.b - fit.critical * fit.se_b;
  fit.ci_hi = fit.b + fit.critical * fit.se_b;

  if (fit.se_b == 0.0) {
    fit.p_value = fit.b == 0.0 ? 1.0 : 0.0;
  } else {
    const double t = fit.b / fit.se_b;
    fit.p_value = use_t ? student_t_two_sided_p(t, df) : normal_two_sided_p(t);
  }
  return fit;
}

bool is_strong(const PowerLawFit& fit, const StrengthThresholds& thresholds) {
  return fit.r_squared > thresholds.r2_strong && fit.p_value < thresholds.p_strong;
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kDeltaDstr: return "delta_dstr";
    case Metric::kDeltaGold: return "delta_gold";
    case Metric::kDeltaOverall: return "delta_overall";
    case Metric::kDstrNo: return "dstr_no";
    case Metric::kDstrWith: return "dstr_with";
    case Metric::kGoldNo: return "gold_no";
    case Metric::kGoldWith: return "gold_with";
    case Metric::kOverallNo: return "overall_no";
    case Metric::kOverallWith: return "overall_with";
  }
  return "unknown";
}

std::optional<Metric> parse_metric(std::string_view name) {
  for (auto m : {Metric::kDeltaDstr, Metric::kDeltaGold, Metric::kDeltaOverall, Metric::kDstrNo,
                 Metric::kDstrWith, Metric::kGoldNo, Metric::kGoldWith, Metric::kOverallNo,
                 Metric::kOverallWith}) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

double metric_value(const ConditionAggregate& a, Metric m) {
  switch (m) {
    case Metric::kDeltaDstr: return a.delta_dstr;
    case Metric::kDeltaGold: return a.delta_gold;
    case Metric::kDeltaOverall: return a.delta_overall;
    case Metric::kDstrNo: return a.dstr_no;
    case Metric::kDstrWith: return a.dstr_with;
    case Metric::kGoldNo: return a.gold_no;
    case Metric::kGoldWith: return a.gold_with;
    case Metric::kOverallNo: return a.overall_no;
    case Metric::kOverallWith: return a.overall_with;
  }
  return 0.0;
}

std::vector<SeriesPoint> series_for(std::span<const ConditionAggregate> aggregates,
                                    ContextCondition condition, Metric metric) {
  std::vector<SeriesPoint> out;
  for (const auto& a : aggregates) {
    if (a.condition == condition) out.push_back({a.param_count, metric_value(a, metric)});
  }
  std::sort(out.begin(), out.end(), [](const auto& l, const auto& r) { return l.n < r.n; });
  return out;
}

FitOutcome try_fit(std::span<const ConditionAggregate> aggregates, std::string_view family,
                   ContextCondition condition, Metric metric, const FitOptions& options) {
  FitOutcome out;
  out.metric = metric;
  out.condition = condition;
  out.family = std::string(family);
  std::vector<ConditionAggregate> members;
  for (const auto& a : aggregates) {
    if (a.family == family) members.push_back(a);
  }
  try {
    out.fit = fit_power_law(series_for(members, condition, metric), options);
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

BaselineReport validate_baselines(std::span<const ConditionAggregate> aggregates,
                                  std::string_view family, const BaselineOptions& options,
                                  const FitOptions& fit_options) {
  BaselineReport report;
  report.family = std::string(family);
  report.options = options;
  report.all_gold_pass = true;
  report.all_dstr_non_scaling = true;
  for (auto c : kAllConditions) {
    BaselineEntry e;
    e.condition = c;
    e.gold_no = try_fit(aggregates, family, c, Metric::kGoldNo, fit_options);
    e.dstr_no = try_fit(aggregates, family, c, Metric::kDstrNo, fit_options);
    if (e.gold_no.fit) {
      const auto& f = *e.gold_no.fit;
      e.gold_pass = f.r_squared > options.gold_r2_min && f.b >= options.gold_b_lo &&
                    f.b <= options.gold_b_hi;
    }
    if (e.dstr_no.fit) {
      const auto& f = *e.dstr_no.fit;
      e.dstr_non_scaling = f.r_squared < options.dstr_r2_max || f.p_value > options.dstr_p_min;
    }
    report.all_gold_pass = report.all_gold_pass && e.gold_pass;
    report.all_dstr_non_scaling = report.all_dstr_non_scaling && e.dstr_non_scaling;
    report.entries.push_back(std::move(e));
  }
  return report;
}

SignSplitReport classify_sign_split(const std::map<ContextCondition, PowerLawFit>& fits) {
  std::vector<std::string> missing;
  for (auto c : kAllConditions) {
    if (!fits.contains(c)) missing.emplace_back(to_string(c));
  }
  if (!missing.empty()) {
    throw StatsError(fmt::format("sign split needs all four conditions; missing {}",
                                 fmt::join(missing, ", ")));
  }

  SignSplitReport report;
  double sem_hi = -INFINITY;
  double non_lo = INFINITY;
  report.semantic_negative = true;
  report.nonsemantic_positive = true;
  for (auto c : kAllConditions) {
    SignSplitEntry e{c, fits.at(c), is_semantic(c), false};
    e.excludes_zero = e.fit.excludes_zero();
    if (e.semantic) {
      sem_hi = std::max(sem_hi, e.fit.ci_hi);
      report.semantic_negative = report.semantic_negative && e.fit.ci_hi < 0;
    } else {
      non_lo = std::min(non_lo, e.fit.ci_lo);
      report.nonsemantic_positive = report.nonsemantic_positive && e.fit.ci_lo > 0;
    }
    report.entries.push_back(e);
  }

  report.groups_separated = true;
  for (const auto& s : report.entries) {
    if (!s.semantic) continue;
    for (const auto& n : report.entries) {
      if (n.semantic) continue;
      const bool disjoint = s.fit.ci_hi < n.fit.ci_lo || n.fit.ci_hi < s.fit.ci_lo;
      report.groups_separated = report.groups_separated && disjoint;
    }
  }
  report.semantic_below = sem_hi < non_lo;
  return report;
}

}  // namespace entrain
