#include "entrain/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "entrain/error.hpp"
#include "entrain/hashing.hpp"
#include "entrain/io.hpp"

namespace entrain {
namespace {

using ojson = nlohmann::ordered_json;

std::string num(double v) { return fmt::format("{}", v); }

std::string signed3(double v) { return fmt::format("{:+.3f}", v); }

std::string short_size(std::uint64_t n) {
  const double v = static_cast<double>(n);
  if (v >= 1e9) return fmt::format("{:g}B", v / 1e9);
  if (v >= 1e6) return fmt::format("{:g}M", v / 1e6);
  if (v >= 1e3) return fmt::format("{:g}K", v / 1e3);
  return fmt::format("{}", n);
}

std::string metric_title(Metric m) {
  switch (m) {
    case Metric::kDeltaDstr: return "Distractor entrainment (delta_dstr)";
    case Metric::kDeltaGold: return "Gold entrainment (delta_gold)";
    case Metric::kDeltaOverall: return "Relative advantage (delta_gold - delta_dstr)";
    case Metric::kDstrNo: return "Distractor logit, no context";
    case Metric::kDstrWith: return "Distractor logit, with context";
    case Metric::kGoldNo: return "Gold logit, no context";
    case Metric::kGoldWith: return "Gold logit, with context";
    case Metric::kOverallNo: return "Overall (gold - distractor), no context";
    case Metric::kOverallWith: return "Overall (gold - distractor), with context";
  }
  return "";
}

ojson fit_json(const FitOutcome& o) {
  const auto& f = *o.fit;
  ojson j;
  j["metric"] = to_string(o.metric);
  j["condition"] = to_string(o.condition);
  j["family"] = o.family;
  j["a"] = f.a;
  j["b"] = f.b;
  j["se_b"] = f.se_b;
  j["ci_lo"] = f.ci_lo;
  j["ci_hi"] = f.ci_hi;
  j["r2"] = f.r_squared;
  j["p"] = f.p_value;
  j["n_points"] = f.n_points;
  j["sign"] = f.series_sign;
  return j;
}

const FitOutcome* find_fit(std::span<const FitOutcome> fits, Metric m, ContextCondition c) {
  for (const auto& f : fits) {
    if (f.metric == m && f.condition == c) return &f;
  }
  return nullptr;
}

std::string render_markdown(std::span<const FamilyAnalysis> families,
                            const ReportOptions& options) {
  std::string md = "# Contextual entrainment scaling report\n\n";
  md += fmt::format(
      "Power laws E(N) = a * N^b fitted by least squares on log10|E| versus log10 N. "
      "A fit counts as strong when R^2 > {} and p < {}.\n",
      options.strength.r2_strong, options.strength.p_strong);

  for (const auto& fam : families) {
    std::vector<std::string> sizes;
    if (fam.heatmap) {
      for (auto n : fam.heatmap->column_params) sizes.push_back(short_size(n));
    }
    md += fmt::format("\n## Family: {}\n\n", fam.family);
    if (!sizes.empty()) {
      md += fmt::format("Model sizes ({}): {}\n\n", sizes.size(), fmt::join(sizes, ", "));
    }

    for (auto m : {Metric::kDeltaDstr, Metric::kDeltaOverall}) {
      md += fmt::format("### {}\n\n", metric_title(m));
      md += markdown_fit_table(fam.fits, m);
      md += "\n";
    }

    md += "### Baseline validation\n\n";
    const auto& bl = fam.baselines;
    md += fmt::format(
        "Gold no-context fits pass when R^2 > {} and b in [{}, {}]; distractor no-context "
        "series count as non-scaling when R^2 < {} or p > {}.\n\n",
        bl.options.gold_r2_min, bl.options.gold_b_lo, bl.options.gold_b_hi,
        bl.options.dstr_r2_max, bl.options.dstr_p_min);
    md += "| Context | gold b | gold R^2 | gold pass | dstr b | dstr R^2 | dstr p | dstr non-scaling |\n";
    md += "|---|---|---|---|---|---|---|---|\n";
    for (const auto& e : bl.entries) {
      auto g = e.gold_no.fit ? fmt::format("{} | {:.3f}", signed3(e.gold_no.fit->b), e.gold_no.fit->r_squared)
                             : fmt::format("n/a | n/a");
      auto d = e.dstr_no.fit ? fmt::format("{} | {:.3f} | {:.3g}", signed3(e.dstr_no.fit->b),
                                           e.dstr_no.fit->r_squared, e.dstr_no.fit->p_value)
                             : fmt::format("n/a | n/a | n/a");
      md += fmt::format("| {} | {} | {} | {} | {} |\n", to_string(e.condition), g,
                        e.gold_pass ? "yes" : "no", d, e.dstr_non_scaling ? "yes" : "no");
    }
    md += fmt::format("\nAll gold baselines pass: {}. All distractor baselines non-scaling: {}.\n\n",
                      bl.all_gold_pass ? "yes" : "no", bl.all_dstr_non_scaling ? "yes" : "no");

    md += "### Sign split (delta_dstr)\n\n";
    if (fam.sign_split) {
      const auto& s = *fam.sign_split;
      for (const auto& e : s.entries) {
        md += fmt::format("- {} ({}): b = {}, 95% CI [{}, {}], excludes zero: {}\n",
                          to_string(e.condition), e.semantic ? "semantic" : "non-semantic",
                          signed3(e.fit.b), signed3(e.fit.ci_lo), signed3(e.fit.ci_hi),
                          e.excludes_zero ? "yes" : "no");
      }
      md += fmt::format(
          "\nSemantic intervals below zero: {}. Non-semantic intervals above zero: {}. "
          "Groups separated: {}.\n\n",
          s.semantic_negative ? "yes" : "no", s.nonsemantic_positive ? "yes" : "no",
          s.groups_separated ? "yes" : "no");
    } else {
      md += fmt::format("Not available: {}\n\n", fam.sign_split_error);
    }

    md += "### Gold/distractor gap trajectories\n\n";
    md += "| Context | gap (smallest) | gap (largest) | ratio | direction | factor |\n";
    md += "|---|---|---|---|---|---|\n";
    for (const auto& t : fam.trajectories) {
      auto ratio = t.ratio_first_to_last ? fmt::format("{:.2f}", *t.ratio_first_to_last) : "n/a";
      auto factor = t.change_factor() ? fmt::format("{:.1f}x", *t.change_factor()) : "n/a";
      md += fmt::format("| {} | {:.2f} | {:.2f} | {} | {} | {} |\n", to_string(t.condition),
                        t.points.front().gap, t.points.back().gap, ratio, to_string(t.direction),
                        factor);
    }
    md += "\nGap = mean delta_dstr - mean delta_gold (positive favours the distractor). Ratios "
          "use full-precision means; recomputing them from the rounded gaps shown can move the "
          "last digit.\n\n";

    md += "### Full regression statistics\n\n";
    md += "| Metric | Context | R^2 | b | 95% CI | p |\n|---|---|---|---|---|---|\n";
    for (auto m : kReportedMetrics) {
      for (auto c : kAllConditions) {
        const auto* f = find_fit(fam.fits, m, c);
        if (f == nullptr) continue;
        if (f->fit) {
          md += fmt::format("| {} | {} | {:.3f} | {} | [{}, {}] | {:.2e} |\n", to_string(m),
                            to_string(c), f->fit->r_squared, signed3(f->fit->b),
                            signed3(f->fit->ci_lo), signed3(f->fit->ci_hi), f->fit->p_value);
        } else {
          md += fmt::format("| {} | {} | - | - | - | not fitted: {} |\n", to_string(m),
                            to_string(c), f->error);
        }
      }
    }

    if (fam.heatmap) {
      const auto& h = *fam.heatmap;
      md += "\n### Distractor entrainment matrix\n\n| Context |";
      for (auto n : h.column_params) md += fmt::format(" {} |", short_size(n));
      md += "\n|---|";
      for (std::size_t i = 0; i < h.columns.size(); ++i) md += "---|";
      md += "\n";
      for (std::size_t r = 0; r < h.rows.size(); ++r) {
        md += fmt::format("| {} |", to_string(h.rows[r]));
        for (double v : h.cells[r]) md += fmt::format(" {:.2f} |", v);
        md += "\n";
      }
    } else if (!fam.heatmap_error.empty()) {
      md += fmt::format("\nHeatmap not available: {}\n", fam.heatmap_error);
    }
  }
  return md;
}

ojson fits_document(std::span<const FamilyAnalysis> families) {
  ojson doc;
  doc["fits"] = ojson::array();
  doc["fit_errors"] = ojson::array();
  doc["families"] = ojson::array();
  for (const auto& fam : families) {
    for (const auto& f : fam.fits) {
      if (f.fit) {
        doc["fits"].push_back(fit_json(f));
      } else {
        ojson e;
        e["metric"] = to_string(f.metric);
        e["condition"] = to_string(f.condition);
        e["family"] = f.family;
        e["error"] = f.error;
        doc["fit_errors"].push_back(e);
      }
    }

    ojson fj;
    fj["family"] = fam.family;
    ojson baselines = ojson::array();
    for (const auto& e : fam.baselines.entries) {
      ojson b;
      b["condition"] = to_string(e.condition);
      b["gold_no"] = e.gold_no.fit ? fit_json(e.gold_no) : ojson(e.gold_no.error);
      b["dstr_no"] = e.dstr_no.fit ? fit_json(e.dstr_no) : ojson(e.dstr_no.error);
      b["gold_pass"] = e.gold_pass;
      b["dstr_non_scaling"] = e.dstr_non_scaling;
      baselines.push_back(b);
    }
    fj["baselines"] = {{"entries", baselines},
                       {"all_gold_pass", fam.baselines.all_gold_pass},
                       {"all_dstr_non_scaling", fam.baselines.all_dstr_non_scaling}};
    if (fam.sign_split) {
      const auto& s = *fam.sign_split;
      ojson entries = ojson::array();
      for (const auto& e : s.entries) {
        entries.push_back({{"condition", to_string(e.condition)},
                           {"group", e.semantic ? "semantic" : "non-semantic"},
                           {"b", e.fit.b},
                           {"ci_lo", e.fit.ci_lo},
                           {"ci_hi", e.fit.ci_hi},
                           {"excludes_zero", e.excludes_zero}});
      }
      fj["sign_split"] = {{"entries", entries},
                          {"groups_separated", s.groups_separated},
                          {"semantic_below", s.semantic_below},
                          {"semantic_negative", s.semantic_negative},
                          {"nonsemantic_positive", s.nonsemantic_positive}};
    } else {
      fj["sign_split"] = {{"error", fam.sign_split_error}};
    }
    ojson traj = ojson::array();
    for (const auto& t : fam.trajectories) {
      ojson tj;
      tj["condition"] = to_string(t.condition);
      tj["direction"] = to_string(t.direction);
      tj["ratio_first_to_last"] = t.ratio_first_to_last ? ojson(*t.ratio_first_to_last) : ojson();
      tj["change_factor"] = t.change_factor() ? ojson(*t.change_factor()) : ojson();
      ojson pts = ojson::array();
      for (const auto& p : t.points) {
        pts.push_back({{"model", p.model},
                       {"param_count", p.param_count},
                       {"delta_gold", p.delta_gold},
                       {"delta_dstr", p.delta_dstr},
                       {"gap", p.gap}});
      }
      tj["points"] = pts;
      traj.push_back(tj);
    }
    fj["trajectories"] = traj;
    if (fam.heatmap) {
      ojson rows = ojson::array();
      for (auto c : fam.heatmap->rows) rows.push_back(to_string(c));
      fj["heatmap"] = {{"rows", rows},
                       {"columns", fam.heatmap->columns},
                       {"param_counts", fam.heatmap->column_params},
                       {"cells", fam.heatmap->cells}};
    } else {
      fj["heatmap"] = {{"error", fam.heatmap_error}};
    }
    doc["families"].push_back(fj);
  }
  return doc;
}

std::string heatmap_csv(std::span<const FamilyAnalysis> families) {
  struct Column {
    std::string family;
    std::string model;
  };
  std::vector<Column> columns;
  for (const auto& fam : families) {
    if (!fam.heatmap) continue;
    for (const auto& m : fam.heatmap->columns) columns.push_back({fam.family, m});
  }
  std::string out = "family,condition";
  for (const auto& c : columns) out += "," + c.model;
  out += "\n";
  for (const auto& fam : families) {
    if (!fam.heatmap) continue;
    for (auto cond : kAllConditions) {
      out += fmt::format("{},{}", fam.family, to_string(cond));
      for (const auto& c : columns) {
        out += ",";
        if (c.family == fam.family) out += num(fam.heatmap->at(cond, c.model));
      }
      out += "\n";
    }
  }
  return out;
}

std::string loglog_csv(std::span<const FamilyAnalysis> families, ContextCondition cond) {
  std::string out = "family,model,param_count,log10_n,log10_abs_e,fit_log10,band_lo,band_hi\n";
  for (const auto& fam : families) {
    const auto* f = find_fit(fam.fits, Metric::kDeltaDstr, cond);
    for (const auto& a : fam.aggregates) {
      if (a.condition != cond || a.delta_dstr == 0.0) continue;
      const double x = std::log10(static_cast<double>(a.param_count));
      const double y = std::log10(std::fabs(a.delta_dstr));
      out += fmt::format("{},{},{},{},{}", fam.family, a.model, a.param_count, num(x), num(y));
      if (f != nullptr && f->fit) {
        const double yhat = f->fit->predict_log10(x);
        const double hw = f->fit->band_half_width(x);
        out += fmt::format(",{},{},{}\n", num(yhat), num(yhat - hw), num(yhat + hw));
      } else {
        out += ",,,\n";
      }
    }
  }
  return out;
}

std::string trajectory_csv(std::span<const FamilyAnalysis> families, ContextCondition cond) {
  std::string out = "family,model,param_count,delta_gold,delta_dstr,gap\n";
  for (const auto& fam : families) {
    for (const auto& t : fam.trajectories) {
      if (t.condition != cond) continue;
      for (const auto& p : t.points) {
        out += fmt::format("{},{},{},{},{},{}\n", fam.family, p.model, p.param_count,
                           num(p.delta_gold), num(p.delta_dstr), num(p.gap));
      }
    }
  }
  return out;
}

std::string loglog_svg(std::span<const FamilyAnalysis> families) {
  constexpr double kW = 640, kH = 420, kPad = 50;
  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& fam : families) {
    for (const auto& a : fam.aggregates) {
      if (a.delta_dstr == 0.0) continue;
      const double x = std::log10(static_cast<double>(a.param_count));
      const double y = std::log10(std::fabs(a.delta_dstr));
      xmin = std::min(xmin, x); xmax = std::max(xmax, x);
      ymin = std::min(ymin, y); ymax = std::max(ymax, y);
    }
  }
  if (!(xmax > xmin)) { xmin -= 0.5; xmax += 0.5; }
  if (!(ymax > ymin)) { ymin -= 0.5; ymax += 0.5; }
  auto px = [&](double x) { return kPad + (x - xmin) / (xmax - xmin) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - (y - ymin) / (ymax - ymin) * (kH - 2 * kPad); };

  static constexpr const char* kColors[] = {"#1f77b4", "#2ca02c", "#ff7f0e", "#d62728"};
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" "
      "font-family=\"sans-serif\" font-size=\"11\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{}\" y=\"{}\">log10 N</text>\n"
      "<text x=\"8\" y=\"{}\">log10 |delta_dstr|</text>\n",
      kW, kH, kW / 2, kH - 12, kPad - 20);
  int legend = 0;
  for (const auto& fam : families) {
    for (std::size_t ci = 0; ci < kAllConditions.size(); ++ci) {
      const auto cond = kAllConditions[ci];
      std::vector<std::string> pts;
      std::string dots;
      for (const auto& a : fam.aggregates) {
        if (a.condition != cond || a.delta_dstr == 0.0) continue;
        const double x = px(std::log10(static_cast<double>(a.param_count)));
        const double y = py(std::log10(std::fabs(a.delta_dstr)));
        pts.push_back(fmt::format("{:.1f},{:.1f}", x, y));
        dots += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"{}\"/>\n", x, y,
                            kColors[ci]);
      }
      if (pts.empty()) continue;
      svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>\n", kColors[ci],
                         fmt::join(pts, " "));
      svg += dots;
      svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{} {}</text>\n", kW - 170,
                         20 + 14 * legend++, kColors[ci], fam.family, to_string(cond));
    }
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

std::string_view to_string(GapDirection d) {
  switch (d) {
    case GapDirection::kConvergent: return "convergent";
    case GapDirection::kDivergent: return "divergent";
    case GapDirection::kFlat: return "flat";
    case GapDirection::kSignCrossing: return "sign-crossing";
  }
  return "unknown";
}

std::optional<double> GapTrajectory::change_factor() const {
  if (!ratio_first_to_last) return std::nullopt;
  switch (direction) {
    case GapDirection::kConvergent: return *ratio_first_to_last;
    case GapDirection::kDivergent: return 1.0 / *ratio_first_to_last;
    case GapDirection::kFlat: return 1.0;
    case GapDirection::kSignCrossing: return std::nullopt;
  }
  return std::nullopt;
}

GapTrajectory gap_trajectory(std::span<const ConditionAggregate> aggregates,
                             ContextCondition condition) {
  GapTrajectory t;
  t.condition = condition;
  for (const auto& a : aggregates) {
    if (a.condition != condition) continue;
    t.points.push_back({a.model, a.param_count, a.delta_gold, a.delta_dstr,
                        a.delta_dstr - a.delta_gold});
  }
  if (t.points.size() < 2) {
    throw StatsError(fmt::format("gap trajectory for '{}' needs at least two model sizes",
                                 to_string(condition)));
  }
  std::sort(t.points.begin(), t.points.end(),
            [](const auto& l, const auto& r) { return l.param_count < r.param_count; });

  const double first = t.points.front().gap;
  const double last = t.points.back().gap;
  if (first == 0.0 && last == 0.0) {
    t.direction = GapDirection::kFlat;
    return t;
  }
  if (first == 0.0 || last == 0.0 || (first > 0) != (last > 0)) {
    t.direction = GapDirection::kSignCrossing;
    return t;
  }
  t.ratio_first_to_last = first / last;
  if (std::fabs(last) < std::fabs(first)) {
    t.direction = GapDirection::kConvergent;
  } else if (std::fabs(last) > std::fabs(first)) {
    t.direction = GapDirection::kDivergent;
  } else {
    t.direction = GapDirection::kFlat;
  }
  return t;
}

double HeatmapMatrix::at(ContextCondition c, std::string_view model) const {
  auto r = std::find(rows.begin(), rows.end(), c);
  auto col = std::find(columns.begin(), columns.end(), model);
  if (r == rows.end() || col == columns.end()) {
    throw ValidationError(fmt::format("heatmap has no cell ({}, {})", to_string(c), model));
  }
  return cells[r - rows.begin()][col - columns.begin()];
}

std::string HeatmapMatrix::to_csv() const {
  std::string out = "condition";
  for (const auto& c : columns) out += "," + c;
  out += "\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out += std::string(to_string(rows[r]));
    for (double v : cells[r]) out += "," + num(v);
    out += "\n";
  }
  return out;
}

HeatmapMatrix heatmap_matrix(std::span<const ConditionAggregate> aggregates) {
  std::vector<std::pair<std::uint64_t, std::string>> models;
  for (const auto& a : aggregates) {
    std::pair<std::uint64_t, std::string> key{a.param_count, a.model};
    if (std::find(models.begin(), models.end(), key) == models.end()) models.push_back(key);
  }
  if (models.empty()) throw StatsError("heatmap needs at least one aggregate");
  std::sort(models.begin(), models.end());

  HeatmapMatrix h;
  h.rows.assign(kAllConditions.begin(), kAllConditions.end());
  for (const auto& [n, name] : models) {
    h.columns.push_back(name);
    h.column_params.push_back(n);
  }
  h.cells.assign(h.rows.size(), std::vector<double>(h.columns.size(), 0.0));
  std::vector<std::vector<bool>> filled(h.rows.size(), std::vector<bool>(h.columns.size(), false));
  for (const auto& a : aggregates) {
    auto r = std::find(h.rows.begin(), h.rows.end(), a.condition) - h.rows.begin();
    auto c = std::find(h.columns.begin(), h.columns.end(), a.model) - h.columns.begin();
    h.cells[r][c] = a.delta_dstr;
    filled[r][c] = true;
  }
  std::vector<std::string> missing;
  for (std::size_t r = 0; r < h.rows.size(); ++r) {
    for (std::size_t c = 0; c < h.columns.size(); ++c) {
      if (!filled[r][c]) missing.push_back(fmt::format("({}, {})", to_string(h.rows[r]), h.columns[c]));
    }
  }
  if (!missing.empty()) {
    throw StatsError(fmt::format("incomplete heatmap grid; missing {}", fmt::join(missing, ", ")));
  }
  return h;
}

FamilyAnalysis analyze_family(std::span<const ConditionAggregate> aggregates,
                              std::string_view family, const AnalysisOptions& options) {
  FamilyAnalysis fa;
  fa.family = std::string(family);
  for (const auto& a : aggregates) {
    if (a.family == family) fa.aggregates.push_back(a);
  }
  if (fa.aggregates.empty()) {
    throw StatsError(fmt::format("no aggregates for family '{}'", family));
  }

  for (auto m : kReportedMetrics) {
    for (auto c : kAllConditions) fa.fits.push_back(try_fit(fa.aggregates, family, c, m, options.fit));
  }
  fa.baselines = validate_baselines(fa.aggregates, family, options.baseline, options.fit);

  std::map<ContextCondition, PowerLawFit> dstr_fits;
  std::vector<std::string> problems;
  for (const auto& f : fa.fits) {
    if (f.metric != Metric::kDeltaDstr) continue;
    if (f.fit) {
      dstr_fits.emplace(f.condition, *f.fit);
    } else {
      problems.push_back(fmt::format("{}: {}", to_string(f.condition), f.error));
    }
  }
  if (problems.empty()) {
    fa.sign_split = classify_sign_split(dstr_fits);
  } else {
    fa.sign_split_error = fmt::format("{}", fmt::join(problems, "; "));
  }

  for (auto c : kAllConditions) {
    try {
      fa.trajectories.push_back(gap_trajectory(fa.aggregates, c));
    } catch (const StatsError&) {
      // fewer than two sizes for this condition
    }
  }
  try {
    fa.heatmap = heatmap_matrix(fa.aggregates);
  } catch (const StatsError& e) {
    fa.heatmap_error = e.what();
  }
  return fa;
}

std::vector<FamilyAnalysis> analyze_all(std::span<const ConditionAggregate> aggregates,
                                        const AnalysisOptions& options) {
  std::vector<std::string> families;
  for (const auto& a : aggregates) {
    if (std::find(families.begin(), families.end(), a.family) == families.end()) {
      families.push_back(a.family);
    }
  }
  std::vector<FamilyAnalysis> out;
  for (const auto& f : families) out.push_back(analyze_family(aggregates, f, options));
  return out;
}

std::string markdown_fit_table(std::span<const FitOutcome> fits, Metric metric) {
  std::string md = "| Context | b | 95% CI | R^2 | p |\n|---|---|---|---|---|\n";
  for (auto c : kAllConditions) {
    const auto* f = find_fit(fits, metric, c);
    if (f == nullptr) continue;
    if (f->fit) {
      md += fmt::format("| {} | {} | [{}, {}] | {:.3f} | {:.2e} |\n", to_string(c),
                        signed3(f->fit->b), signed3(f->fit->ci_lo), signed3(f->fit->ci_hi),
                        f->fit->r_squared, f->fit->p_value);
    } else {
      md += fmt::format("| {} | - | - | - | not fitted: {} |\n", to_string(c), f->error);
    }
  }
  return md;
}

std::vector<std::pair<std::string, std::string>> render_report(
    std::span<const FamilyAnalysis> families, const ReportOptions& options) {
  std::size_t fitted = 0;
  for (const auto& fam : families) {
    for (const auto& f : fam.fits) fitted += f.fit ? 1 : 0;
  }
  if (fitted == 0) throw StatsError("nothing to report: no successful fits");

  std::vector<std::pair<std::string, std::string>> files;
  const auto& fmts = options.formats;
  if (fmts.contains(ReportFormat::kMarkdown)) {
    files.emplace_back("report.md", render_markdown(families, options));
  }
  if (fmts.contains(ReportFormat::kJson)) {
    files.emplace_back("fits.json", fits_document(families).dump(2) + "\n");
  }
  if (fmts.contains(ReportFormat::kCsv)) {
    std::vector<ConditionAggregate> all;
    for (const auto& fam : families) all.insert(all.end(), fam.aggregates.begin(), fam.aggregates.end());
    files.emplace_back("aggregates.csv", aggregates_to_csv(all));
    files.emplace_back("heatmap.csv", heatmap_csv(families));
    for (auto c : kAllConditions) {
      files.emplace_back(fmt::format("loglog_{}.csv", to_string(c)), loglog_csv(families, c));
      files.emplace_back(fmt::format("trajectory_{}.csv", to_string(c)), trajectory_csv(families, c));
    }
  }
  if (fmts.contains(ReportFormat::kSvg)) files.emplace_back("loglog.svg", loglog_svg(families));
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<ManifestEntry> emit_report(std::span<const FamilyAnalysis> families,
                                       const std::filesystem::path& out_dir,
                                       const ReportOptions& options) {
  auto files = render_report(families, options);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError(fmt::format("cannot create output directory '{}'", out_dir.string()));
  }

  std::vector<ManifestEntry> manifest;
  std::vector<std::filesystem::path> written;
  auto rollback = [&] {
    for (const auto& p : written) std::filesystem::remove(p, ec);
  };
  try {
    for (const auto& [name, content] : files) {
      auto path = out_dir / name;
      write_file_atomic(path, content);
      written.push_back(path);
      manifest.push_back({name, sha256_hex(content), content.size()});
    }
    ojson mj;
    mj["files"] = ojson::array();
    for (const auto& m : manifest) {
      mj["files"].push_back({{"file", m.file}, {"sha256", m.sha256}, {"bytes", m.bytes}});
    }
    write_file_atomic(out_dir / "manifest.json", mj.dump(2) + "\n");
  } catch (...) {
    rollback();
    throw;
  }
  return manifest;
}

}  // namespace entrain
