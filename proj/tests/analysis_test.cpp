#include <gtest/gtest.h>

#include <openssl/evp.h>

#include <fstream>
#include <map>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "entrain/analysis.hpp"
#include "entrain/error.hpp"
#include "entrain/io.hpp"
#include "support/oracle.hpp"
#include "support/reference_data.hpp"
#include "support/test_util.hpp"

using namespace entrain;

namespace {

std::size_t cond_index(ContextCondition c) {
  return static_cast<std::size_t>(std::find(kAllConditions.begin(), kAllConditions.end(), c) -
                                  kAllConditions.begin());
}

std::string sha256_of(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

std::vector<ConditionAggregate> synthetic(const std::vector<std::pair<double, double>>& gold_dstr_deltas,
                                          ContextCondition c = ContextCondition::kRelated) {
  std::vector<ConditionAggregate> out;
  std::uint64_t n = 100'000'000ULL;
  for (const auto& [dg, dd] : gold_dstr_deltas) {
    ConditionAggregate a;
    a.model = fmt::format("syn-{}", n);
    a.family = "syn";
    a.param_count = n;
    a.condition = c;
    a.n = 1;
    a.delta_gold = dg;
    a.delta_dstr = dd;
    a.delta_overall = dg - dd;
    out.push_back(a);
    n *= 3;
  }
  return out;
}

}  // namespace

TEST(GapTrajectory, CerebrasRelatedConverges) {
  const auto aggs = testutil::cerebras_aggregates();
  const auto t = gap_trajectory(aggs, ContextCondition::kRelated);
  const auto& rows = reference::cerebras().rows[0];
  const double expected = rows.front().gap() / rows.back().gap();
  ASSERT_TRUE(t.ratio_first_to_last.has_value());
  EXPECT_NEAR(*t.ratio_first_to_last, expected, 1e-9);
  EXPECT_NEAR(*t.ratio_first_to_last, 10.2, 0.05);
  EXPECT_EQ(t.direction, GapDirection::kConvergent);
  EXPECT_NEAR(*t.change_factor(), expected, 1e-9);
  ASSERT_EQ(t.points.size(), 7u);
  EXPECT_EQ(t.points.front().model, "cerebras-111M");
}

TEST(GapTrajectory, CerebrasRandomDiverges) {
  const auto aggs = testutil::cerebras_aggregates();
  const auto t = gap_trajectory(aggs, ContextCondition::kRandom);
  const auto& rows = reference::cerebras().rows[2];
  const double expected = rows.front().gap() / rows.back().gap();
  EXPECT_NEAR(*t.ratio_first_to_last, expected, 1e-9);
  EXPECT_NEAR(*t.ratio_first_to_last, 0.34, 0.01);
  EXPECT_EQ(t.direction, GapDirection::kDivergent);
  EXPECT_NEAR(*t.change_factor(), 1.0 / expected, 1e-9);
  EXPECT_NEAR(*t.change_factor(), 2.95, 0.02);
}

TEST(GapTrajectory, CerebrasCounterfactualFactor) {
  const auto aggs = testutil::cerebras_aggregates();
  const auto t = gap_trajectory(aggs, ContextCondition::kCounterfactual);
  EXPECT_EQ(t.direction, GapDirection::kConvergent);
  EXPECT_NEAR(*t.change_factor(), 6.07, 0.02);
}

TEST(GapTrajectory, ConstantGapIsFlat) {
  const auto aggs = synthetic({{1.0, 3.0}, {2.0, 4.0}, {0.5, 2.5}});
  const auto t = gap_trajectory(aggs, ContextCondition::kRelated);
  EXPECT_EQ(t.direction, GapDirection::kFlat);
  EXPECT_DOUBLE_EQ(*t.ratio_first_to_last, 1.0);
  EXPECT_DOUBLE_EQ(*t.change_factor(), 1.0);
}

TEST(GapTrajectory, SignCrossingHasNoRatio) {
  const auto aggs = synthetic({{1.0, 3.0}, {4.0, 2.0}});
  const auto t = gap_trajectory(aggs, ContextCondition::kRelated);
  EXPECT_EQ(t.direction, GapDirection::kSignCrossing);
  EXPECT_FALSE(t.ratio_first_to_last.has_value());
  EXPECT_FALSE(t.change_factor().has_value());
}

TEST(GapTrajectory, PythiaDirectionsMatchEndpoints) {
  const auto aggs = testutil::pythia_aggregates();
  for (auto c : kAllConditions) {
    const auto& rows = reference::pythia().rows[cond_index(c)];
    const double first = rows.front().gap();
    const double last = rows.back().gap();
    const auto t = gap_trajectory(aggs, c);
    if ((first > 0) != (last > 0)) {
      EXPECT_EQ(t.direction, GapDirection::kSignCrossing) << to_string(c);
    } else if (std::fabs(first / last) > 1) {
      EXPECT_EQ(t.direction, GapDirection::kConvergent) << to_string(c);
    } else {
      EXPECT_EQ(t.direction, GapDirection::kDivergent) << to_string(c);
    }
  }
}

TEST(GapTrajectory, NeedsTwoSizes) {
  const auto one = synthetic({{1.0, 3.0}});
  EXPECT_THROW(gap_trajectory(one, ContextCondition::kRelated), StatsError);
  const auto aggs = testutil::cerebras_aggregates();
  std::vector<ConditionAggregate> none;
  EXPECT_THROW(gap_trajectory(none, ContextCondition::kRelated), StatsError);
  (void)aggs;
}

TEST(GapTrajectory, ConsistentWithFittedDeltas) {
  const auto aggs = testutil::cerebras_aggregates();
  for (auto c : kAllConditions) {
    const auto t = gap_trajectory(aggs, c);
    const auto dstr = series_for(aggs, c, Metric::kDeltaDstr);
    const auto adv = series_for(aggs, c, Metric::kDeltaOverall);
    ASSERT_EQ(t.points.size(), dstr.size());
    for (std::size_t i = 0; i < dstr.size(); ++i) {
      EXPECT_EQ(t.points[i].param_count, dstr[i].n);
      EXPECT_DOUBLE_EQ(t.points[i].delta_dstr, dstr[i].value);
      EXPECT_NEAR(t.points[i].gap, -adv[i].value, 1e-12);
    }
  }
}

TEST(Heatmap, CerebrasShapeAndValues) {
  const auto aggs = testutil::cerebras_aggregates();
  const auto h = heatmap_matrix(aggs);
  ASSERT_EQ(h.rows.size(), 4u);
  ASSERT_EQ(h.columns.size(), 7u);
  EXPECT_NEAR(h.at(ContextCondition::kCounterfactual, "cerebras-111M"), 9.69, 0.015);
  const auto& f = reference::cerebras();
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t m = 0; m < f.models.size(); ++m) {
      EXPECT_NEAR(h.cells[c][m], f.rows[c][m].delta_dstr(), 1e-12);
    }
  }
  EXPECT_TRUE(std::is_sorted(h.column_params.begin(), h.column_params.end()));
}

TEST(Heatmap, PythiaRandomLargest) {
  const auto h = heatmap_matrix(testutil::pythia_aggregates());
  EXPECT_NEAR(h.at(ContextCondition::kRandom, "pythia-12B"), 2.78, 1e-9);
}

TEST(Heatmap, SingleSizeGivesOneColumn) {
  auto aggs = testutil::cerebras_aggregates();
  std::erase_if(aggs, [](const auto& a) { return a.model != "cerebras-2.7B"; });
  const auto h = heatmap_matrix(aggs);
  EXPECT_EQ(h.rows.size(), 4u);
  EXPECT_EQ(h.columns, (std::vector<std::string>{"cerebras-2.7B"}));
}

TEST(Heatmap, MissingCellIsReported) {
  auto aggs = testutil::cerebras_aggregates();
  std::erase_if(aggs, [](const auto& a) {
    return a.model == "cerebras-590M" && a.condition == ContextCondition::kRandom;
  });
  try {
    heatmap_matrix(aggs);
    FAIL() << "expected StatsError";
  } catch (const StatsError& e) {
    EXPECT_NE(std::string(e.what()).find("cerebras-590M"), std::string::npos) << e.what();
  }
}

TEST(Heatmap, CsvLayout) {
  const auto h = heatmap_matrix(testutil::cerebras_aggregates());
  const auto csv = h.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "condition,cerebras-111M,cerebras-256M,cerebras-590M,cerebras-1.3B,cerebras-2.7B,"
            "cerebras-6.7B,cerebras-13B");
}

TEST(AnalyzeFamily, CerebrasFitsMatchOracle) {
  const auto aggs = testutil::cerebras_aggregates();
  const auto fa = analyze_family(aggs, "cerebras");
  EXPECT_EQ(fa.family, "cerebras");
  ASSERT_TRUE(fa.sign_split.has_value());
  ASSERT_TRUE(fa.heatmap.has_value());
  EXPECT_EQ(fa.trajectories.size(), 4u);
  const auto& f = reference::cerebras();
  for (const auto& outcome : fa.fits) {
    if (outcome.metric != Metric::kDeltaDstr) continue;
    ASSERT_TRUE(outcome.fit.has_value());
    const auto o = oracle::loglog(f.n, reference::column(f, static_cast<int>(cond_index(outcome.condition)),
                                                     [](const reference::Row& r) { return r.delta_dstr(); }));
    EXPECT_NEAR(outcome.fit->b, o.slope, 1e-9);
    EXPECT_NEAR(outcome.fit->r_squared, o.r2, 1e-9);
  }
}

TEST(AnalyzeAll, FamiliesInFirstAppearanceOrder) {
  auto aggs = testutil::pythia_aggregates();
  const auto c = testutil::cerebras_aggregates();
  aggs.insert(aggs.end(), c.begin(), c.end());
  const auto all = analyze_all(aggs);
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].family, "pythia");
  EXPECT_EQ(all[1].family, "cerebras");
}

TEST(AnalyzeFamily, MixedSignSeriesRecordedAsError) {
  const auto fa = analyze_family(testutil::cerebras_aggregates(), "cerebras");
  const auto it = std::find_if(fa.fits.begin(), fa.fits.end(), [](const FitOutcome& o) {
    return o.metric == Metric::kOverallWith && o.condition == ContextCondition::kRelated;
  });
  ASSERT_NE(it, fa.fits.end());
  EXPECT_FALSE(it->fit.has_value());
  EXPECT_FALSE(it->error.empty());
}

TEST(Report, EmitsFilesWithMatchingManifest) {
  testutil::TempDir dir;
  const auto families = analyze_all(testutil::cerebras_aggregates());
  const auto manifest = emit_report(families, dir.path());
  EXPECT_GE(manifest.size(), 6u);
  for (const auto& e : manifest) {
    const auto content = read_file(dir / e.file);
    EXPECT_EQ(e.sha256, sha256_of(content)) << e.file;
    EXPECT_EQ(e.bytes, content.size()) << e.file;
  }
  const auto mj = nlohmann::json::parse(read_file(dir / "manifest.json"));
  ASSERT_EQ(mj.at("files").size(), manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    EXPECT_EQ(mj["files"][i]["file"], manifest[i].file);
    EXPECT_EQ(mj["files"][i]["sha256"], manifest[i].sha256);
  }
  const auto md = read_file(dir / "report.md");
  EXPECT_NE(md.find("cerebras"), std::string::npos);
  EXPECT_NE(md.find("-0.331"), std::string::npos);
  EXPECT_NE(md.find("counterfactual"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "heatmap.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "fits.json"));
}

TEST(Report, RepeatedRunsAreByteIdentical) {
  testutil::TempDir a, b;
  const auto families = analyze_all(testutil::cerebras_aggregates());
  ReportOptions opts;
  opts.formats.insert(ReportFormat::kSvg);
  const auto ma = emit_report(families, a.path(), opts);
  const auto mb = emit_report(analyze_all(testutil::cerebras_aggregates()), b.path(), opts);
  ASSERT_EQ(ma.size(), mb.size());
  for (std::size_t i = 0; i < ma.size(); ++i) {
    EXPECT_EQ(ma[i].file, mb[i].file);
    EXPECT_EQ(read_file(a / ma[i].file), read_file(b / mb[i].file)) << ma[i].file;
  }
  EXPECT_EQ(read_file(a / "manifest.json"), read_file(b / "manifest.json"));
}

TEST(Report, NoSuccessfulFitsWritesNothing) {
  testutil::TempDir dir;
  const auto families = analyze_all(synthetic({{1.0, 3.0}}));
  EXPECT_THROW(emit_report(families, dir / "out"), StatsError);
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "report.md"));
  EXPECT_FALSE(std::filesystem::exists(dir / "out" / "manifest.json"));
}

TEST(Report, UnwritableDirectoryFails) {
  testutil::TempDir dir;
  write_file_atomic(dir / "blocker", "x");
  const auto families = analyze_all(testutil::cerebras_aggregates());
  EXPECT_THROW(emit_report(families, dir / "blocker" / "out"), Error);
}

TEST(Report, FormatSelection) {
  const auto families = analyze_all(testutil::cerebras_aggregates());
  ReportOptions md_only;
  md_only.formats = {ReportFormat::kMarkdown};
  const auto files = render_report(families, md_only);
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].first, "report.md");
  ReportOptions json_only;
  json_only.formats = {ReportFormat::kJson};
  EXPECT_EQ(render_report(families, json_only).at(0).first, "fits.json");
}

TEST(Report, LoglogBandBracketsFit) {
  const auto families = analyze_all(testutil::cerebras_aggregates());
  const auto files = render_report(families);
  const auto it = std::find_if(files.begin(), files.end(),
                               [](const auto& f) { return f.first == "loglog_counterfactual.csv"; });
  ASSERT_NE(it, files.end());
  std::istringstream in(it->second);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "family,model,param_count,log10_n,log10_abs_e,fit_log10,band_lo,band_hi");
  int rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    ASSERT_EQ(f.size(), 8u);
    const double fit = std::stod(f[5]), lo = std::stod(f[6]), hi = std::stod(f[7]);
    EXPECT_LT(lo, fit);
    EXPECT_LT(fit, hi);
    ++rows;
  }
  EXPECT_EQ(rows, 7);
}

TEST(Report, FitsJsonFields) {
  const auto families = analyze_all(testutil::pythia_aggregates());
  const auto files = render_report(families);
  const auto it = std::find_if(files.begin(), files.end(), [](const auto& f) { return f.first == "fits.json"; });
  ASSERT_NE(it, files.end());
  const auto j = nlohmann::json::parse(it->second);
  ASSERT_TRUE(j.contains("fits"));
  ASSERT_FALSE(j["fits"].empty());
  for (const auto* key : {"family", "condition", "metric", "a", "b", "ci_lo", "ci_hi", "r2", "p"}) {
    EXPECT_TRUE(j["fits"][0].contains(key)) << key;
  }
  ASSERT_EQ(j["families"].size(), 1u);
  EXPECT_EQ(j["families"][0]["family"], "pythia");
  EXPECT_TRUE(j["families"][0].contains("trajectories"));
  EXPECT_TRUE(j["families"][0].contains("heatmap"));
}

TEST(MarkdownTable, ListsEveryCondition) {
  const auto fa = analyze_family(testutil::cerebras_aggregates(), "cerebras");
  const auto table = markdown_fit_table(fa.fits, Metric::kDeltaDstr);
  for (auto c : kAllConditions) {
    std::string name(to_string(c));
    name[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(name[0])));
    EXPECT_TRUE(table.find(to_string(c)) != std::string::npos || table.find(name) != std::string::npos) << name;
  }
}
