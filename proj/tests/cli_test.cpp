#include <gtest/gtest.h>

#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "entrain/fixtures.hpp"
#include "entrain/io.hpp"
#include "entrain/logit_backend.hpp"
#include "entrain/relation_probe.hpp"
#include "support/test_util.hpp"

using entrain::cli::run;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string write(const testutil::TempDir& dir, const std::string& name, std::string_view content) {
  const auto p = dir / name;
  entrain::write_file_atomic(p, content);
  return p.string();
}

}  // namespace

TEST(Cli, HelpExitsZero) {
  const auto r = invoke({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("reproduce"), std::string::npos);
}

TEST(Cli, MissingSubcommandFails) {
  EXPECT_NE(invoke({}).code, 0);
}

TEST(Cli, GenerateCountsAndDeterminism) {
  testutil::TempDir a, b;
  const auto ra = invoke({"generate", "--out", a.path().string(), "--seed", "5", "--json"});
  ASSERT_EQ(ra.code, 0) << ra.err;
  const auto j = nlohmann::json::parse(ra.out);
  EXPECT_EQ(j["counts"]["related"], 30);
  EXPECT_EQ(j["counts"]["irrelevant"], 15);
  EXPECT_EQ(j["counts"]["random"], 15);
  EXPECT_EQ(j["counts"]["counterfactual"], 30);
  EXPECT_EQ(j["total"], 90);
  const auto rb = invoke({"generate", "--out", b.path().string(), "--seed", "5"});
  ASSERT_EQ(rb.code, 0);
  EXPECT_EQ(entrain::read_file(a / "probes.jsonl"), entrain::read_file(b / "probes.jsonl"));
}

TEST(Cli, GenerateHonoursCap) {
  testutil::TempDir d;
  const auto r = invoke({"generate", "--out", d.path().string(), "--cap", "1", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  for (const auto& [cond, n] : j["counts"].items()) EXPECT_EQ(n, 5) << cond;
  EXPECT_EQ(entrain::parse_probes_jsonl(entrain::read_file(d / "probes.jsonl")).size(), 20u);
}

TEST(Cli, InvalidFlagValuesExitTwo) {
  EXPECT_EQ(invoke({"generate", "--cap", "0"}).code, 2);
  EXPECT_EQ(invoke({"generate", "--cap", "abc"}).code, 2);
  EXPECT_EQ(invoke({"generate", "--concurrency", "0"}).code, 2);
  EXPECT_EQ(invoke({"generate", "--config", "/nonexistent.json"}).code, 2);
  EXPECT_EQ(invoke({"report", "--format", "pdf"}).code, 2);
}

TEST(Cli, BadConfigExitsTwo) {
  testutil::TempDir d;
  EXPECT_EQ(invoke({"generate", "--config", write(d, "a.json", "{ not json")}).code, 2);
  EXPECT_EQ(invoke({"generate", "--config", write(d, "b.json", R"({"cap": 0})")}).code, 2);
  EXPECT_EQ(invoke({"generate", "--config", write(d, "c.json", R"({"conditions": ["sideways"]})")}).code, 2);
  EXPECT_EQ(invoke({"generate", "--config", write(d, "d.json", R"({"thresholds": {"r2_strong": 1.5}})")}).code, 2);
  EXPECT_EQ(invoke({"generate", "--config",
                    write(d, "e.json", R"({"models": [{"name": "a-1B"}, {"name": "a-1B"}]})")}).code,
            2);
  EXPECT_EQ(invoke({"generate", "--config", write(d, "f.json", R"({"models": [{"name": "nosize"}]})")}).code, 2);
  EXPECT_EQ(invoke({"generate", "--config", write(d, "g.json", R"({"cap": "many"})")}).code, 2);
}

TEST(Cli, FlagsOverrideConfig) {
  testutil::TempDir d;
  const auto cfg = write(d, "cfg.json",
                         fmt::format(R"({{"cap": 50, "conditions": ["random"], "out": "{}"}})",
                                     (d / "from-config").string()));
  const auto r = invoke({"generate", "--config", cfg, "--cap", "1", "--out", (d / "from-flag").string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["total"], 5);
  EXPECT_EQ(j["counts"].size(), 1u);
  EXPECT_TRUE(fs::exists(d / "from-flag" / "probes.jsonl"));
  EXPECT_FALSE(fs::exists(d / "from-config"));
}

TEST(Cli, ProbeWithMockBackend) {
  testutil::TempDir d;
  const auto cfg = write(d, "cfg.json", R"({"conditions": ["random"], "cap": 1,
    "models": [{"name": "mock-1B", "backend": {"type": "mock"}},
               {"name": "mock-7B", "backend": {"type": "mock", "boost": 1.0}}]})");
  ASSERT_EQ(invoke({"generate", "--config", cfg, "--out", d.path().string()}).code, 0);
  const auto r = invoke({"probe", "--config", cfg, "--out", d.path().string(), "--concurrency", "3", "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["records"], 10);
  const auto recs = entrain::parse_records_jsonl(entrain::read_file(d / "records.jsonl"));
  ASSERT_EQ(recs.size(), 10u);
  for (const auto& rec : recs) {
    const double boost = rec.model == "mock-1B" ? 2.5 : 1.0;
    EXPECT_EQ(rec.dstr_ctx - rec.dstr_noctx, boost);
    EXPECT_EQ(rec.gold_ctx, rec.gold_noctx);
  }
}

TEST(Cli, ProbeWithoutModelsIsValidationError) {
  testutil::TempDir d;
  ASSERT_EQ(invoke({"generate", "--out", d.path().string(), "--cap", "1"}).code, 0);
  EXPECT_EQ(invoke({"probe", "--out", d.path().string()}).code, 2);
}

TEST(Cli, ProbeWithCsvReplay) {
  testutil::TempDir d;
  const auto csv = write(d, "cerebras.csv", entrain::fixtures::cerebras_raw_logits_csv());
  const auto r = invoke({"probe", "--replay", csv, "--out", d.path().string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["records"], 28);
  EXPECT_EQ(entrain::parse_records_jsonl(entrain::read_file(d / "records.jsonl")).size(), 28u);
}

TEST(Cli, UnreachableBackendExitsThree) {
  testutil::TempDir d;
  const auto cfg = write(d, "cfg.json", R"({"conditions": ["random"], "cap": 1,
    "models": [{"name": "remote-1B", "backend": {"type": "http", "url": "http://127.0.0.1:1"}}]})");
  ASSERT_EQ(invoke({"generate", "--config", cfg, "--out", d.path().string()}).code, 0);
  const auto probes = entrain::parse_probes_jsonl(entrain::read_file(d / "probes.jsonl"));
  entrain::write_file_atomic(d / "one.jsonl", entrain::probe_to_jsonl(probes.front()) + "\n");
  const auto r = invoke({"probe", "--config", cfg, "--out", d.path().string(), (d / "one.jsonl").string()});
  EXPECT_EQ(r.code, 3) << r.err;
  const auto failures = nlohmann::json::parse(entrain::read_file(d / "failures.json"));
  EXPECT_EQ(failures["transport"], 1);
  EXPECT_EQ(failures["failures"][0]["kind"], "transport");
}

TEST(Cli, BackendUrlFlagOverridesConfig) {
  testutil::TempDir d;
  const auto cfg = write(d, "cfg.json", R"({"conditions": ["random"], "cap": 1,
    "models": [{"name": "remote-1B", "backend": "http://127.0.0.1:1"}]})");
  ASSERT_EQ(invoke({"generate", "--config", cfg, "--out", d.path().string()}).code, 0);
  const auto probes = entrain::parse_probes_jsonl(entrain::read_file(d / "probes.jsonl"));
  entrain::write_file_atomic(d / "one.jsonl", entrain::probe_to_jsonl(probes.front()) + "\n");
  // An empty configured URL with no environment fallback is a validation failure.
  const auto no_url = write(d, "nourl.json", R"({"models": [{"name": "remote-1B", "backend": {"type": "http"}}]})");
  const char* env = std::getenv("ENTRAIN_BACKEND_URL");
  if (env == nullptr) {
    EXPECT_EQ(invoke({"probe", "--config", no_url, "--out", d.path().string(), (d / "one.jsonl").string()}).code, 2);
  }
  const auto r = invoke({"probe", "--config", no_url, "--backend-url", "http://127.0.0.1:1", "--out",
                         d.path().string(), (d / "one.jsonl").string()});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, MissingReplayRecordsExitFour) {
  testutil::TempDir d;
  ASSERT_EQ(invoke({"generate", "--out", d.path().string(), "--cap", "1", "--seed", "3"}).code, 0);
  const auto probes = entrain::parse_probes_jsonl(entrain::read_file(d / "probes.jsonl"));
  std::vector<entrain::LogitRecord> recs;
  for (std::size_t i = 0; i + 1 < probes.size(); ++i) {
    recs.push_back({probes[i].id, "rep-1B", probes[i].condition, 1.0, 0.5, 3.0, 1.0});
  }
  const auto replay = write(d, "recs.jsonl", entrain::records_to_jsonl(recs));
  const auto r = invoke({"probe", "--replay", replay, "--out", d.path().string(), "--json"});
  EXPECT_EQ(r.code, 4) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["records"], probes.size() - 1);
  EXPECT_EQ(j["data_gap_failures"], 1);
}

TEST(Cli, FitOnCerebrasAndPythia) {
  for (auto csv : {entrain::fixtures::cerebras_raw_logits_csv(), entrain::fixtures::pythia_raw_logits_csv()}) {
    testutil::TempDir d;
    const auto path = write(d, "rows.csv", csv);
    const auto r = invoke({"fit", path, "--out", (d / "out").string(), "--json"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_GE(j["fits"].size(), 4u);
    EXPECT_TRUE(fs::exists(d / "out" / "report.md"));
    EXPECT_TRUE(fs::exists(d / "out" / "manifest.json"));
  }
}

TEST(Cli, FitTextShowsTables) {
  testutil::TempDir d;
  const auto path = write(d, "rows.csv", entrain::fixtures::cerebras_raw_logits_csv());
  const auto r = invoke({"fit", "--replay", path, "--out", (d / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("-0.331"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("relative advantage"), std::string::npos);
}

TEST(Cli, FitOnTwoSizesIsStatisticalError) {
  testutil::TempDir d;
  const auto cfg = write(d, "cfg.json", R"({"conditions": ["random"], "cap": 1,
    "models": [{"name": "mock-1B", "backend": {"type": "mock"}},
               {"name": "mock-7B", "backend": {"type": "mock"}}]})");
  ASSERT_EQ(invoke({"generate", "--config", cfg, "--out", d.path().string()}).code, 0);
  ASSERT_EQ(invoke({"probe", "--config", cfg, "--out", d.path().string()}).code, 0);
  EXPECT_EQ(invoke({"fit", "--config", cfg, "--out", d.path().string()}).code, 5);
}

TEST(Cli, ReportFormatSelection) {
  testutil::TempDir d;
  const auto path = write(d, "rows.csv", entrain::fixtures::cerebras_raw_logits_csv());
  const auto r = invoke({"report", path, "--format", "md", "--out", (d / "out").string(), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j["files"].size(), 1u);
  EXPECT_EQ(j["files"][0]["file"], "report.md");
  EXPECT_FALSE(fs::exists(d / "out" / "fits.json"));

  const auto all = invoke({"report", path, "--format", "md,json,csv,svg", "--out", (d / "all").string()});
  ASSERT_EQ(all.code, 0) << all.err;
  EXPECT_TRUE(fs::exists(d / "all" / "loglog.svg"));
  EXPECT_TRUE(fs::exists(d / "all" / "heatmap.csv"));
}

TEST(Cli, ReproducePasses) {
  const auto r = invoke({"reproduce"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("9 of 9"), std::string::npos) << r.out;
  const auto rj = invoke({"reproduce", "--json"});
  ASSERT_EQ(rj.code, 0);
  const auto j = nlohmann::json::parse(rj.out);
  EXPECT_TRUE(j["passed"].get<bool>());
  EXPECT_EQ(j["checks"].size(), 9u);
}

TEST(Cli, ReproduceDetectsPerturbedData) {
  testutil::TempDir d;
  const auto path = write(d, "cerebras.csv", testutil::perturb_csv(entrain::fixtures::cerebras_raw_logits_csv(), "counterfactual", "cerebras-13B", 4, 1.0));
  const auto r = invoke({"reproduce", "--cerebras", path, "--json"});
  EXPECT_EQ(r.code, 5);
  EXPECT_FALSE(nlohmann::json::parse(r.out)["passed"].get<bool>());
}

TEST(Cli, FormatFlagDoesNotSwallowPositional) {
  testutil::TempDir d;
  const auto path = write(d, "rows.csv", entrain::fixtures::pythia_raw_logits_csv());
  const auto r = invoke({"fit", "--format", "md,svg", path, "--out", (d / "out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d / "out" / "report.md"));
  EXPECT_TRUE(fs::exists(d / "out" / "loglog.svg"));
  EXPECT_FALSE(fs::exists(d / "out" / "fits.json"));
  const auto twice = invoke({"report", "--format", "md", "--format", "json", path, "--out", (d / "two").string()});
  ASSERT_EQ(twice.code, 0) << twice.err;
  EXPECT_TRUE(fs::exists(d / "two" / "fits.json"));
  EXPECT_TRUE(fs::exists(d / "two" / "report.md"));
}
