#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "entrain/error.hpp"
#include "entrain/fixtures.hpp"
#include "entrain/io.hpp"
#include "entrain/metrics.hpp"
#include "entrain/relation_probe.hpp"
#include "entrain/reproduce.hpp"

namespace entrain::cli {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::optional<ReportFormat> parse_format(std::string_view s) {
  if (s == "md") return ReportFormat::kMarkdown;
  if (s == "json") return ReportFormat::kJson;
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "svg") return ReportFormat::kSvg;
  return std::nullopt;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(fmt::format("config: field '{}' has the wrong type", key));
  }
}

BackendRef parse_backend(const json& j, const std::string& model) {
  if (j.is_null()) return HttpEndpoint{};
  if (j.is_string()) return HttpEndpoint{j.get<std::string>(), std::nullopt};
  if (!j.is_object()) throw ValidationError(fmt::format("config: model '{}': backend must be a string or object", model));
  const auto type = get_or<std::string>(j, "type", "http");
  if (type == "mock") {
    MockConfig m;
    m.base = get_or<double>(j, "base", m.base);
    m.boost = get_or<double>(j, "boost", m.boost);
    return m;
  }
  if (type == "replay") {
    if (!j.contains("path")) throw ValidationError(fmt::format("config: model '{}': replay backend needs 'path'", model));
    return ReplayRef{get_or<std::string>(j, "path", "")};
  }
  if (type == "http") {
    HttpEndpoint e{get_or<std::string>(j, "url", ""), std::nullopt};
    if (j.contains("token_env")) {
      const auto var = get_or<std::string>(j, "token_env", "");
      if (const char* v = std::getenv(var.c_str()); v != nullptr && *v != '\0') e.bearer_token = v;
    }
    return e;
  }
  throw ValidationError(fmt::format("config: model '{}': unknown backend type '{}'", model, type));
}

fs::path out_path(const RunConfig& c, std::string_view file) { return c.out / std::string(file); }

void ensure_out_dir(const RunConfig& c) {
  std::error_code ec;
  fs::create_directories(c.out, ec);
  if (ec || !fs::is_directory(c.out)) {
    throw IoError(fmt::format("cannot create output directory '{}'", c.out.string()));
  }
}

std::vector<Relation> relations_of(const RunConfig& c) {
  return c.relations ? load_relations(*c.relations)
                     : parse_relations(fixtures::example_relations_json());
}

std::vector<std::string> vocabulary_of(const RunConfig& c) {
  return c.vocabulary ? load_vocabulary(*c.vocabulary)
                      : parse_vocabulary(fixtures::random_vocab_txt());
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> cap;
  std::string backend_url;
  std::string replay;
  std::string out;
  std::optional<std::size_t> concurrency;
  std::vector<std::string> formats;
  bool json = false;
  std::string input;
  std::string cerebras;
  std::string pythia;
};

int cmd_generate(const RunConfig& c, const Flags& f, std::ostream& out) {
  const auto relations = relations_of(c);
  const auto vocab = vocabulary_of(c);
  std::vector<ProbeInstance> all;
  ojson counts = ojson::object();
  for (auto cond : c.conditions) {
    auto probes = generate_probes(relations, cond, c.cap, c.seed, vocab);
    counts[std::string(to_string(cond))] = probes.size();
    all.insert(all.end(), probes.begin(), probes.end());
  }
  ensure_out_dir(c);
  const auto path = out_path(c, "probes.jsonl");
  write_file_atomic(path, probes_to_jsonl(all));
  if (f.json) {
    ojson j{{"probes", path.string()}, {"counts", counts}, {"total", all.size()}};
    out << j.dump() << "\n";
  } else {
    for (const auto& [name, n] : counts.items()) out << fmt::format("{:<15} {}\n", name, n.get<std::size_t>());
    out << fmt::format("{:<15} {}\nwrote {}\n", "total", all.size(), path.string());
  }
  return 0;
}

int cmd_probe(RunConfig c, const Flags& f, std::ostream& out) {
  std::vector<LogitRecord> records;
  std::vector<std::pair<std::string, ProbeFailure>> failures;

  const bool csv_replay = !f.replay.empty() && fs::path(f.replay).extension() == ".csv";
  if (csv_replay) {
    // Aggregate rows are already per (model, condition) records.
    records = load_replay(f.replay).records;
  } else {
    if (!f.replay.empty()) {
      auto replay = load_replay(f.replay);
      if (c.models.empty()) c.models = replay.models;
      for (auto& m : c.models) m.backend = ReplayRef{f.replay};
    }
    if (c.models.empty()) throw ValidationError("probe: no models configured (use --config or --replay)");
    const fs::path probes_path = f.input.empty() ? out_path(c, "probes.jsonl") : fs::path(f.input);
    const auto probes = parse_probes_jsonl(read_file(probes_path));

    LogitCache cache = c.cache_dir ? LogitCache(*c.cache_dir) : LogitCache();
    for (const auto& m : c.models) {
      auto source = make_source(m);
      auto run = probe_model(*source, m, probes, {c.concurrency, &cache});
      records.insert(records.end(), run.records.begin(), run.records.end());
      for (auto& fl : run.failures) failures.emplace_back(m.name, std::move(fl));
    }
  }

  std::size_t transport = 0;
  std::size_t gaps = 0;
  ojson fj = ojson::array();
  for (const auto& [model, fl] : failures) {
    (fl.data_gap ? gaps : transport) += 1;
    fj.push_back({{"model", model},
                  {"probe_id", fl.probe_id},
                  {"kind", fl.data_gap ? "data_gap" : "transport"},
                  {"reason", fl.reason}});
  }
  ensure_out_dir(c);
  const auto rec_path = out_path(c, "records.jsonl");
  const auto fail_path = out_path(c, "failures.json");
  write_file_atomic(rec_path, records_to_jsonl(records));
  ojson manifest{{"failures", fj}, {"transport", transport}, {"data_gap", gaps}};
  write_file_atomic(fail_path, manifest.dump(2) + "\n");

  if (f.json) {
    out << ojson{{"records", records.size()}, {"transport_failures", transport},
                 {"data_gap_failures", gaps}, {"records_file", rec_path.string()},
                 {"failures_file", fail_path.string()}}
               .dump()
        << "\n";
  } else {
    out << fmt::format("{} records, {} transport failures, {} data gaps\nwrote {}\nwrote {}\n",
                       records.size(), transport, gaps, rec_path.string(), fail_path.string());
  }
  if (transport > 0) return static_cast<int>(ExitCode::kBackend);
  if (gaps > 0) return static_cast<int>(ExitCode::kDataGap);
  return 0;
}

std::vector<FamilyAnalysis> analyze_input(const RunConfig& c, const Flags& f) {
  fs::path input = !f.input.empty()    ? fs::path(f.input)
                   : !f.replay.empty() ? fs::path(f.replay)
                                       : out_path(c, "records.jsonl");
  auto replay = load_replay(input);
  // Configured specs override names, families and exact parameter counts.
  for (auto& m : replay.models) {
    auto it = std::find_if(c.models.begin(), c.models.end(),
                           [&](const ModelSpec& s) { return s.name == m.name; });
    if (it != c.models.end()) {
      m.family = it->family;
      m.param_count = it->param_count;
    }
  }
  const auto aggregates = aggregate_all(replay.records, replay.models);
  auto families = analyze_all(aggregates, c.analysis);

  std::vector<std::string> failed;
  for (const auto& fam : families) {
    for (const auto& fit : fam.fits) {
      if (fit.metric != Metric::kDeltaDstr || fit.fit) continue;
      const bool present = std::any_of(fam.aggregates.begin(), fam.aggregates.end(),
                                       [&](const auto& a) { return a.condition == fit.condition; });
      if (present) failed.push_back(fmt::format("{} {}: {}", fam.family, to_string(fit.condition), fit.error));
    }
  }
  if (!failed.empty()) throw StatsError(fmt::format("fit: {}", fmt::join(failed, "; ")));
  return families;
}

ojson fit_summary_json(const std::vector<FamilyAnalysis>& families, const RunConfig& c) {
  ojson arr = ojson::array();
  for (const auto& fam : families) {
    for (const auto& f : fam.fits) {
      if (!f.fit || (f.metric != Metric::kDeltaDstr && f.metric != Metric::kDeltaOverall)) continue;
      arr.push_back({{"family", fam.family},
                     {"metric", to_string(f.metric)},
                     {"condition", to_string(f.condition)},
                     {"b", f.fit->b},
                     {"ci_lo", f.fit->ci_lo},
                     {"ci_hi", f.fit->ci_hi},
                     {"r2", f.fit->r_squared},
                     {"p", f.fit->p_value},
                     {"strong", is_strong(*f.fit, c.analysis.strength)}});
    }
  }
  return arr;
}

ReportOptions report_options(const RunConfig& c) {
  ReportOptions o;
  o.formats = c.formats;
  o.strength = c.analysis.strength;
  return o;
}

int cmd_fit(const RunConfig& c, const Flags& f, std::ostream& out) {
  const auto families = analyze_input(c, f);
  const auto manifest = emit_report(families, c.out, report_options(c));
  if (f.json) {
    out << ojson{{"out", c.out.string()}, {"files", manifest.size() + 1},
                 {"fits", fit_summary_json(families, c)}}
               .dump()
        << "\n";
    return 0;
  }
  for (const auto& fam : families) {
    out << fmt::format("## {}\n\ndelta_dstr\n{}\nrelative advantage\n{}\n", fam.family,
                       markdown_fit_table(fam.fits, Metric::kDeltaDstr),
                       markdown_fit_table(fam.fits, Metric::kDeltaOverall));
  }
  out << fmt::format("wrote {} files to {}\n", manifest.size() + 1, c.out.string());
  return 0;
}

int cmd_report(const RunConfig& c, const Flags& f, std::ostream& out) {
  const auto families = analyze_input(c, f);
  const auto manifest = emit_report(families, c.out, report_options(c));
  if (f.json) {
    ojson files = ojson::array();
    for (const auto& m : manifest) files.push_back({{"file", m.file}, {"sha256", m.sha256}, {"bytes", m.bytes}});
    out << ojson{{"out", c.out.string()}, {"files", files}}.dump() << "\n";
    return 0;
  }
  for (const auto& m : manifest) out << fmt::format("{}  {:>8}  {}\n", m.sha256.substr(0, 16), m.bytes, m.file);
  out << fmt::format("wrote {} files and manifest.json to {}\n", manifest.size(), c.out.string());
  return 0;
}

int cmd_reproduce(const RunConfig& c, const Flags& f, std::ostream& out) {
  auto inputs = ReproduceInputs::bundled();
  if (!f.cerebras.empty()) inputs.cerebras_csv = read_file(f.cerebras);
  if (!f.pythia.empty()) inputs.pythia_csv = read_file(f.pythia);
  ReproduceOptions opts;
  opts.fit = c.analysis.fit;
  if (f.seed) opts.seed = *f.seed;
  const auto results = run_reproduction(inputs, opts);
  out << (f.json ? results_to_json(results) : results_to_text(results));
  return all_passed(results) ? 0 : static_cast<int>(ExitCode::kStatistical);
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(fmt::format("config: malformed JSON at line {}: {}",
                                  line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1), e.what()));
  }
  if (!j.is_object()) throw ValidationError("config: top level must be an object");

  RunConfig c;
  if (j.contains("relations")) c.relations = get_or<std::string>(j, "relations", "");
  if (j.contains("vocabulary")) c.vocabulary = get_or<std::string>(j, "vocabulary", "");
  if (j.contains("conditions")) {
    c.conditions.clear();
    for (const auto& name : get_or<std::vector<std::string>>(j, "conditions", {})) {
      auto cond = parse_condition(name);
      if (!cond) throw ValidationError(fmt::format("config: unknown condition '{}'", name));
      if (std::find(c.conditions.begin(), c.conditions.end(), *cond) == c.conditions.end()) {
        c.conditions.push_back(*cond);
      }
    }
  }
  c.cap = get_or<std::size_t>(j, "cap", c.cap);
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
  c.concurrency = get_or<std::size_t>(j, "concurrency", c.concurrency);
  if (j.contains("out")) c.out = get_or<std::string>(j, "out", "");
  if (j.contains("cache_dir")) c.cache_dir = get_or<std::string>(j, "cache_dir", "");

  if (j.contains("models")) {
    if (!j["models"].is_array()) throw ValidationError("config: 'models' must be an array");
    for (const auto& mj : j["models"]) {
      if (!mj.is_object() || !mj.contains("name")) throw ValidationError("config: each model needs a 'name'");
      ModelSpec m;
      m.name = get_or<std::string>(mj, "name", "");
      m.family = get_or<std::string>(mj, "family", family_of(m.name));
      const auto nominal = nominal_param_count(m.name);
      if (mj.contains("param_count")) {
        const auto v = get_or<double>(mj, "param_count", 0);
        if (!(v >= 1)) throw ValidationError(fmt::format("config: model '{}': param_count must be positive", m.name));
        m.param_count = static_cast<std::uint64_t>(std::llround(v));
      } else if (nominal) {
        m.param_count = *nominal;
      } else {
        throw ValidationError(fmt::format("config: model '{}': param_count missing and not inferable from the name", m.name));
      }
      m.backend = parse_backend(mj.contains("backend") ? mj["backend"] : json(), m.name);
      c.models.push_back(std::move(m));
    }
  }

  if (j.contains("thresholds")) {
    const auto& t = j["thresholds"];
    auto& s = c.analysis.strength;
    s.r2_strong = get_or<double>(t, "r2_strong", s.r2_strong);
    s.p_strong = get_or<double>(t, "p_strong", s.p_strong);
    auto& b = c.analysis.baseline;
    b.gold_b_lo = get_or<double>(t, "gold_b_lo", b.gold_b_lo);
    b.gold_b_hi = get_or<double>(t, "gold_b_hi", b.gold_b_hi);
    b.gold_r2_min = get_or<double>(t, "gold_r2_min", b.gold_r2_min);
    b.dstr_r2_max = get_or<double>(t, "dstr_r2_max", b.dstr_r2_max);
    b.dstr_p_min = get_or<double>(t, "dstr_p_min", b.dstr_p_min);
  }
  c.analysis.fit.confidence = get_or<double>(j, "confidence", c.analysis.fit.confidence);
  if (j.contains("critical_value")) {
    const auto cv = get_or<std::string>(j, "critical_value", "t");
    if (cv == "t") {
      c.analysis.fit.critical = CriticalValue::kStudentT;
    } else if (cv == "normal") {
      c.analysis.fit.critical = CriticalValue::kNormal;
    } else {
      throw ValidationError(fmt::format("config: critical_value must be 't' or 'normal', got '{}'", cv));
    }
  }
  if (j.contains("formats")) {
    c.formats.clear();
    for (const auto& s : get_or<std::vector<std::string>>(j, "formats", {})) {
      auto fmt_ = parse_format(s);
      if (!fmt_) throw ValidationError(fmt::format("config: unknown format '{}'", s));
      c.formats.insert(*fmt_);
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

void validate(const RunConfig& c) {
  if (c.cap < 1) throw ValidationError("cap must be at least 1");
  if (c.concurrency < 1) throw ValidationError("concurrency must be at least 1");
  if (c.conditions.empty()) throw ValidationError("at least one condition is required");
  if (c.formats.empty()) throw ValidationError("at least one output format is required");
  const auto& s = c.analysis.strength;
  if (!(s.r2_strong > 0 && s.r2_strong < 1)) throw ValidationError("r2_strong must lie in (0, 1)");
  if (!(s.p_strong > 0 && s.p_strong < 1)) throw ValidationError("p_strong must lie in (0, 1)");
  const auto& b = c.analysis.baseline;
  if (!(b.gold_b_lo <= b.gold_b_hi)) throw ValidationError("gold_b_lo must not exceed gold_b_hi");
  if (!(c.analysis.fit.confidence > 0 && c.analysis.fit.confidence < 1)) {
    throw ValidationError("confidence must lie in (0, 1)");
  }
  std::set<std::string> names;
  for (const auto& m : c.models) {
    if (!names.insert(m.name).second) throw ValidationError(fmt::format("duplicate model '{}'", m.name));
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Measure contextual entrainment and fit its scaling with model size.", "entrain"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags f;
  app.add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "RNG seed for probe sampling");
  app.add_option("--cap", f.cap, "Maximum probes per (relation, condition)")->check(CLI::PositiveNumber);
  app.add_option("--backend-url", f.backend_url, "Logit endpoint for HTTP models (else $ENTRAIN_BACKEND_URL)");
  app.add_option("--replay", f.replay, "Replay file: records .jsonl or aggregate .csv");
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--concurrency", f.concurrency, "In-flight backend requests")->check(CLI::PositiveNumber);
  app.add_option("--format", f.formats, "Report formats (repeatable or comma separated)")
      ->delimiter(',')
      ->allow_extra_args(false)
      ->check(CLI::IsMember({"md", "json", "csv", "svg"}));
  app.add_flag("--json", f.json, "Machine-readable output on stdout");

  auto* gen = app.add_subcommand("generate", "Generate probes for every configured condition");
  auto* probe = app.add_subcommand("probe", "Query logits for a probe file");
  probe->add_option("probes", f.input, "Probe JSONL (default <out>/probes.jsonl)");
  auto* fit = app.add_subcommand("fit", "Fit scaling laws and write the report directory");
  fit->add_option("records", f.input, "Records .jsonl or aggregate .csv (default <out>/records.jsonl)");
  auto* report = app.add_subcommand("report", "Write the report directory and list its manifest");
  report->add_option("records", f.input, "Records .jsonl or aggregate .csv (default <out>/records.jsonl)");
  auto* repro = app.add_subcommand("reproduce", "Check the bundled reference data against expected results");
  repro->add_option("--cerebras", f.cerebras, "Override the bundled Cerebras aggregate CSV");
  repro->add_option("--pythia", f.pythia, "Override the bundled Pythia aggregate CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const bool bad_value = dynamic_cast<const CLI::ValidationError*>(&e) != nullptr ||
                           dynamic_cast<const CLI::ConversionError*>(&e) != nullptr;
    return static_cast<int>(bad_value ? ExitCode::kValidation : ExitCode::kGeneric);
  }

  try {
    RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
    if (f.seed) c.seed = *f.seed;
    if (f.cap) c.cap = *f.cap;
    if (f.concurrency) c.concurrency = *f.concurrency;
    if (!f.out.empty()) c.out = f.out;
    if (!f.formats.empty()) {
      c.formats.clear();
      for (const auto& s : f.formats) c.formats.insert(*parse_format(s));
    }
    if (!f.backend_url.empty()) {
      for (auto& m : c.models) {
        if (auto* h = std::get_if<HttpEndpoint>(&m.backend)) h->url = f.backend_url;
      }
    }
    validate(c);

    if (gen->parsed()) return cmd_generate(c, f, out);
    if (probe->parsed()) return cmd_probe(c, f, out);
    if (fit->parsed()) return cmd_fit(c, f, out);
    if (report->parsed()) return cmd_report(c, f, out);
    if (repro->parsed()) return cmd_reproduce(c, f, out);
    err << "error: no subcommand\n";
    return static_cast<int>(ExitCode::kGeneric);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kValidation);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kGeneric);
  }
}

}  // namespace entrain::cli
