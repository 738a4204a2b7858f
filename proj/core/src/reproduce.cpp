#include "entrain/reproduce.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "entrain/analysis.hpp"
#include "entrain/error.hpp"
#include "entrain/fixtures.hpp"
#include "entrain/logit_backend.hpp"
#include "entrain/metrics.hpp"
#include "entrain/relation_probe.hpp"
#include "entrain/student_t.hpp"

namespace entrain {
namespace {

struct Target {
  ContextCondition condition;
  double b;
  double r2;
  double ci_lo;
  double ci_hi;
};

constexpr double kBTol = 0.02;
constexpr double kR2Tol = 0.03;

using C = ContextCondition;

constexpr Target kCerebrasDstr[] = {
    {C::kCounterfactual, -0.330, 0.926, -0.44, -0.22},
    {C::kRelated, -0.135, 0.977, -0.16, -0.11},
    {C::kIrrelevant, 0.091, 0.879, 0.05, 0.13},
    {C::kRandom, 0.217, 0.905, 0.14, 0.30},
};

constexpr Target kCerebrasAdvantage[] = {
    {C::kCounterfactual, -0.392, 0.835, -0.59, -0.19},
    {C::kRelated, -0.514, 0.966, -0.63, -0.40},
    {C::kIrrelevant, 0.100, 0.896, 0.06, 0.14},
    {C::kRandom, 0.266, 0.931, 0.18, 0.35},
};

struct BTarget {
  ContextCondition condition;
  double b;
};

constexpr BTarget kPythiaDstr[] = {
    {C::kCounterfactual, -0.258},
    {C::kRelated, -0.089},
    {C::kIrrelevant, 0.078},
    {C::kRandom, 0.156},
};
constexpr double kPythiaCounterfactualR2Min = 0.99;

struct GapTarget {
  ContextCondition condition;
  GapDirection direction;
  double factor;
};

constexpr GapTarget kCerebrasGaps[] = {
    {C::kRelated, GapDirection::kConvergent, 10.3},
    {C::kRandom, GapDirection::kDivergent, 3.0},
    {C::kCounterfactual, GapDirection::kConvergent, 6.1},
};
constexpr double kGapTol = 0.2;

struct ExampleProbe {
  ContextCondition condition;
  std::string_view query;
  std::string_view context;
};

constexpr ExampleProbe kExamples[] = {
    {C::kCounterfactual, "The capital of Germany is", "The capital of Germany is Munich."},
    {C::kCounterfactual, "Sushi is a traditional dish from", "Sushi is a traditional dish from China."},
    {C::kCounterfactual, "The CEO of Tesla is", "The CEO of Tesla is Tim Cook."},
    {C::kCounterfactual, "The Colosseum is located in", "The Colosseum is located in Athens."},
    {C::kCounterfactual, "What color are lemons on the outside? They are",
     "On the outside, lemons are green."},
    {C::kRelated, "The capital of Germany is", "The capital of France is Paris."},
    {C::kRelated, "Sushi is a traditional dish from", "Tacos are a traditional dish from Mexico."},
    {C::kRelated, "The CEO of Tesla is", "The CEO of Amazon is Andy Jassy."},
    {C::kRelated, "The Colosseum is located in", "The Louvre is located in Paris."},
    {C::kRelated, "What color are lemons on the outside? They are",
     "On the outside, oranges are orange."},
};

std::vector<ConditionAggregate> aggregates_from_csv(const std::string& csv) {
  auto replay = parse_aggregate_csv(csv);
  return aggregate_all(replay.records, replay.models);
}

const PowerLawFit& require_fit(const FamilyAnalysis& fa, Metric m, ContextCondition c) {
  for (const auto& f : fa.fits) {
    if (f.metric == m && f.condition == c) {
      if (!f.fit) {
        throw StatsError(fmt::format("{} {} not fitted: {}", to_string(m), to_string(c), f.error));
      }
      return *f.fit;
    }
  }
  throw StatsError(fmt::format("{} {} missing", to_string(m), to_string(c)));
}

bool same_sign(double x, double y) { return (x > 0) == (y > 0) && x != 0 && y != 0; }

// Checks one metric's four fits against targets; returns per-condition notes.
bool match_targets(const FamilyAnalysis& fa, Metric m, std::span<const Target> targets,
                   std::vector<std::string>& notes) {
  bool ok = true;
  for (const auto& t : targets) {
    const auto& f = require_fit(fa, m, t.condition);
    const bool b_ok = std::fabs(f.b - t.b) <= kBTol && same_sign(f.b, t.b);
    const bool r2_ok = std::fabs(f.r_squared - t.r2) <= kR2Tol;
    const bool ci_ok = f.ci_lo <= t.ci_hi && t.ci_lo <= f.ci_hi;
    ok = ok && b_ok && r2_ok && ci_ok;
    notes.push_back(fmt::format("{} b={:+.3f} (target {:+.3f}) R2={:.3f} (target {:.3f}) CI [{:+.3f}, {:+.3f}]{}",
                                to_string(t.condition), f.b, t.b, f.r_squared, t.r2, f.ci_lo,
                                f.ci_hi, (b_ok && r2_ok && ci_ok) ? "" : " MISMATCH"));
  }
  return ok;
}


CheckResult guarded(int id, std::string name, const std::function<void(CheckResult&)>& body) {
  CheckResult r{id, std::move(name), false, ""};
  try {
    body(r);
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = fmt::format("could not run: {}", e.what());
  }
  return r;
}

// Density of Student's t, written out independently of the library CDF.
double t_density(double x, int df) {
  const double v = df;
  const double log_c = std::lgamma((v + 1) / 2) - std::lgamma(v / 2) - 0.5 * std::log(v * M_PI);
  return std::exp(log_c - (v + 1) / 2 * std::log1p(x * x / v));
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6 * (fa + 4 * flm + fm);
  const double right = (b - m) / 6 * (fm + 4 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15 * tol) return left + right + delta / 15;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2, depth - 1);
}

double integrated_t_cdf(double t, int df) {
  auto f = [df](double x) { return t_density(x, df); };
  const double hi = std::fabs(t);
  if (hi == 0) return 0.5;
  const double fa = f(0);
  const double fb = f(hi);
  const double fm = f(hi / 2);
  const double whole = hi / 6 * (fa + 4 * fm + fb);
  const double area = adaptive_simpson(f, 0, hi, fa, fm, fb, whole, 1e-12, 50);
  return t > 0 ? 0.5 + area : 0.5 - area;
}

std::vector<SeriesPoint> power_series(std::span<const std::uint64_t> ns, double a, double b,
                                      double sign) {
  std::vector<SeriesPoint> s;
  for (auto n : ns) s.push_back({n, sign * a * std::pow(static_cast<double>(n), b)});
  return s;
}

void property_suite(CheckResult& r, const ReproduceOptions& options) {
  std::vector<std::string> failures;
  constexpr std::uint64_t kNs[] = {111'000'000, 256'000'000, 590'000'000, 1'300'000'000,
                                   2'700'000'000, 6'700'000'000, 13'000'000'000};

  // Noiseless recovery.
  for (double b : {-0.5, -0.13, 0.0, 0.09, 0.27, 1.0}) {
    for (double sign : {1.0, -1.0}) {
      auto fit = fit_power_law(power_series(kNs, 3.7, b, sign), options.fit);
      if (std::fabs(fit.b - b) > 1e-10 || std::fabs(fit.a - 3.7) / 3.7 > 1e-10 ||
          fit.series_sign != static_cast<int>(sign)) {
        failures.push_back(fmt::format("recovery b={} sign={}", b, sign));
      }
    }
  }

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::uniform_real_distribution<double> unif(-0.6, 0.6);
  std::uniform_int_distribution<int> count(3, 10);

  // Invariance under positive scaling of E and N.
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SeriesPoint> s;
    const double b = unif(rng);
    for (std::uint64_t i = 0; i < 6; ++i) {
      const auto n = (i + 1) * 1'000'000'000ULL;
      s.push_back({n, 2.0 * std::pow(static_cast<double>(n), b) * std::pow(10.0, noise(rng))});
    }
    const auto base = fit_power_law(s, options.fit);
    auto scaled_e = s;
    for (auto& p : scaled_e) p.value *= 7.5;
    auto scaled_n = s;
    for (auto& p : scaled_n) p.n *= 4;
    const auto fe = fit_power_law(scaled_e, options.fit);
    const auto fn = fit_power_law(scaled_n, options.fit);
    auto close = [](double x, double y) { return std::fabs(x - y) <= 1e-9 * std::max(1.0, std::fabs(y)); };
    const bool ok = close(fe.b, base.b) && close(fe.r_squared, base.r_squared) &&
                    close(fe.se_b, base.se_b) && close(fe.a, base.a * 7.5) &&
                    close(fn.b, base.b) && close(fn.r_squared, base.r_squared) &&
                    close(fn.se_b, base.se_b) && close(fn.a, base.a * std::pow(4.0, -base.b));
    if (!ok) failures.push_back(fmt::format("invariance trial {}", trial));
  }

  // CI / p coherence.
  std::size_t incoherent = 0;
  for (std::size_t trial = 0; trial < options.property_trials; ++trial) {
    const int n = count(rng);
    const double b = unif(rng) * 0.2;
    std::vector<SeriesPoint> s;
    for (int i = 0; i < n; ++i) {
      const auto np = static_cast<std::uint64_t>(1e8 * std::pow(1.8, i));
      s.push_back({np, std::pow(static_cast<double>(np), b) * std::pow(10.0, noise(rng))});
    }
    const auto fit = fit_power_law(s, options.fit);
    const double alpha = 1.0 - options.fit.confidence;
    if (std::fabs(fit.p_value - alpha) < 1e-9) continue;
    const bool coherent = (fit.p_value < alpha) == fit.excludes_zero() && fit.ci_lo <= fit.b &&
                          fit.b <= fit.ci_hi && fit.p_value >= 0 && fit.p_value <= 1;
    if (!coherent) ++incoherent;
  }
  if (incoherent > 0) failures.push_back(fmt::format("{} incoherent CI/p series", incoherent));

  // Student-t CDF and quantile against direct integration of the density.
  double worst = 0;
  for (int df = 1; df <= 30; ++df) {
    for (double t : {-6.0, -2.5, -1.0, -0.3, 0.0, 0.4, 1.3, 2.0, 3.5, 8.0}) {
      worst = std::max(worst, std::fabs(student_t_cdf(t, df) - integrated_t_cdf(t, df)));
    }
    for (double p : {0.005, 0.025, 0.1, 0.5, 0.8, 0.975, 0.995}) {
      worst = std::max(worst, std::fabs(integrated_t_cdf(student_t_quantile(p, df), df) - p));
    }
  }
  if (worst > 1e-6) failures.push_back(fmt::format("t distribution error {:.2e}", worst));

  // Mixed signs must be rejected.
  std::vector<SeriesPoint> mixed = {{1'000, 1.0}, {2'000, -1.0}, {3'000, 2.0}};
  try {
    fit_power_law(mixed, options.fit);
    failures.push_back("mixed-sign series accepted");
  } catch (const StatsError&) {
  }

  r.pass = failures.empty();
  r.detail = r.pass ? fmt::format("recovery, invariance, {} CI/p series, t oracle max error {:.1e}, "
                                  "mixed-sign rejection",
                                  options.property_trials, worst)
                    : fmt::format("{}", fmt::join(failures, "; "));
}

void mock_end_to_end(CheckResult& r, const ReproduceInputs& in, const ReproduceOptions& options) {
  const auto relations = parse_relations(in.relations_json);
  const auto vocab = parse_vocabulary(in.vocab_txt);
  const ModelSpec model{"mock-1B", "mock", 1'000'000'000ULL, MockConfig{1.0, options.mock_boost}};

  auto run_once = [&](std::size_t concurrency) {
    auto probes = generate_probes(relations, ContextCondition::kRandom, 100000, options.seed, vocab);
    MockSource source(std::get<MockConfig>(model.backend));
    auto run = probe_model(source, model, probes, {concurrency, nullptr});
    if (!run.failures.empty()) {
      throw BackendError(fmt::format("{} mock probes failed", run.failures.size()), false);
    }
    return std::make_pair(probes_to_jsonl(probes) + records_to_jsonl(run.records), run.records);
  };

  auto [first_bytes, records] = run_once(1);
  auto [second_bytes, unused] = run_once(4);
  const auto joined = join(records);
  const auto agg = aggregate(joined, model, ContextCondition::kRandom);
  const bool exact = agg.delta_dstr == options.mock_boost && agg.delta_gold == 0.0;
  const bool identical = first_bytes == second_bytes;
  r.pass = exact && identical && agg.n > 0;
  r.detail = fmt::format("{} random probes, mean delta_dstr={} (boost {}), mean delta_gold={}, "
                         "double run {}",
                         agg.n, agg.delta_dstr, options.mock_boost, agg.delta_gold,
                         identical ? "byte-identical" : "DIFFERS");
}

void generator_conformance(CheckResult& r, const ReproduceInputs& in,
                           const ReproduceOptions& options) {
  const auto relations = parse_relations(in.relations_json);
  const auto vocab = parse_vocabulary(in.vocab_txt);
  std::vector<std::string> problems;
  std::vector<std::string> counts;
  std::vector<ProbeInstance> all;
  for (auto c : kAllConditions) {
    auto probes = generate_probes(relations, c, 100000, options.seed, vocab);
    counts.push_back(fmt::format("{}={}", to_string(c), probes.size()));
    if (probes.empty()) problems.push_back(fmt::format("no {} probes", to_string(c)));
    for (const auto& p : probes) {
      auto why = check_probe(p, relations);
      if (!why.empty()) problems.push_back(fmt::format("{}: {}", p.id, why));
    }
    all.insert(all.end(), probes.begin(), probes.end());
  }
  for (const auto& ex : kExamples) {
    const bool found = std::any_of(all.begin(), all.end(), [&](const ProbeInstance& p) {
      return p.condition == ex.condition && p.query_text == ex.query && p.context_text == ex.context;
    });
    if (!found) problems.push_back(fmt::format("missing {} example '{}'", to_string(ex.condition), ex.context));
  }
  r.pass = problems.empty();
  r.detail = r.pass ? fmt::format("{}; all invariants hold; {} worked examples reconstructed",
                                  fmt::join(counts, ", "), std::size(kExamples))
                    : fmt::format("{}", fmt::join(problems, "; "));
}

}  // namespace

ReproduceInputs ReproduceInputs::bundled() {
  return {std::string(fixtures::cerebras_raw_logits_csv()),
          std::string(fixtures::pythia_raw_logits_csv()),
          std::string(fixtures::example_relations_json()),
          std::string(fixtures::random_vocab_txt())};
}

std::vector<CheckResult> run_reproduction(const ReproduceInputs& in,
                                          const ReproduceOptions& options) {
  AnalysisOptions analysis;
  analysis.fit = options.fit;

  std::optional<FamilyAnalysis> cerebras;
  std::optional<FamilyAnalysis> pythia;
  std::string cerebras_error;
  std::string pythia_error;
  const auto start = std::chrono::steady_clock::now();
  try {
    cerebras = analyze_family(aggregates_from_csv(in.cerebras_csv), "cerebras", analysis);
  } catch (const std::exception& e) {
    cerebras_error = e.what();
  }
  const double cerebras_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  try {
    pythia = analyze_family(aggregates_from_csv(in.pythia_csv), "pythia", analysis);
  } catch (const std::exception& e) {
    pythia_error = e.what();
  }

  auto need = [](const std::optional<FamilyAnalysis>& fa, const std::string& err) -> const FamilyAnalysis& {
    if (!fa) throw ValidationError(err);
    return *fa;
  };

  std::vector<CheckResult> results;
  results.push_back(guarded(1, "cerebras distractor entrainment exponents", [&](CheckResult& r) {
    std::vector<std::string> notes;
    const bool ok = match_targets(need(cerebras, cerebras_error), Metric::kDeltaDstr, kCerebrasDstr, notes);
    const bool fast = cerebras_seconds < 1.0;
    r.pass = ok && fast;
    r.detail = fmt::format("{}; runtime {:.3f}s", fmt::join(notes, "; "), cerebras_seconds);
  }));

  results.push_back(guarded(2, "cerebras relative-advantage exponents", [&](CheckResult& r) {
    std::vector<std::string> notes;
    r.pass = match_targets(need(cerebras, cerebras_error), Metric::kDeltaOverall, kCerebrasAdvantage, notes);
    r.detail = fmt::format("{}", fmt::join(notes, "; "));
  }));

  results.push_back(guarded(3, "pythia distractor entrainment exponents", [&](CheckResult& r) {
    const auto& fa = need(pythia, pythia_error);
    std::vector<std::string> notes;
    bool ok = true;
    for (const auto& t : kPythiaDstr) {
      const auto& f = require_fit(fa, Metric::kDeltaDstr, t.condition);
      bool row_ok = std::fabs(f.b - t.b) <= kBTol && same_sign(f.b, t.b);
      if (t.condition == C::kCounterfactual) row_ok = row_ok && f.r_squared >= kPythiaCounterfactualR2Min;
      ok = ok && row_ok;
      notes.push_back(fmt::format("{} b={:+.3f} (target {:+.3f}) R2={:.3f}{}", to_string(t.condition),
                                  f.b, t.b, f.r_squared, row_ok ? "" : " MISMATCH"));
    }
    r.pass = ok;
    r.detail = fmt::format("{}", fmt::join(notes, "; "));
  }));

  results.push_back(guarded(4, "cerebras no-context gold baselines", [&](CheckResult& r) {
    const auto& bl = need(cerebras, cerebras_error).baselines;
    std::vector<std::string> notes;
    for (const auto& e : bl.entries) {
      if (e.gold_no.fit) {
        notes.push_back(fmt::format("{} b={:+.3f} R2={:.3f}", to_string(e.condition),
                                    e.gold_no.fit->b, e.gold_no.fit->r_squared));
      } else {
        notes.push_back(fmt::format("{} not fitted", to_string(e.condition)));
      }
    }
    r.pass = bl.all_gold_pass;
    r.detail = fmt::format("{}; band [{}, {}], R2 > {}", fmt::join(notes, "; "), bl.options.gold_b_lo,
                           bl.options.gold_b_hi, bl.options.gold_r2_min);
  }));

  results.push_back(guarded(5, "semantic/non-semantic sign split", [&](CheckResult& r) {
    std::vector<std::string> notes;
    bool ok = true;
    for (const auto* fa : {&need(cerebras, cerebras_error), &need(pythia, pythia_error)}) {
      if (!fa->sign_split) throw StatsError(fa->sign_split_error);
      const auto& s = *fa->sign_split;
      const bool fam_ok = s.semantic_negative && s.nonsemantic_positive && s.groups_separated;
      ok = ok && fam_ok;
      notes.push_back(fmt::format("{}: semantic<0 {}, non-semantic>0 {}, disjoint {}", fa->family,
                                  s.semantic_negative, s.nonsemantic_positive, s.groups_separated));
    }
    r.pass = ok;
    r.detail = fmt::format("{}", fmt::join(notes, "; "));
  }));

  results.push_back(guarded(6, "cerebras gap trajectories", [&](CheckResult& r) {
    const auto& fa = need(cerebras, cerebras_error);
    std::vector<std::string> notes;
    bool ok = true;
    for (const auto& t : kCerebrasGaps) {
      auto it = std::find_if(fa.trajectories.begin(), fa.trajectories.end(),
                             [&](const GapTrajectory& g) { return g.condition == t.condition; });
      if (it == fa.trajectories.end()) throw StatsError(fmt::format("no {} trajectory", to_string(t.condition)));
      const auto factor = it->change_factor();
      const bool row_ok = it->direction == t.direction && factor && std::fabs(*factor - t.factor) <= kGapTol;
      ok = ok && row_ok;
      notes.push_back(fmt::format("{} {} x{} (target {} x{}){}", to_string(t.condition),
                                  to_string(it->direction),
                                  factor ? fmt::format("{:.2f}", *factor) : "n/a",
                                  to_string(t.direction), t.factor, row_ok ? "" : " MISMATCH"));
    }
    r.pass = ok;
    r.detail = fmt::format("{}", fmt::join(notes, "; "));
  }));

  results.push_back(guarded(7, "fit and distribution property suite",
                            [&](CheckResult& r) { property_suite(r, options); }));
  results.push_back(guarded(8, "seeded mock end-to-end run",
                            [&](CheckResult& r) { mock_end_to_end(r, in, options); }));
  results.push_back(guarded(9, "generator conformance on worked examples",
                            [&](CheckResult& r) { generator_conformance(r, in, options); }));
  return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return !results.empty() &&
         std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass; });
}

std::string results_to_text(const std::vector<CheckResult>& results) {
  std::string out;
  for (const auto& r : results) {
    out += fmt::format("{} [{}] {}: {}\n", r.pass ? "PASS" : "FAIL", r.id, r.name, r.detail);
  }
  out += fmt::format("{} of {} checks passed\n",
                     std::count_if(results.begin(), results.end(), [](const auto& r) { return r.pass; }),
                     results.size());
  return out;
}

std::string results_to_json(const std::vector<CheckResult>& results) {
  nlohmann::ordered_json doc;
  doc["passed"] = all_passed(results);
  doc["checks"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    doc["checks"].push_back({{"id", r.id}, {"name", r.name}, {"pass", r.pass}, {"detail", r.detail}});
  }
  return doc.dump(2) + "\n";
}

}  // namespace entrain
