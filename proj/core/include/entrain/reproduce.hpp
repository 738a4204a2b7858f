#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "entrain/scaling_fit.hpp"

namespace entrain {

// Inputs to the reproduction checks. Defaults are the bundled fixtures; tests
// substitute perturbed copies to confirm the checks are sensitive.
struct ReproduceInputs {
  std::string cerebras_csv;
  std::string pythia_csv;
  std::string relations_json;
  std::string vocab_txt;

  static ReproduceInputs bundled();
};

struct ReproduceOptions {
  FitOptions fit;
  std::uint64_t seed = 20240607;
  double mock_boost = 2.5;
  std::size_t property_trials = 1000;
};

struct CheckResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
};

// Runs the nine reproduction checks in order. Never throws for data problems:
// a check that cannot run is reported as failed with the reason.
std::vector<CheckResult> run_reproduction(const ReproduceInputs& inputs,
                                          const ReproduceOptions& options = {});

bool all_passed(const std::vector<CheckResult>& results);

// "PASS [n] name: detail" per line.
std::string results_to_text(const std::vector<CheckResult>& results);
std::string results_to_json(const std::vector<CheckResult>& results);

}  // namespace entrain
