#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "entrain/condition.hpp"

namespace entrain {

inline constexpr std::string_view kSubjectPlaceholder = "{subject}";
inline constexpr std::string_view kObjectPlaceholder = "{object}";

struct FactSample {
  std::string subject;
  std::string object;
  // Optional hand-written true statement used when this sample supplies
  // context for another probe; must contain `object`.
  std::optional<std::string> statement;

  bool operator==(const FactSample&) const = default;
};

struct Relation {
  std::string id;
  std::string name;
  std::string prompt_template;
  // Declarative form with {subject} and {object}. When absent, statements are
  // rendered as the filled prompt template followed by " <object>.".
  std::optional<std::string> context_template;
  std::vector<FactSample> samples;

  // Prompt with the subject filled and any trailing blank removed.
  std::string query_for(std::string_view subject) const;
  // Declarative sentence asserting `object` for `subject`, ending in a period.
  std::string statement_for(std::string_view subject,
                            std::string_view object) const;
  // The sample's own true statement (its override if present).
  std::string true_statement(const FactSample& sample) const;
};

struct ProbeInstance {
  std::string id;
  std::string relation_id;
  ContextCondition condition = ContextCondition::kRelated;
  std::string query_text;
  std::string context_text;
  std::string gold;
  std::string distractor;
  std::uint64_t seed_trace = 0;

  bool operator==(const ProbeInstance&) const = default;
};

struct RenderedPrompts {
  std::string with_context;
  std::string without_context;
};

// Relations file: JSON array of {"id","name","prompt_template",
// ["context_template"], "samples":[{"subject","object",["statement"]}]}.
std::vector<Relation> parse_relations(std::string_view json_text);
std::vector<Relation> load_relations(const std::filesystem::path& path);

// One word per line; blank lines and surrounding whitespace ignored.
std::vector<std::string> parse_vocabulary(std::string_view text);
std::vector<std::string> load_vocabulary(const std::filesystem::path& path);

std::vector<ProbeInstance> generate_probes(std::span<const Relation> relations,
                                           ContextCondition condition,
                                           std::size_t cap, std::uint64_t seed,
                                           std::span<const std::string> random_vocab);

RenderedPrompts render_prompts(const ProbeInstance& probe);

// Stable content hash over (relation_id, condition, subject, gold, distractor).
std::string probe_id(std::string_view relation_id, ContextCondition condition,
                     std::string_view subject, std::string_view gold,
                     std::string_view distractor);

// Empty string when the probe satisfies every per-condition invariant against
// `relations`, otherwise a description of the first violation.
std::string check_probe(const ProbeInstance& probe,
                        std::span<const Relation> relations);

std::string probe_to_jsonl(const ProbeInstance& probe);
std::string probes_to_jsonl(std::span<const ProbeInstance> probes);
std::vector<ProbeInstance> parse_probes_jsonl(std::string_view text);

}  // namespace entrain
