#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace entrain {

enum class ContextCondition { kRelated, kIrrelevant, kRandom, kCounterfactual };

// Fixed presentation order (heatmap rows, report tables).
inline constexpr std::array<ContextCondition, 4> kAllConditions = {
    ContextCondition::kRelated, ContextCondition::kIrrelevant,
    ContextCondition::kRandom, ContextCondition::kCounterfactual};

std::string_view to_string(ContextCondition c);
std::optional<ContextCondition> parse_condition(std::string_view name);

// Related and Counterfactual carry propositional content about the query.
constexpr bool is_semantic(ContextCondition c) {
  return c == ContextCondition::kRelated ||
         c == ContextCondition::kCounterfactual;
}

}  // namespace entrain
