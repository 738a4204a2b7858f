#pragma once

#include <string_view>

// Reference data compiled into the library so `reproduce` runs offline.
namespace entrain::fixtures {

// Mean raw logits per (model, condition), aggregate replay CSV format.
std::string_view cerebras_raw_logits_csv();
std::string_view pythia_raw_logits_csv();

// Five worked-example relations with three samples each.
std::string_view example_relations_json();
std::string_view random_vocab_txt();

}  // namespace entrain::fixtures
