#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "entrain/condition.hpp"
#include "entrain/logit_backend.hpp"

namespace entrain {

struct EntrainmentRecord {
  std::string probe_id;
  std::string model;
  ContextCondition condition = ContextCondition::kRelated;
  double delta_gold = 0;
  double delta_dstr = 0;
  double delta_overall = 0;  // delta_gold - delta_dstr (relative advantage)
};

struct JoinedRecord {
  LogitRecord raw;
  EntrainmentRecord delta;
};

// Mirrors one row of the raw-logit tables: means over every probe of one
// (model, condition) group.
struct ConditionAggregate {
  std::string model;
  std::string family;
  std::uint64_t param_count = 0;
  ContextCondition condition = ContextCondition::kRelated;
  std::size_t n = 0;
  double dstr_no = 0;
  double dstr_with = 0;
  double delta_dstr = 0;
  double gold_no = 0;
  double gold_with = 0;
  double delta_gold = 0;
  double overall_no = 0;    // gold_no - dstr_no
  double overall_with = 0;  // gold_with - dstr_with
  double delta_overall = 0;
};

EntrainmentRecord compute_entrainment(const LogitRecord& record);
std::vector<JoinedRecord> join(std::span<const LogitRecord> records);

// Throws StatsError when no record matches (model.name, condition).
ConditionAggregate aggregate(std::span<const JoinedRecord> records,
                             const ModelSpec& model, ContextCondition condition);

// Every (model, condition) group present, ordered by param_count then
// condition. Records for models absent from `models` are a validation error.
std::vector<ConditionAggregate> aggregate_all(std::span<const LogitRecord> records,
                                              std::span<const ModelSpec> models);

// Header: setting,model,param_count,n,dstr_no,dstr_with,dstr_delta,gold_no,
// gold_with,gold_delta,overall_no,overall_with,overall_delta
std::string aggregates_to_csv(std::span<const ConditionAggregate> aggregates,
                              int decimals = 17);

}  // namespace entrain
