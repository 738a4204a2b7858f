#include "entrain/metrics.hpp"

#include <algorithm>
#include <tuple>

#include <fmt/format.h>

#include "entrain/error.hpp"

namespace entrain {

EntrainmentRecord compute_entrainment(const LogitRecord& r) {
  EntrainmentRecord e;
  e.probe_id = r.probe_id;
  e.model = r.model;
  e.condition = r.condition;
  e.delta_gold = r.gold_ctx - r.gold_noctx;
  e.delta_dstr = r.dstr_ctx - r.dstr_noctx;
  e.delta_overall = e.delta_gold - e.delta_dstr;
  return e;
}

std::vector<JoinedRecord> join(std::span<const LogitRecord> records) {
  std::vector<JoinedRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r, compute_entrainment(r)});
  return out;
}

ConditionAggregate aggregate(std::span<const JoinedRecord> records,
                             const ModelSpec& model, ContextCondition condition) {
  std::vector<const JoinedRecord*> group;
  for (const auto& r : records) {
    if (r.raw.model == model.name && r.raw.condition == condition) group.push_back(&r);
  }
  if (group.empty()) {
    throw StatsError(fmt::format("no records for model '{}' condition '{}'", model.name,
                                 to_string(condition)));
  }
  // Canonical summation order makes the means independent of input order.
  auto key = [](const JoinedRecord* r) {
    return std::tie(r->raw.probe_id, r->raw.gold_ctx, r->raw.gold_noctx, r->raw.dstr_ctx,
                    r->raw.dstr_noctx);
  };
  std::sort(group.begin(), group.end(),
            [&](const auto* a, const auto* b) { return key(a) < key(b); });

  ConditionAggregate a;
  a.model = model.name;
  a.family = model.family;
  a.param_count = model.param_count;
  a.condition = condition;
  a.n = group.size();
  for (const auto* r : group) {
    a.dstr_no += r->raw.dstr_noctx;
    a.dstr_with += r->raw.dstr_ctx;
    a.delta_dstr += r->delta.delta_dstr;
    a.gold_no += r->raw.gold_noctx;
    a.gold_with += r->raw.gold_ctx;
    a.delta_gold += r->delta.delta_gold;
    a.overall_no += r->raw.gold_noctx - r->raw.dstr_noctx;
    a.overall_with += r->raw.gold_ctx - r->raw.dstr_ctx;
    a.delta_overall += r->delta.delta_overall;
  }
  const double n = static_cast<double>(a.n);
  for (double* v : {&a.dstr_no, &a.dstr_with, &a.delta_dstr, &a.gold_no, &a.gold_with,
                    &a.delta_gold, &a.overall_no, &a.overall_with, &a.delta_overall}) {
    *v /= n;
  }
  return a;
}

std::vector<ConditionAggregate> aggregate_all(std::span<const LogitRecord> records,
                                              std::span<const ModelSpec> models) {
  auto joined = join(records);
  for (const auto& r : records) {
    bool known = std::any_of(models.begin(), models.end(),
                             [&](const ModelSpec& m) { return m.name == r.model; });
    if (!known) throw ValidationError(fmt::format("records reference unknown model '{}'", r.model));
  }
  std::vector<const ModelSpec*> ordered;
  for (const auto& m : models) ordered.push_back(&m);
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return std::tie(a->family, a->param_count) < std::tie(b->family, b->param_count);
  });

  std::vector<ConditionAggregate> out;
  for (const auto* m : ordered) {
    for (auto c : kAllConditions) {
      bool any = std::any_of(records.begin(), records.end(), [&](const LogitRecord& r) {
        return r.model == m->name && r.condition == c;
      });
      if (any) out.push_back(aggregate(joined, *m, c));
    }
  }
  return out;
}

std::string aggregates_to_csv(std::span<const ConditionAggregate> aggregates, int decimals) {
  std::string out =
      "setting,model,param_count,n,dstr_no,dstr_with,dstr_delta,gold_no,gold_with,gold_delta,"
      "overall_no,overall_with,overall_delta\n";
  auto num = [&](double v) {
    return decimals >= 17 ? fmt::format("{}", v) : fmt::format("{:.{}f}", v, decimals);
  };
  for (const auto& a : aggregates) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", to_string(a.condition),
                       a.model, a.param_count, a.n, num(a.dstr_no), num(a.dstr_with),
                       num(a.delta_dstr), num(a.gold_no), num(a.gold_with), num(a.delta_gold),
                       num(a.overall_no), num(a.overall_with), num(a.delta_overall));
  }
  return out;
}

}  // namespace entrain
