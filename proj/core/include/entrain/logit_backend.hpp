#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "entrain/condition.hpp"
#include "entrain/relation_probe.hpp"

namespace entrain {

inline constexpr std::string_view kBackendUrlEnv = "ENTRAIN_BACKEND_URL";
inline constexpr std::string_view kLogitsPath = "/v1/logits";

struct HttpEndpoint {
  std::string url;  // scheme://host[:port]
  std::optional<std::string> bearer_token;
};

struct ReplayRef {
  std::filesystem::path path;  // .jsonl records or .csv aggregate rows
};

// Scores every candidate `base`, plus `boost` when the candidate occurs in the
// prompt. Stands in for a model with a pure copying bias.
struct MockConfig {
  double base = 1.0;
  double boost = 2.5;
};

using BackendRef = std::variant<HttpEndpoint, ReplayRef, MockConfig>;

struct ModelSpec {
  std::string name;
  std::string family;
  std::uint64_t param_count = 0;
  BackendRef backend = MockConfig{};
};

// Nominal parameter count from a size label such as "111M", "1.3B" or
// "cerebras-6.7B"; nullopt when no label is found.
std::optional<std::uint64_t> nominal_param_count(std::string_view model_name);
// Family prefix of a model name ("pythia-1.4B" -> "pythia").
std::string family_of(std::string_view model_name);

enum class PromptSide { kWithContext, kWithoutContext };

struct LogitQuery {
  std::string prompt;
  std::vector<std::string> candidates;
  // Request metadata for replay lookups; never sent on the wire.
  std::string probe_id;
  PromptSide side = PromptSide::kWithoutContext;
};

struct LogitRecord {
  std::string probe_id;
  std::string model;
  ContextCondition condition = ContextCondition::kRelated;
  double gold_ctx = 0;
  double gold_noctx = 0;
  double dstr_ctx = 0;
  double dstr_noctx = 0;

  bool operator==(const LogitRecord&) const = default;
};

class LogitSource {
 public:
  virtual ~LogitSource() = default;
  // One finite logit per candidate, in candidate order.
  virtual std::vector<double> fetch(const LogitQuery& query) = 0;
  // Number of requests that reached the underlying transport.
  virtual std::uint64_t requests() const { return 0; }
};

class MockSource final : public LogitSource {
 public:
  explicit MockSource(MockConfig config) : config_(config) {}
  std::vector<double> fetch(const LogitQuery& query) override;
  std::uint64_t requests() const override { return requests_.load(); }

 private:
  MockConfig config_;
  std::atomic<std::uint64_t> requests_{0};
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
};

// POST /v1/logits {"prompt", "candidates"} -> {"logits": [...]}.
class HttpSource final : public LogitSource {
 public:
  explicit HttpSource(HttpEndpoint endpoint, RetryPolicy retry = {},
                      std::chrono::milliseconds timeout = std::chrono::seconds(60));
  std::vector<double> fetch(const LogitQuery& query) override;
  std::uint64_t requests() const override;

 private:
  HttpEndpoint endpoint_;
  RetryPolicy retry_;
  std::chrono::milliseconds timeout_;
  std::atomic<std::uint64_t> requests_{0};
};

// Serves pre-recorded LogitRecords keyed by probe id. Candidates are expected
// as [gold, distractor].
class ReplaySource final : public LogitSource {
 public:
  ReplaySource(std::string model, std::span<const LogitRecord> records);
  std::vector<double> fetch(const LogitQuery& query) override;

 private:
  std::map<std::string, LogitRecord, std::less<>> by_probe_;
};

std::unique_ptr<LogitSource> make_source(const ModelSpec& model);

// Request body exactly as sent on the wire.
std::string encode_logit_request(const LogitQuery& query);
// Validates length and finiteness; throws BackendError (non-retryable).
std::vector<double> decode_logit_response(std::string_view body,
                                          std::size_t expected_candidates);

std::vector<double> fetch_logits(const ModelSpec& model, const LogitQuery& query);

// Content-addressed query cache persisted as JSONL, one file per model.
class LogitCache {
 public:
  LogitCache() = default;  // in-memory only
  explicit LogitCache(std::filesystem::path dir);

  std::optional<std::vector<double>> get(std::string_view model, const LogitQuery& q) const;
  void put(std::string_view model, const LogitQuery& q, std::span<const double> logits);
  std::size_t size() const;

  static std::string key(std::string_view model, const LogitQuery& q);

 private:
  void load_file(const std::filesystem::path& file);

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::vector<double>, std::less<>> entries_;
};

struct ProbeFailure {
  std::string probe_id;
  std::string reason;
  bool data_gap = false;  // otherwise transport/protocol
};

struct ProbeRunOptions {
  std::size_t concurrency = 1;
  LogitCache* cache = nullptr;
};

struct ProbeRun {
  std::vector<LogitRecord> records;  // sorted by probe_id
  std::vector<ProbeFailure> failures;  // sorted by probe_id
};

ProbeRun probe_model(LogitSource& source, const ModelSpec& model,
                     std::span<const ProbeInstance> probes,
                     const ProbeRunOptions& options = {});

std::string record_to_jsonl(const LogitRecord& r);
std::string records_to_jsonl(std::span<const LogitRecord> records);
std::vector<LogitRecord> parse_records_jsonl(std::string_view text);

// Aggregate replay rows (header setting,model,param_count,dstr_no,dstr_with,
// gold_no,gold_with). Each row becomes one record with probe_id
// "<model>/<setting>".
struct AggregateReplay {
  std::vector<ModelSpec> models;  // in first-appearance order
  std::vector<LogitRecord> records;
};

AggregateReplay parse_aggregate_csv(std::string_view text);
AggregateReplay load_replay(const std::filesystem::path& path);

}  // namespace entrain
