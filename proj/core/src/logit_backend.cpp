#include "entrain/logit_backend.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "entrain/error.hpp"
#include "entrain/hashing.hpp"
#include "entrain/io.hpp"

namespace entrain {
namespace {

using ojson = nlohmann::ordered_json;

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view strip_cr(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

double parse_double(std::string_view field, std::size_t line) {
  std::string tmp(field);
  char* end = nullptr;
  double v = std::strtod(tmp.c_str(), &end);
  if (tmp.empty() || end != tmp.c_str() + tmp.size() || !std::isfinite(v)) {
    throw FormatError(fmt::format("replay csv: line {}: bad number '{}'", line, field));
  }
  return v;
}

ModelSpec model_from_name(const std::string& name, BackendRef backend) {
  ModelSpec m;
  m.name = name;
  m.family = family_of(name);
  m.param_count = nominal_param_count(name).value_or(0);
  m.backend = std::move(backend);
  return m;
}

}  // namespace

std::optional<std::uint64_t> nominal_param_count(std::string_view model_name) {
  static const std::regex kSize(R"((\d+(?:\.\d+)?)([KMBT])(?![A-Za-z]))");
  std::string name(model_name);
  std::optional<std::uint64_t> found;
  for (auto it = std::sregex_iterator(name.begin(), name.end(), kSize);
       it != std::sregex_iterator(); ++it) {
    double value = std::stod((*it)[1].str());
    double scale = 1;
    switch ((*it)[2].str()[0]) {
      case 'K': scale = 1e3; break;
      case 'M': scale = 1e6; break;
      case 'B': scale = 1e9; break;
      case 'T': scale = 1e12; break;
    }
    found = static_cast<std::uint64_t>(std::llround(value * scale));
  }
  return found;
}

std::string family_of(std::string_view model_name) {
  auto dash = model_name.find('-');
  return std::string(dash == std::string_view::npos ? model_name : model_name.substr(0, dash));
}

std::vector<double> MockSource::fetch(const LogitQuery& query) {
  ++requests_;
  std::vector<double> out;
  out.reserve(query.candidates.size());
  for (const auto& c : query.candidates) {
    bool present = query.prompt.find(c) != std::string::npos;
    out.push_back(config_.base + (present ? config_.boost : 0.0));
  }
  return out;
}

std::string encode_logit_request(const LogitQuery& query) {
  ojson j;
  j["prompt"] = query.prompt;
  j["candidates"] = query.candidates;
  return j.dump();
}

std::vector<double> decode_logit_response(std::string_view body,
                                          std::size_t expected_candidates) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw BackendError(fmt::format("protocol error: response is not JSON: {}", e.what()), false);
  }
  if (!j.is_object() || !j.contains("logits") || !j["logits"].is_array()) {
    throw BackendError("protocol error: response lacks a \"logits\" array", false);
  }
  const auto& arr = j["logits"];
  if (arr.size() != expected_candidates) {
    throw BackendError(fmt::format("protocol error: expected {} logits, got {}",
                                   expected_candidates, arr.size()),
                       false);
  }
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      throw BackendError("protocol error: non-finite logit in response", false);
    }
    out.push_back(v.get<double>());
  }
  return out;
}

HttpSource::HttpSource(HttpEndpoint endpoint, RetryPolicy retry,
                       std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), retry_(retry), timeout_(timeout) {
  if (endpoint_.url.empty()) {
    if (const char* env = std::getenv(std::string(kBackendUrlEnv).c_str())) endpoint_.url = env;
  }
  if (endpoint_.url.empty()) {
    throw ValidationError(fmt::format("no backend URL configured and {} is unset", kBackendUrlEnv));
  }
}

std::uint64_t HttpSource::requests() const { return requests_.load(); }

std::vector<double> HttpSource::fetch(const LogitQuery& query) {
  const auto body = encode_logit_request(query);
  httplib::Headers headers;
  if (endpoint_.bearer_token) {
    headers.emplace("Authorization", "Bearer " + *endpoint_.bearer_token);
  }

  auto backoff = retry_.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
    httplib::Client client(endpoint_.url);
    auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
    auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    ++requests_;
    auto res = client.Post(std::string(kLogitsPath), headers, body, "application/json");
    if (!res) {
      last_error = fmt::format("transport error: {}", httplib::to_string(res.error()));
    } else if (res->status == 200) {
      return decode_logit_response(res->body, query.candidates.size());
    } else if (res->status >= 400 && res->status < 500) {
      throw BackendError(fmt::format("HTTP {} from backend: {}", res->status, res->body), false);
    } else {
      last_error = fmt::format("HTTP {} from backend", res->status);
    }
    if (attempt < retry_.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw BackendError(fmt::format("{} (after {} attempts)", last_error, retry_.attempts), true);
}

ReplaySource::ReplaySource(std::string model, std::span<const LogitRecord> records) {
  for (const auto& r : records) {
    if (r.model == model) by_probe_.insert_or_assign(r.probe_id, r);
  }
}

std::vector<double> ReplaySource::fetch(const LogitQuery& query) {
  auto it = by_probe_.find(query.probe_id);
  if (it == by_probe_.end()) {
    throw DataGapError(query.probe_id,
                       fmt::format("probe '{}' missing from replay data", query.probe_id));
  }
  if (query.candidates.size() != 2) {
    throw DataGapError(query.probe_id,
                       fmt::format("probe '{}': replay serves exactly [gold, distractor]",
                                   query.probe_id));
  }
  const auto& r = it->second;
  if (query.side == PromptSide::kWithContext) return {r.gold_ctx, r.dstr_ctx};
  return {r.gold_noctx, r.dstr_noctx};
}

std::unique_ptr<LogitSource> make_source(const ModelSpec& model) {
  return std::visit(
      [&](const auto& ref) -> std::unique_ptr<LogitSource> {
        using T = std::decay_t<decltype(ref)>;
        if constexpr (std::is_same_v<T, MockConfig>) {
          return std::make_unique<MockSource>(ref);
        } else if constexpr (std::is_same_v<T, HttpEndpoint>) {
          return std::make_unique<HttpSource>(ref);
        } else {
          auto replay = load_replay(ref.path);
          return std::make_unique<ReplaySource>(model.name, replay.records);
        }
      },
      model.backend);
}

std::vector<double> fetch_logits(const ModelSpec& model, const LogitQuery& query) {
  if (query.candidates.empty()) throw ValidationError("logit query without candidates");
  std::set<std::string_view> distinct(query.candidates.begin(), query.candidates.end());
  if (distinct.size() != query.candidates.size()) {
    throw ValidationError("logit query candidates must be pairwise distinct");
  }
  return make_source(model)->fetch(query);
}

LogitCache::LogitCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(*dir_, ec);
  if (ec) throw IoError(fmt::format("cannot create cache directory '{}'", dir_->string()));
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(*dir_)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) load_file(f);
}

void LogitCache::load_file(const std::filesystem::path& file) {
  auto text = read_file(file);
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) break;  // torn trailing write
    auto line = std::string_view(text).substr(start, end - start);
    start = end + 1;
    try {
      auto j = nlohmann::json::parse(line);
      entries_.insert_or_assign(j.at("key").get<std::string>(),
                                j.at("logits").get<std::vector<double>>());
    } catch (const nlohmann::json::exception&) {
      continue;
    }
  }
}

std::string LogitCache::key(std::string_view model, const LogitQuery& q) {
  std::string material = fmt::format("{}\x1f{}", model, q.prompt);
  for (const auto& c : q.candidates) {
    material += '\x1e';
    material += c;
  }
  return sha256_hex(material);
}

std::optional<std::vector<double>> LogitCache::get(std::string_view model,
                                                   const LogitQuery& q) const {
  auto k = key(model, q);
  std::lock_guard lock(mu_);
  auto it = entries_.find(k);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void LogitCache::put(std::string_view model, const LogitQuery& q,
                     std::span<const double> logits) {
  auto k = key(model, q);
  std::vector<double> values(logits.begin(), logits.end());
  std::lock_guard lock(mu_);
  if (dir_) {
    ojson j;
    j["key"] = k;
    j["model"] = model;
    j["prompt"] = q.prompt;
    j["candidates"] = q.candidates;
    j["logits"] = values;
    auto file = *dir_ / (sha256_hex(model).substr(0, 16) + ".jsonl");
    std::ofstream out(file, std::ios::app | std::ios::binary);
    if (!out) throw IoError(fmt::format("cannot append to cache '{}'", file.string()));
    out << j.dump() << '\n';
  }
  entries_.insert_or_assign(std::move(k), std::move(values));
}

std::size_t LogitCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

ProbeRun probe_model(LogitSource& source, const ModelSpec& model,
                     std::span<const ProbeInstance> probes,
                     const ProbeRunOptions& options) {
  struct Slot {
    std::optional<LogitRecord> record;
    std::optional<ProbeFailure> failure;
  };
  std::vector<Slot> slots(probes.size());

  auto query = [&](const LogitQuery& q) {
    if (options.cache) {
      if (auto hit = options.cache->get(model.name, q)) return *hit;
    }
    auto logits = source.fetch(q);
    if (logits.size() != q.candidates.size()) {
      throw BackendError("protocol error: wrong number of logits", false);
    }
    for (double v : logits) {
      if (!std::isfinite(v)) throw BackendError("protocol error: non-finite logit", false);
    }
    if (options.cache) options.cache->put(model.name, q, logits);
    return logits;
  };

  auto run_one = [&](std::size_t i) {
    const auto& p = probes[i];
    try {
      auto prompts = render_prompts(p);
      std::vector<std::string> candidates{p.gold, p.distractor};
      auto with = query({prompts.with_context, candidates, p.id, PromptSide::kWithContext});
      auto without = query({prompts.without_context, candidates, p.id, PromptSide::kWithoutContext});
      slots[i].record = LogitRecord{p.id, model.name, p.condition,
                                    with[0], without[0], with[1], without[1]};
    } catch (const DataGapError& e) {
      slots[i].failure = ProbeFailure{p.id, e.what(), true};
    } catch (const Error& e) {
      slots[i].failure = ProbeFailure{p.id, e.what(), false};
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(probes.size(), 1));
  if (workers == 1) {
    for (std::size_t i = 0; i < probes.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (auto i = next++; i < probes.size(); i = next++) run_one(i);
      });
    }
  }

  ProbeRun run;
  for (auto& s : slots) {
    if (s.record) run.records.push_back(std::move(*s.record));
    if (s.failure) run.failures.push_back(std::move(*s.failure));
  }
  std::sort(run.records.begin(), run.records.end(),
            [](const auto& a, const auto& b) { return a.probe_id < b.probe_id; });
  std::sort(run.failures.begin(), run.failures.end(),
            [](const auto& a, const auto& b) { return a.probe_id < b.probe_id; });
  return run;
}

std::string record_to_jsonl(const LogitRecord& r) {
  ojson j;
  j["probe_id"] = r.probe_id;
  j["model"] = r.model;
  j["condition"] = to_string(r.condition);
  j["gold_ctx"] = r.gold_ctx;
  j["gold_noctx"] = r.gold_noctx;
  j["dstr_ctx"] = r.dstr_ctx;
  j["dstr_noctx"] = r.dstr_noctx;
  return j.dump();
}

std::string records_to_jsonl(std::span<const LogitRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_jsonl(r);
    out += '\n';
  }
  return out;
}

std::vector<LogitRecord> parse_records_jsonl(std::string_view text) {
  std::vector<LogitRecord> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = strip_cr(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      LogitRecord r;
      r.probe_id = j.at("probe_id").get<std::string>();
      r.model = j.at("model").get<std::string>();
      auto cond = parse_condition(j.at("condition").get<std::string>());
      if (!cond) throw FormatError("unknown condition");
      r.condition = *cond;
      r.gold_ctx = j.at("gold_ctx").get<double>();
      r.gold_noctx = j.at("gold_noctx").get<double>();
      r.dstr_ctx = j.at("dstr_ctx").get<double>();
      r.dstr_noctx = j.at("dstr_noctx").get<double>();
      for (double v : {r.gold_ctx, r.gold_noctx, r.dstr_ctx, r.dstr_noctx}) {
        if (!std::isfinite(v)) throw FormatError("non-finite logit");
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(fmt::format("records: line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

AggregateReplay parse_aggregate_csv(std::string_view text) {
  static constexpr std::string_view kHeader =
      "setting,model,param_count,dstr_no,dstr_with,gold_no,gold_with";
  AggregateReplay out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool header_seen = false;
  std::set<std::string> seen_ids;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = strip_cr(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty() || line.front() == '#') continue;
    if (!header_seen) {
      if (line != kHeader) {
        throw FormatError(fmt::format("replay csv: line {}: expected header '{}'", line_no, kHeader));
      }
      header_seen = true;
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != 7) {
      throw FormatError(fmt::format("replay csv: line {}: expected 7 fields, got {}", line_no, f.size()));
    }
    auto cond = parse_condition(strip_cr(f[0]));
    if (!cond) {
      throw FormatError(fmt::format("replay csv: line {}: unknown setting '{}'", line_no, f[0]));
    }
    std::string model(strip_cr(f[1]));
    double params = parse_double(strip_cr(f[2]), line_no);
    if (params <= 0) {
      throw ValidationError(fmt::format("replay csv: line {}: param_count must be positive", line_no));
    }
    LogitRecord r;
    r.probe_id = fmt::format("{}/{}", model, to_string(*cond));
    r.model = model;
    r.condition = *cond;
    r.dstr_noctx = parse_double(strip_cr(f[3]), line_no);
    r.dstr_ctx = parse_double(strip_cr(f[4]), line_no);
    r.gold_noctx = parse_double(strip_cr(f[5]), line_no);
    r.gold_ctx = parse_double(strip_cr(f[6]), line_no);
    if (!seen_ids.insert(r.probe_id).second) {
      throw ValidationError(fmt::format("replay csv: line {}: duplicate row for {}", line_no, r.probe_id));
    }

    auto count = static_cast<std::uint64_t>(std::llround(params));
    auto it = std::find_if(out.models.begin(), out.models.end(),
                           [&](const ModelSpec& m) { return m.name == model; });
    if (it == out.models.end()) {
      auto m = model_from_name(model, ReplayRef{});
      m.param_count = count;
      out.models.push_back(std::move(m));
    } else if (it->param_count != count) {
      throw ValidationError(fmt::format("replay csv: line {}: inconsistent param_count for {}", line_no, model));
    }
    out.records.push_back(std::move(r));
  }
  if (!header_seen) throw FormatError("replay csv: missing header");
  return out;
}

AggregateReplay load_replay(const std::filesystem::path& path) {
  auto text = read_file(path);
  if (path.extension() == ".csv") {
    auto replay = parse_aggregate_csv(text);
    for (auto& m : replay.models) m.backend = ReplayRef{path};
    return replay;
  }
  AggregateReplay replay;
  replay.records = parse_records_jsonl(text);
  for (const auto& r : replay.records) {
    bool known = std::any_of(replay.models.begin(), replay.models.end(),
                             [&](const ModelSpec& m) { return m.name == r.model; });
    if (!known) replay.models.push_back(model_from_name(r.model, ReplayRef{path}));
  }
  return replay;
}

}  // namespace entrain
