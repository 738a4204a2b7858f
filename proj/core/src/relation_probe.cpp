#include "entrain/relation_probe.hpp"

#include <algorithm>
#include <cctype>
#include <random>
#include <set>
#include <unordered_set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "entrain/error.hpp"
#include "entrain/hashing.hpp"
#include "entrain/io.hpp"

namespace entrain {
namespace {

using ojson = nlohmann::ordered_json;

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t count = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::string replace_once(std::string text, std::string_view needle,
                         std::string_view value) {
  auto pos = text.find(needle);
  if (pos != std::string::npos) text.replace(pos, needle.size(), value);
  return text;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Drops trailing whitespace and an underscore answer blank ("is ___").
std::string strip_trailing_blank(std::string s) {
  auto rtrim = [&] {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  };
  rtrim();
  while (!s.empty() && s.back() == '_') s.pop_back();
  rtrim();
  return s;
}

std::string with_period(std::string s) {
  if (s.empty() || s.back() != '.') s += '.';
  return s;
}

std::string capitalize(std::string word) {
  if (!word.empty()) {
    word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
  }
  return word;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// mt19937_64 is fully specified by the standard, but the std distributions are
// not; indices are drawn by rejection so output is identical on every platform.
class TracedRng {
 public:
  explicit TracedRng(std::uint64_t seed) : engine_(seed) {}

  std::size_t index(std::size_t n) {
    const std::uint64_t range = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % range;
    std::uint64_t draw = 0;
    do {
      draw = engine_();
      ++draws_;
    } while (draw >= limit);
    return static_cast<std::size_t>(draw % range);
  }

  std::uint64_t draws() const { return draws_; }

 private:
  std::mt19937_64 engine_;
  std::uint64_t draws_ = 0;
};

std::uint64_t stream_seed(std::uint64_t seed, std::string_view relation_id,
                          ContextCondition condition) {
  auto digest = sha256_hex(fmt::format("{}\x1f{}", relation_id, to_string(condition)));
  std::uint64_t h = std::stoull(digest.substr(0, 16), nullptr, 16);
  return splitmix64(seed ^ h);
}

struct Candidate {
  const FactSample* sample;
  std::string context;
  std::string distractor;
  std::uint64_t trace = 0;
};

std::set<std::string_view> true_objects(const Relation& rel, std::string_view subject) {
  std::set<std::string_view> out;
  for (const auto& s : rel.samples) {
    if (s.subject == subject) out.insert(s.object);
  }
  return out;
}

std::vector<Candidate> enumerate_related(const Relation& rel) {
  std::vector<Candidate> out;
  for (const auto& s : rel.samples) {
    auto known = true_objects(rel, s.subject);
    std::unordered_set<std::string_view> used;
    for (const auto& p : rel.samples) {
      if (p.subject == s.subject || known.contains(p.object)) continue;
      if (!used.insert(p.object).second) continue;
      out.push_back({&s, rel.true_statement(p), p.object});
    }
  }
  return out;
}

std::vector<Candidate> enumerate_counterfactual(const Relation& rel) {
  std::vector<std::string_view> objects;
  for (const auto& s : rel.samples) {
    if (std::find(objects.begin(), objects.end(), s.object) == objects.end()) {
      objects.push_back(s.object);
    }
  }
  std::vector<Candidate> out;
  for (const auto& s : rel.samples) {
    auto known = true_objects(rel, s.subject);
    for (auto o : objects) {
      if (known.contains(o)) continue;
      out.push_back({&s, rel.statement_for(s.subject, o), std::string(o)});
    }
  }
  return out;
}

struct ForeignStatement {
  std::string text;
  std::string_view object;
};

std::vector<Candidate> draw_irrelevant(const Relation& rel,
                                       std::span<const Relation> relations,
                                       TracedRng& rng) {
  std::vector<ForeignStatement> pool;
  for (const auto& other : relations) {
    if (other.id == rel.id) continue;
    for (const auto& s : other.samples) pool.push_back({other.true_statement(s), s.object});
  }
  std::vector<Candidate> out;
  for (const auto& s : rel.samples) {
    auto known = true_objects(rel, s.subject);
    std::vector<const ForeignStatement*> eligible;
    for (const auto& f : pool) {
      if (!known.contains(f.object)) eligible.push_back(&f);
    }
    if (eligible.empty()) continue;
    const auto* pick = eligible[rng.index(eligible.size())];
    out.push_back({&s, pick->text, std::string(pick->object), rng.draws()});
  }
  return out;
}

std::vector<Candidate> draw_random(const Relation& rel,
                                   std::span<const std::string> vocab,
                                   TracedRng& rng) {
  std::vector<Candidate> out;
  for (const auto& s : rel.samples) {
    auto known = true_objects(rel, s.subject);
    std::vector<std::string> eligible;
    for (const auto& w : vocab) {
      auto word = capitalize(w);
      if (!known.contains(word)) eligible.push_back(std::move(word));
    }
    if (eligible.empty()) continue;
    auto word = eligible[rng.index(eligible.size())];
    out.push_back({&s, word + ".", word, rng.draws()});
  }
  return out;
}

// Keeps at most `cap` candidates, chosen uniformly by partial Fisher-Yates,
// returned in enumeration order.
std::vector<Candidate> apply_cap(std::vector<Candidate> all, std::size_t cap,
                                 TracedRng& rng) {
  if (all.size() <= cap) return all;
  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::vector<std::uint64_t> traces(all.size(), 0);
  for (std::size_t i = 0; i < cap; ++i) {
    auto j = i + rng.index(idx.size() - i);
    std::swap(idx[i], idx[j]);
    traces[idx[i]] = rng.draws();
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  std::vector<Candidate> out;
  out.reserve(cap);
  for (auto i : idx) {
    auto c = std::move(all[i]);
    c.trace = std::max(c.trace, traces[i]);
    out.push_back(std::move(c));
  }
  return out;
}

FactSample parse_sample(const nlohmann::json& j) {
  FactSample s;
  s.subject = j.at("subject").get<std::string>();
  s.object = j.at("object").get<std::string>();
  if (j.contains("statement")) s.statement = j.at("statement").get<std::string>();
  return s;
}

void validate_relation(const Relation& r) {
  auto fail = [&](const std::string& msg) {
    throw ValidationError(fmt::format("relation '{}': {}", r.id, msg));
  };
  if (r.id.empty()) throw ValidationError("relation with empty id");
  if (count_occurrences(r.prompt_template, kSubjectPlaceholder) != 1) {
    fail("prompt_template must contain exactly one {subject} placeholder");
  }
  if (r.context_template) {
    if (count_occurrences(*r.context_template, kSubjectPlaceholder) != 1 ||
        count_occurrences(*r.context_template, kObjectPlaceholder) != 1) {
      fail("context_template must contain exactly one {subject} and one {object}");
    }
  }
  std::set<std::pair<std::string_view, std::string_view>> seen;
  for (const auto& s : r.samples) {
    if (s.subject.empty() || s.object.empty()) fail("sample with empty subject or object");
    if (s.subject == s.object) fail(fmt::format("sample '{}' has subject equal to object", s.subject));
    if (!seen.emplace(s.subject, s.object).second) {
      fail(fmt::format("duplicate sample ('{}', '{}')", s.subject, s.object));
    }
    if (s.statement && s.statement->find(s.object) == std::string::npos) {
      fail(fmt::format("statement for '{}' does not contain its object '{}'", s.subject, s.object));
    }
  }
}

}  // namespace

std::string Relation::query_for(std::string_view subject) const {
  return strip_trailing_blank(replace_once(prompt_template, kSubjectPlaceholder, subject));
}

std::string Relation::statement_for(std::string_view subject, std::string_view object) const {
  if (context_template) {
    auto filled = replace_once(*context_template, kSubjectPlaceholder, subject);
    return with_period(replace_once(std::move(filled), kObjectPlaceholder, object));
  }
  return fmt::format("{} {}.", query_for(subject), object);
}

std::string Relation::true_statement(const FactSample& sample) const {
  if (sample.statement) return with_period(*sample.statement);
  return statement_for(sample.subject, sample.object);
}

std::vector<Relation> parse_relations(std::string_view json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(fmt::format("relations: parse error at line {}: {}",
                                  line_of_offset(json_text, e.byte), e.what()));
  }
  if (!doc.is_array()) throw FormatError("relations: top-level value must be an array");

  std::vector<Relation> out;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& j = doc[i];
    Relation r;
    try {
      r.id = j.at("id").get<std::string>();
      r.name = j.at("name").get<std::string>();
      r.prompt_template = j.at("prompt_template").get<std::string>();
      if (j.contains("context_template")) {
        r.context_template = j.at("context_template").get<std::string>();
      }
      for (const auto& s : j.at("samples")) r.samples.push_back(parse_sample(s));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(fmt::format("relations: entry {}: {}", i, e.what()));
    }
    validate_relation(r);
    if (!ids.insert(r.id).second) {
      throw ValidationError(fmt::format("duplicate relation id '{}'", r.id));
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<Relation> load_relations(const std::filesystem::path& path) {
  return parse_relations(read_file(path));
}

std::vector<std::string> parse_vocabulary(std::string_view text) {
  std::vector<std::string> words;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto word = trim(text.substr(start, end - start));
    if (!word.empty()) words.emplace_back(word);
    start = end + 1;
  }
  return words;
}

std::vector<std::string> load_vocabulary(const std::filesystem::path& path) {
  return parse_vocabulary(read_file(path));
}

std::string probe_id(std::string_view relation_id, ContextCondition condition,
                     std::string_view subject, std::string_view gold,
                     std::string_view distractor) {
  auto key = fmt::format("{}\x1f{}\x1f{}\x1f{}\x1f{}", relation_id, to_string(condition),
                         subject, gold, distractor);
  return sha256_hex(key).substr(0, 16);
}

std::vector<ProbeInstance> generate_probes(std::span<const Relation> relations,
                                           ContextCondition condition,
                                           std::size_t cap, std::uint64_t seed,
                                           std::span<const std::string> random_vocab) {
  if (cap < 1) throw ValidationError("cap must be at least 1");
  if (condition == ContextCondition::kRandom && random_vocab.empty() && !relations.empty()) {
    throw ValidationError("random condition requires a non-empty vocabulary");
  }
  if (condition == ContextCondition::kIrrelevant && relations.size() == 1) {
    throw ValidationError("irrelevant condition requires at least two relations");
  }

  std::vector<ProbeInstance> probes;
  for (const auto& rel : relations) {
    TracedRng rng(stream_seed(seed, rel.id, condition));
    std::vector<Candidate> candidates;
    switch (condition) {
      case ContextCondition::kRelated:
        candidates = enumerate_related(rel);
        break;
      case ContextCondition::kCounterfactual:
        candidates = enumerate_counterfactual(rel);
        break;
      case ContextCondition::kIrrelevant:
        candidates = draw_irrelevant(rel, relations, rng);
        break;
      case ContextCondition::kRandom:
        candidates = draw_random(rel, random_vocab, rng);
        break;
    }
    for (auto& c : apply_cap(std::move(candidates), cap, rng)) {
      ProbeInstance p;
      p.id = probe_id(rel.id, condition, c.sample->subject, c.sample->object, c.distractor);
      p.relation_id = rel.id;
      p.condition = condition;
      p.query_text = rel.query_for(c.sample->subject);
      p.context_text = std::move(c.context);
      p.gold = c.sample->object;
      p.distractor = std::move(c.distractor);
      p.seed_trace = c.trace;
      probes.push_back(std::move(p));
    }
  }
  return probes;
}

RenderedPrompts render_prompts(const ProbeInstance& probe) {
  return {probe.context_text + " " + probe.query_text, probe.query_text};
}

std::string check_probe(const ProbeInstance& p, std::span<const Relation> relations) {
  if (p.gold == p.distractor) return "gold equals distractor";
  if (p.context_text.find(p.distractor) == std::string::npos) {
    return "distractor not contained in context";
  }
  auto rel_it = std::find_if(relations.begin(), relations.end(),
                             [&](const Relation& r) { return r.id == p.relation_id; });
  if (rel_it == relations.end()) return "unknown relation id";
  const Relation& rel = *rel_it;

  const FactSample* own = nullptr;
  for (const auto& s : rel.samples) {
    if (s.object == p.gold && rel.query_for(s.subject) == p.query_text) own = &s;
  }
  if (own == nullptr) return "query/gold do not match any sample of the relation";
  if (p.id != probe_id(rel.id, p.condition, own->subject, p.gold, p.distractor)) {
    return "id is not the content hash";
  }

  switch (p.condition) {
    case ContextCondition::kCounterfactual:
      if (p.context_text != rel.statement_for(own->subject, p.distractor)) {
        return "counterfactual context is not the relation statement with the distractor";
      }
      return {};
    case ContextCondition::kRelated:
      for (const auto& s : rel.samples) {
        if (s.subject != own->subject && s.object == p.distractor &&
            rel.true_statement(s) == p.context_text) {
          return {};
        }
      }
      return "related context is not a true statement of another subject in the relation";
    case ContextCondition::kRandom: {
      const auto& c = p.context_text;
      if (c.size() < 2 || c.back() != '.' || c.find(' ') != std::string::npos ||
          !std::isupper(static_cast<unsigned char>(c.front())) ||
          c.substr(0, c.size() - 1) != p.distractor) {
        return "random context is not a single capitalized word with a period";
      }
      return {};
    }
    case ContextCondition::kIrrelevant:
      for (const auto& other : relations) {
        if (other.id == rel.id) continue;
        for (const auto& s : other.samples) {
          if (s.object == p.distractor && other.true_statement(s) == p.context_text) return {};
        }
      }
      return "irrelevant context is not a statement from a different relation";
  }
  return "unknown condition";
}

std::string probe_to_jsonl(const ProbeInstance& p) {
  ojson j;
  j["id"] = p.id;
  j["relation_id"] = p.relation_id;
  j["condition"] = to_string(p.condition);
  j["query_text"] = p.query_text;
  j["context_text"] = p.context_text;
  j["gold"] = p.gold;
  j["distractor"] = p.distractor;
  j["seed_trace"] = p.seed_trace;
  return j.dump();
}

std::string probes_to_jsonl(std::span<const ProbeInstance> probes) {
  std::string out;
  for (const auto& p : probes) {
    out += probe_to_jsonl(p);
    out += '\n';
  }
  return out;
}

std::vector<ProbeInstance> parse_probes_jsonl(std::string_view text) {
  std::vector<ProbeInstance> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      ProbeInstance p;
      p.id = j.at("id").get<std::string>();
      p.relation_id = j.at("relation_id").get<std::string>();
      auto cond = parse_condition(j.at("condition").get<std::string>());
      if (!cond) throw FormatError("unknown condition");
      p.condition = *cond;
      p.query_text = j.at("query_text").get<std::string>();
      p.context_text = j.at("context_text").get<std::string>();
      p.gold = j.at("gold").get<std::string>();
      p.distractor = j.at("distractor").get<std::string>();
      p.seed_trace = j.at("seed_trace").get<std::uint64_t>();
      out.push_back(std::move(p));
    } catch (const std::exception& e) {
      throw FormatError(fmt::format("probes: line {}: {}", line_no, e.what()));
    }
  }
  return out;
}

}  // namespace entrain
