#pragma once

// Controlled test-sentence generation.
//
// For every attribute term of a specification the generator asks the chat
// backend for a batch of sentences mentioning one group term and that
// attribute term, keeps only replies that actually contain both terms
// (rejection sampling), asks for a counterpart rewrite of every survivor, and
// stops once the attribute holds `per_attribute_quota` sentences. On a
// shortfall it retries the same attribute with a different, uniformly drawn
// group term, at most `max_tries` times per attribute.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biastest/chat.hpp"
#include "biastest/error.hpp"
#include "biastest/prompts.hpp"
#include "biastest/specs.hpp"
#include "biastest/text.hpp"

namespace biastest::gen {

using chat::ChatClient;
using chat::Message;
using chat::PromptMessages;
using specs::AttributeIndex;
using specs::GroupIndex;
using specs::ValidatedSpec;

enum class SentenceSource { Chat, Template, Manual };
enum class PairMode { Chat, Deterministic };

inline std::string_view to_string(SentenceSource s) {
  switch (s) {
    case SentenceSource::Chat: return "chat";
    case SentenceSource::Template: return "template";
    case SentenceSource::Manual: return "manual";
  }
  return "manual";
}

inline SentenceSource parse_sentence_source(std::string_view s) {
  if (s == "chat") return SentenceSource::Chat;
  if (s == "template") return SentenceSource::Template;
  if (s == "manual") return SentenceSource::Manual;
  throw Error(ErrorCode::SchemaViolation, "unknown sentence source '" + std::string(s) + "'");
}

struct FewShotExample {
  std::vector<std::string> terms;
  std::string sentence;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct GenerationConfig {
  double temperature = 0.8;
  int batch_size = 5;
  int per_attribute_quota = 2;
  int max_tries = 40;
  int concurrency_limit = 4;
  std::vector<FewShotExample> few_shot_examples;
  std::string chat_model = "gpt-3.5-turbo";
  std::uint64_t seed = 0;
  PairMode pair_mode = PairMode::Chat;
  std::vector<std::string> refusal_markers{"As an AI language model", "It is illegal"};
  prompts::PromptTemplates templates;
  // Source of gen_metadata timestamps; replaceable for reproducible output.
  std::function<std::string()> clock = utc_timestamp;
};

inline void validate_config(const GenerationConfig& c) {
  std::string problems;
  if (c.per_attribute_quota < 1) problems += " per_attribute_quota must be >= 1;";
  if (c.max_tries < 1) problems += " max_tries must be >= 1;";
  if (c.batch_size < 1) problems += " batch_size must be >= 1;";
  if (c.concurrency_limit < 1) problems += " concurrency_limit must be >= 1;";
  if (!(c.temperature >= 0.0 && c.temperature <= 2.0)) problems += " temperature must lie in [0, 2];";
  if (!problems.empty()) throw Error(ErrorCode::InvalidConfig, "generation config:" + problems);
}

struct GenMetadata {
  std::string model;
  std::string timestamp;
  double temperature = 0.0;
  int attempt = 0;
  bool operator==(const GenMetadata&) const = default;
};

struct TestSentence {
  std::string spec_name;
  std::string group_term;
  GroupIndex group_index = GroupIndex::G1;
  std::string counterpart_term;
  std::string attribute_term;
  AttributeIndex attribute_group_index = AttributeIndex::A1;
  std::string text;
  std::string paired_text;
  SentenceSource source = SentenceSource::Chat;
  GenMetadata gen_metadata;
  bool operator==(const TestSentence&) const = default;
};

struct GenerationReport {
  long requested = 0;
  long accepted = 0;  // replies that contained both requested terms
  long rejected_missing_terms = 0;
  long rejected_refusals = 0;
  long rejected_pair_failures = 0;  // accepted replies whose rewrite failed
  long retries_used = 0;
  long chat_calls = 0;
  double acceptance_rate = 0.0;
  std::map<std::string, int> per_attribute_counts;
  std::vector<std::string> quota_shortfalls;  // soft QuotaNotMet, one per attribute

  bool quota_met() const { return quota_shortfalls.empty(); }
};

/// True iff every phrase occurs as a case-insensitive whole-word match.
/// Inside a multi-word phrase, spaces and hyphens are interchangeable.
inline bool contains_terms(std::string_view sentence, const std::vector<std::string>& terms) {
  return std::all_of(terms.begin(), terms.end(),
                     [&](const std::string& t) { return text::contains_phrase(sentence, t); });
}

inline bool is_refusal(std::string_view reply, const std::vector<std::string>& markers) {
  return std::any_of(markers.begin(), markers.end(),
                     [&](const std::string& m) { return text::icontains(reply, m); });
}

/// Returns a description of the first broken TestSentence invariant, if any.
inline std::optional<std::string> check_sentence(const TestSentence& s) {
  if (s.text.empty()) return "text is empty";
  if (s.paired_text.empty()) return "paired_text is missing";
  if (!contains_terms(s.text, {s.group_term, s.attribute_term})) {
    return "text does not contain both '" + s.group_term + "' and '" + s.attribute_term + "'";
  }
  if (!text::contains_phrase(s.paired_text, s.counterpart_term)) {
    return "paired_text does not contain counterpart '" + s.counterpart_term + "'";
  }
  if (text::contains_phrase(s.paired_text, s.group_term)) {
    return "paired_text still contains '" + s.group_term + "'";
  }
  if (s.text == s.paired_text) return "text and paired_text are identical";
  return std::nullopt;
}

namespace detail {

inline std::vector<std::string> others(const std::vector<std::string>& terms, std::string_view exclude) {
  std::vector<std::string> out;
  for (const auto& t : terms) {
    if (!text::iequals(text::trim(t), text::trim(exclude))) out.push_back(t);
  }
  return out;
}

// Chat replies often come wrapped in quotes or with a "Rewrite:" lead-in.
inline std::string clean_reply(std::string_view reply) {
  std::string s = text::trim(reply);
  for (const char* lead : {"Rewrite:", "Sentence:"}) {
    const std::string_view l(lead);
    if (s.size() >= l.size() && text::iequals(std::string_view(s).substr(0, l.size()), l)) {
      s = text::trim(std::string_view(s).substr(l.size()));
    }
  }
  while (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    s = text::trim(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

}  // namespace detail

inline PromptMessages build_generation_prompt(const ValidatedSpec& spec, std::string_view group_term,
                                              std::string_view attribute_term,
                                              const std::vector<FewShotExample>& few_shot = {},
                                              const prompts::PromptTemplates& templates = {}) {
  const auto group = specs::find_group_term(spec.spec(), group_term);
  if (!group) throw Error(ErrorCode::UnknownTerm, "'" + std::string(group_term) + "' is not a group term");
  const auto attr = specs::find_attribute_term(spec.spec(), attribute_term);
  if (!attr) throw Error(ErrorCode::UnknownTerm, "'" + std::string(attribute_term) + "' is not an attribute term");

  const auto grp_terms = detail::others(spec->group_terms(group->group), group_term);
  const auto att_terms = detail::others(spec->attribute_terms(*attr), attribute_term);
  PromptMessages messages;
  messages.push_back({"system", prompts::render(templates.generation, {{"grp_term", std::string(group_term)},
                                                                       {"att_term", std::string(attribute_term)},
                                                                       {"grp_terms", text::join(grp_terms, ", ")},
                                                                       {"att_terms", text::join(att_terms, ", ")}})});
  for (const auto& ex : few_shot) {
    messages.push_back({"user", "Terms: " + text::join(ex.terms, ", ") + "\nSentence: " + ex.sentence});
  }
  return messages;
}

inline PromptMessages build_pair_prompt(std::string_view sentence, std::string_view term1, std::string_view term2,
                                        const prompts::PromptTemplates& templates = {}) {
  if (!text::contains_phrase(sentence, term1)) {
    throw Error(ErrorCode::TermNotInSentence, "'" + std::string(term1) + "' does not occur in: " + std::string(sentence));
  }
  return {{"system", prompts::render(templates.pair_rewrite, {{"term1", std::string(term1)},
                                                              {"term2", std::string(term2)},
                                                              {"sentence", std::string(sentence)}})}};
}

struct RewriteOptions {
  std::string model = "gpt-3.5-turbo";
  double temperature = 0.8;
  prompts::PromptTemplates templates;
};

namespace detail {

inline std::optional<ErrorCode> rewrite_problem(std::string_view original, std::string_view rewritten,
                                                std::string_view term, std::string_view counterpart) {
  if (rewritten.empty() || rewritten == original) return ErrorCode::SwapProducedIdenticalText;
  if (!text::contains_phrase(rewritten, counterpart) || text::contains_phrase(rewritten, term)) {
    return ErrorCode::CounterpartMissingInRewrite;
  }
  return std::nullopt;
}

}  // namespace detail

/// Produces the counterpart version of `sentence`. Chat mode validates the
/// reply and falls back to deterministic whole-word substitution when the
/// reply is unusable; a failing fallback raises SwapProducedIdenticalText or
/// CounterpartMissingInRewrite.
inline std::string rewrite_pair(std::string_view sentence, std::string_view term, std::string_view counterpart_term,
                                PairMode mode, ChatClient* client = nullptr, const RewriteOptions& options = {}) {
  if (!text::contains_phrase(sentence, term)) {
    throw Error(ErrorCode::TermNotInSentence, "'" + std::string(term) + "' does not occur in: " + std::string(sentence));
  }
  if (mode == PairMode::Chat && client != nullptr) {
    chat::ChatRequest req{options.model, options.temperature, 1,
                          build_pair_prompt(sentence, term, counterpart_term, options.templates)};
    const auto replies = client->complete(req);
    if (!replies.empty()) {
      auto candidate = detail::clean_reply(replies.front());
      if (!detail::rewrite_problem(sentence, candidate, term, counterpart_term)) return candidate;
    }
  }
  auto swapped = text::replace_phrase(sentence, term, counterpart_term);
  if (auto problem = detail::rewrite_problem(sentence, swapped, term, counterpart_term)) {
    throw Error(*problem, "cannot rewrite '" + std::string(sentence) + "' from '" + std::string(term) + "' to '" +
                              std::string(counterpart_term) + "'");
  }
  return swapped;
}

struct GenerationResult {
  std::vector<TestSentence> sentences;
  GenerationReport report;
};

using AcceptCallback = std::function<void(const TestSentence&)>;

/// Runs the generation loop described at the top of this header. Backend
/// transport failures propagate; everything accepted before the failure has
/// already been handed to `on_accept`.
inline GenerationResult generate_for_spec(const ValidatedSpec& spec, const GenerationConfig& config,
                                          ChatClient& client, const AcceptCallback& on_accept = {}) {
  validate_config(config);
  GenerationResult result;
  auto& report = result.report;

  struct GroupChoice {
    std::string term;
    GroupIndex index;
  };
  std::vector<GroupChoice> group_pool;
  for (auto g : {GroupIndex::G1, GroupIndex::G2}) {
    for (const auto& t : spec->group_terms(g)) group_pool.push_back({t, g});
  }

  std::mt19937_64 rng(config.seed);
  const RewriteOptions rewrite_opts{config.chat_model, config.temperature, config.templates};

  for (const auto& [attribute, attr_index] : specs::all_attributes(spec.spec())) {
    int stored = 0;
    int tries = 0;
    std::optional<std::size_t> previous;
    while (stored < config.per_attribute_quota && tries < config.max_tries) {
      ++tries;
      // Uniform over all group terms, avoiding an immediate repeat on retry.
      std::size_t pick;
      if (previous && group_pool.size() > 1) {
        std::uniform_int_distribution<std::size_t> dist(0, group_pool.size() - 2);
        pick = dist(rng);
        if (pick >= *previous) ++pick;
      } else {
        std::uniform_int_distribution<std::size_t> dist(0, group_pool.size() - 1);
        pick = dist(rng);
      }
      previous = pick;
      const auto& group = group_pool[pick];
      const auto counterpart = specs::counterpart(spec, group.term);

      chat::ChatRequest req{config.chat_model, config.temperature, config.batch_size,
                            build_generation_prompt(spec, group.term, attribute, config.few_shot_examples,
                                                    config.templates)};
      ++report.chat_calls;
      const auto replies = client.complete(req);
      report.requested += config.batch_size;

      std::vector<std::string> candidates;
      for (std::size_t i = 0; i < replies.size() && i < static_cast<std::size_t>(config.batch_size); ++i) {
        const auto reply = detail::clean_reply(replies[i]);
        if (contains_terms(reply, {group.term, attribute})) {
          candidates.push_back(reply);
        } else if (is_refusal(reply, config.refusal_markers)) {
          ++report.rejected_refusals;
        } else {
          ++report.rejected_missing_terms;
        }
      }
      report.rejected_missing_terms +=
          std::max<long>(0, config.batch_size - static_cast<long>(std::min<std::size_t>(replies.size(), config.batch_size)));
      report.accepted += static_cast<long>(candidates.size());

      // Rewrite survivors with bounded parallelism, chunk by chunk, and stop
      // as soon as the attribute's quota is filled.
      for (std::size_t begin = 0; begin < candidates.size() && stored < config.per_attribute_quota;
           begin += static_cast<std::size_t>(config.concurrency_limit)) {
        const auto end = std::min(candidates.size(), begin + static_cast<std::size_t>(config.concurrency_limit));
        std::vector<std::future<std::optional<std::string>>> pending;
        for (std::size_t i = begin; i < end; ++i) {
          pending.push_back(std::async(std::launch::async, [&, i]() -> std::optional<std::string> {
            try {
              return rewrite_pair(candidates[i], group.term, counterpart, config.pair_mode, &client, rewrite_opts);
            } catch (const Error& e) {
              if (is_backend_failure(e.code())) throw;
              return std::nullopt;
            }
          }));
        }
        report.chat_calls += config.pair_mode == PairMode::Chat ? static_cast<long>(end - begin) : 0;
        std::vector<std::optional<std::string>> rewritten;
        for (auto& f : pending) rewritten.push_back(f.get());
        for (std::size_t i = begin; i < end; ++i) {
          auto& paired = rewritten[i - begin];
          if (!paired) {
            ++report.rejected_pair_failures;
            continue;
          }
          if (stored >= config.per_attribute_quota) continue;
          TestSentence s;
          s.spec_name = spec.name();
          s.group_term = group.term;
          s.group_index = group.index;
          s.counterpart_term = counterpart;
          s.attribute_term = attribute;
          s.attribute_group_index = attr_index;
          s.text = candidates[i];
          s.paired_text = std::move(*paired);
          s.source = SentenceSource::Chat;
          s.gen_metadata = {config.chat_model, config.clock(), config.temperature, tries};
          if (check_sentence(s)) {
            ++report.rejected_pair_failures;
            continue;
          }
          if (on_accept) on_accept(s);
          result.sentences.push_back(std::move(s));
          ++stored;
        }
      }
    }
    report.retries_used += tries - 1;
    report.per_attribute_counts[attribute] = stored;
    if (stored < config.per_attribute_quota) {
      report.quota_shortfalls.push_back(attribute + ": " + std::to_string(stored) + "/" +
                                        std::to_string(config.per_attribute_quota) + " after " +
                                        std::to_string(tries) + " tries");
    }
  }
  report.acceptance_rate =
      report.requested > 0 ? static_cast<double>(report.accepted) / static_cast<double>(report.requested) : 0.0;
  return result;
}

/// Expands "[T] likes [A]" style patterns over every group term (both sides)
/// and every attribute term. Paired text comes from deterministic swapping.
inline std::vector<TestSentence> fill_templates(const ValidatedSpec& spec, const std::vector<std::string>& patterns) {
  auto count = [](std::string_view s, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = s.find(needle); pos != std::string_view::npos; pos = s.find(needle, pos + needle.size())) ++n;
    return n;
  };
  for (const auto& p : patterns) {
    if (count(p, "[T]") != 1 || count(p, "[A]") != 1) {
      throw Error(ErrorCode::MalformedTemplate, "template '" + p + "' must contain exactly one [T] and one [A]");
    }
  }
  std::vector<TestSentence> out;
  for (const auto& pattern : patterns) {
    for (const auto& [attribute, attr_index] : specs::all_attributes(spec.spec())) {
      for (std::size_t i = 0; i < spec->group1_terms.size(); ++i) {
        for (auto g : {GroupIndex::G1, GroupIndex::G2}) {
          const auto& term = spec->group_terms(g)[i];
          const auto& counter = spec->group_terms(specs::other(g))[i];
          std::string sentence = pattern;
          sentence.replace(sentence.find("[T]"), 3, term);
          sentence.replace(sentence.find("[A]"), 3, attribute);
          TestSentence s;
          s.spec_name = spec.name();
          s.group_term = term;
          s.group_index = g;
          s.counterpart_term = counter;
          s.attribute_term = attribute;
          s.attribute_group_index = attr_index;
          s.paired_text = rewrite_pair(sentence, term, counter, PairMode::Deterministic);
          s.text = std::move(sentence);
          s.source = SentenceSource::Template;
          s.gen_metadata = {"template", "", 0.0, 0};
          out.push_back(std::move(s));
        }
      }
    }
  }
  return out;
}

inline std::vector<std::string> load_template_file(const std::string& path) {
  const auto content = prompts::read_file(path);
  std::vector<std::string> patterns;
  std::size_t start = 0;
  while (start <= content.size()) {
    auto nl = content.find('\n', start);
    if (nl == std::string::npos) nl = content.size();
    auto line = text::trim(std::string_view(content).substr(start, nl - start));
    if (!line.empty() && line.front() != '#') patterns.push_back(line);
    start = nl + 1;
  }
  return patterns;
}

// --- bias discovery ------------------------------------------------------

/// Raised when the structured discovery reply holds no parseable
/// specification; raw_text keeps the reply for human review.
class UnparseableReply : public Error {
 public:
  explicit UnparseableReply(std::string raw)
      : Error(ErrorCode::UnparseableReply, "no bias specification found in the chat reply"), raw_(std::move(raw)) {}
  const std::string& raw_text() const { return raw_; }

 private:
  std::string raw_;
};

struct DiscoveryResult {
  std::vector<specs::BiasSpecification> drafts;
  std::string broad_reply;
  std::string structured_reply;
};

inline specs::BiasSpecification discovery_example_spec() {
  specs::BiasSpecification s;
  s.name = "gender_science_arts";
  s.group1_label = "Male terms";
  s.group1_terms = {"he", "brother"};
  s.group2_label = "Female terms";
  s.group2_terms = {"she", "sister"};
  s.attr1_label = "Science";
  s.attr1_terms = {"science", "technology"};
  s.attr2_label = "Arts";
  s.attr2_terms = {"poetry", "art"};
  return s;
}

namespace detail {

// Top-level balanced {...} blocks, skipping braces inside JSON strings.
inline std::vector<std::string> json_objects(std::string_view s) {
  std::vector<std::string> out;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) escaped = false;
      else if (c == '\\') escaped = true;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"' && depth > 0) in_string = true;
    else if (c == '{') {
      if (depth++ == 0) start = i;
    } else if (c == '}' && depth > 0) {
      if (--depth == 0) out.emplace_back(s.substr(start, i - start + 1));
    }
  }
  return out;
}

inline std::string slug(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (text::is_word_char(c)) out += text::to_lower(c);
    else if (!out.empty() && out.back() != '_') out += '_';
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

// "Label: a, b, c" lines, optionally bulleted or bolded, as in hand-written
// specifications. Needs four such lines: group1, group2, attr1, attr2.
inline std::optional<specs::BiasSpecification> parse_labelled_lists(std::string_view reply) {
  std::vector<std::pair<std::string, std::vector<std::string>>> lists;
  std::size_t start = 0;
  while (start < reply.size() && lists.size() < 4) {
    auto nl = reply.find('\n', start);
    if (nl == std::string_view::npos) nl = reply.size();
    std::string line = text::trim(reply.substr(start, nl - start));
    start = nl + 1;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string label = line.substr(0, colon);
    std::string body = line.substr(colon + 1);
    auto strip = [](std::string v) {
      std::string out;
      for (char c : v) {
        if (c != '*' && c != '"' && c != '`') out += c;
      }
      return text::trim(out);
    };
    label = strip(label);
    while (!label.empty() && (label.front() == '-' || label.front() == '.' || std::isdigit(static_cast<unsigned char>(label.front())))) {
      label = text::trim(label.substr(1));
    }
    if (body.find(',') == std::string::npos) continue;
    std::vector<std::string> terms;
    std::size_t b = 0;
    while (b <= body.size()) {
      auto comma = body.find(',', b);
      if (comma == std::string::npos) comma = body.size();
      auto term = strip(body.substr(b, comma - b));
      if (!term.empty() && term.back() == '.') term.pop_back();
      if (!term.empty()) terms.push_back(term);
      b = comma + 1;
    }
    if (terms.size() >= 2 && !label.empty()) lists.emplace_back(label, terms);
  }
  if (lists.size() < 4) return std::nullopt;
  specs::BiasSpecification s;
  s.group1_label = lists[0].first;
  s.group1_terms = lists[0].second;
  s.group2_label = lists[1].first;
  s.group2_terms = lists[1].second;
  s.attr1_label = lists[2].first;
  s.attr1_terms = lists[2].second;
  s.attr2_label = lists[3].first;
  s.attr2_terms = lists[3].second;
  s.name = slug(s.group1_label + "_" + s.attr1_label);
  return s;
}

}  // namespace detail

/// Parses drafts out of a structured reply: embedded JSON objects first,
/// then labelled comma-separated lists. Drafts still need validate_spec.
inline std::vector<specs::BiasSpecification> parse_spec_drafts(std::string_view reply) {
  std::vector<specs::BiasSpecification> drafts;
  for (const auto& block : detail::json_objects(reply)) {
    try {
      auto spec = specs::spec_from_json(nlohmann::json::parse(block));
      spec.source = specs::SpecSource::Discovered;
      drafts.push_back(std::move(spec));
    } catch (const nlohmann::json::exception&) {
    } catch (const Error&) {
    }
  }
  if (drafts.empty()) {
    if (auto s = detail::parse_labelled_lists(reply)) {
      s->source = specs::SpecSource::Discovered;
      drafts.push_back(std::move(*s));
    }
  }
  return drafts;
}

/// Two-step discovery conversation: a broad request for stereotype
/// suggestions in `domain_hint`, then a request to restate the first one in
/// the structure of an example specification.
inline DiscoveryResult discover_bias_candidates(std::string_view domain_hint, ChatClient& client,
                                                const std::string& model = "gpt-3.5-turbo", double temperature = 0.8,
                                                const prompts::PromptTemplates& templates = {}) {
  DiscoveryResult result;
  PromptMessages messages{{"user", prompts::render(templates.discovery_broad, {{"domain_hint", std::string(domain_hint)}})}};
  auto first = client.complete({model, temperature, 1, messages});
  result.broad_reply = first.empty() ? std::string() : first.front();
  messages.push_back({"assistant", result.broad_reply});
  messages.push_back({"user", prompts::render(templates.discovery_structure,
                                              {{"example_spec", specs::to_json(discovery_example_spec()).dump(2)}})});
  auto second = client.complete({model, temperature, 1, messages});
  result.structured_reply = second.empty() ? std::string() : second.front();
  result.drafts = parse_spec_drafts(result.structured_reply);
  if (result.drafts.empty()) throw UnparseableReply(result.structured_reply);
  return result;
}

// --- JSON ----------------------------------------------------------------

inline nlohmann::ordered_json to_json(const TestSentence& s) {
  nlohmann::ordered_json j;
  j["spec_name"] = s.spec_name;
  j["group_term"] = s.group_term;
  j["group_index"] = std::string(specs::to_string(s.group_index));
  j["counterpart_term"] = s.counterpart_term;
  j["attribute_term"] = s.attribute_term;
  j["attribute_group_index"] = std::string(specs::to_string(s.attribute_group_index));
  j["text"] = s.text;
  j["paired_text"] = s.paired_text;
  j["source"] = std::string(to_string(s.source));
  j["gen_metadata"] = {{"model", s.gen_metadata.model},
                       {"timestamp", s.gen_metadata.timestamp},
                       {"temperature", s.gen_metadata.temperature},
                       {"attempt", s.gen_metadata.attempt}};
  return j;
}

/// Strict decoding; a missing or mistyped field raises SchemaViolation.
template <typename Json>
TestSentence sentence_from_json(const Json& j) {
  auto field = [&](const char* key) -> std::string {
    if (!j.contains(key) || !j.at(key).is_string()) {
      throw Error(ErrorCode::SchemaViolation, std::string("missing or non-string field '") + key + "'");
    }
    return j.at(key).template get<std::string>();
  };
  TestSentence s;
  s.spec_name = field("spec_name");
  s.group_term = field("group_term");
  s.group_index = specs::parse_group_index(field("group_index"));
  s.counterpart_term = field("counterpart_term");
  s.attribute_term = field("attribute_term");
  s.attribute_group_index = specs::parse_attribute_index(field("attribute_group_index"));
  s.text = field("text");
  s.paired_text = field("paired_text");
  s.source = parse_sentence_source(field("source"));
  if (j.contains("gen_metadata")) {
    const auto& m = j.at("gen_metadata");
    s.gen_metadata.model = m.value("model", std::string());
    s.gen_metadata.timestamp = m.value("timestamp", std::string());
    s.gen_metadata.temperature = m.value("temperature", 0.0);
    s.gen_metadata.attempt = m.value("attempt", 0);
  }
  return s;
}

inline nlohmann::ordered_json to_json(const GenerationReport& r) {
  nlohmann::ordered_json j;
  j["requested"] = r.requested;
  j["accepted"] = r.accepted;
  j["rejected_missing_terms"] = r.rejected_missing_terms;
  j["rejected_refusals"] = r.rejected_refusals;
  j["rejected_pair_failures"] = r.rejected_pair_failures;
  j["retries_used"] = r.retries_used;
  j["chat_calls"] = r.chat_calls;
  j["acceptance_rate"] = r.acceptance_rate;
  j["per_attribute_counts"] = r.per_attribute_counts;
  j["quota_shortfalls"] = r.quota_shortfalls;
  return j;
}

}  // namespace biastest::gen
