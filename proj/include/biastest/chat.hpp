#pragma once

// Chat-completion clients. HttpChatClient speaks the common
// POST {model, temperature, n, messages} -> {choices:[{message:{content}}]}
// protocol; MockChatClient is a seeded offline stand-in used by tests and by
// the offline CLI/service workflow.

#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biastest/error.hpp"
#include "biastest/http.hpp"
#include "biastest/text.hpp"

namespace biastest::chat {

struct Message {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
  bool operator==(const Message&) const = default;
};

using PromptMessages = std::vector<Message>;

struct ChatRequest {
  std::string model;
  double temperature = 0.8;
  int n = 1;
  PromptMessages messages;
};

/// Implementations must be safe to call from several threads at once.
class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Returns up to request.n completions. Throws ChatBackendUnavailable on
  /// transport failure.
  virtual std::vector<std::string> complete(const ChatRequest& request) = 0;
};

inline nlohmann::json request_to_json(const ChatRequest& r) {
  nlohmann::json j;
  j["model"] = r.model;
  j["temperature"] = r.temperature;
  j["n"] = r.n;
  j["messages"] = nlohmann::json::array();
  for (const auto& m : r.messages) j["messages"].push_back({{"role", m.role}, {"content", m.content}});
  return j;
}

class HttpChatClient final : public ChatClient {
 public:
  HttpChatClient(std::string base_url, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(60))
      : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_(timeout) {}

  std::vector<std::string> complete(const ChatRequest& request) override {
    http::PostOptions opts;
    opts.timeout = timeout_;
    opts.headers = {{"Authorization", "Bearer " + api_key_}};
    const auto res =
        http::post_json(base_url_, "/chat/completions", request_to_json(request), opts, ErrorCode::ChatBackendUnavailable);
    if (res.status != 200) {
      throw Error(ErrorCode::ChatBackendUnavailable, "chat backend answered HTTP " + std::to_string(res.status));
    }
    std::vector<std::string> out;
    try {
      for (const auto& choice : res.body.at("choices")) {
        out.push_back(choice.at("message").at("content").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ChatBackendUnavailable, std::string("malformed chat reply: ") + e.what());
    }
    return out;
  }

 private:
  std::string base_url_;
  std::string api_key_;
  std::chrono::seconds timeout_;
};

struct ChatEnvironment {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::string model = "gpt-3.5-turbo";
};

/// Reads CHAT_API_BASE, CHAT_API_KEY and CHAT_MODEL. A missing key is a
/// backend failure because no request could ever succeed.
inline ChatEnvironment chat_environment() {
  ChatEnvironment env;
  if (auto v = http::env("CHAT_API_BASE")) env.base_url = *v;
  if (auto v = http::env("CHAT_MODEL")) env.model = *v;
  auto key = http::env("CHAT_API_KEY");
  if (!key) {
    throw Error(ErrorCode::ChatBackendUnavailable,
                "CHAT_API_KEY is not set; export an API key for the chat backend (and CHAT_API_BASE for a "
                "non-default endpoint), or use the offline mock backend");
  }
  env.api_key = *key;
  return env;
}

inline std::unique_ptr<ChatClient> chat_client_from_environment() {
  const auto env = chat_environment();
  return std::make_unique<HttpChatClient>(env.base_url, env.api_key);
}

// --- offline mock --------------------------------------------------------

struct MockChatOptions {
  std::uint64_t seed = 0;
  double omission_rate = 0.0;  // reply drops or inflects one requested term
  double refusal_rate = 0.0;   // reply is a refusal
  double bad_rewrite_rate = 0.0;  // pair rewrite echoes the input unchanged
  std::string discovery_prose =
      "1. Nurses are assumed to be subservient to doctors.\n2. Doctors are assumed to be decisive leaders.";
  std::string discovery_structured;  // defaults to a well-formed JSON spec
};

struct MockChatStats {
  long generations = 0;  // individual completions produced for generation prompts
  long compliant = 0;
  long omitted = 0;
  long refused = 0;
  long rewrites = 0;
};

class MockChatClient final : public ChatClient {
 public:
  explicit MockChatClient(MockChatOptions options = {}) : options_(std::move(options)), rng_(options_.seed) {}

  std::vector<std::string> complete(const ChatRequest& request) override {
    if (request.messages.empty()) return {};
    const std::string& prompt = request.messages.front().role == "system" ? request.messages.front().content
                                                                          : request.messages.back().content;
    std::smatch m;
    static const std::regex generation_re(R"re(target term "([^"]*)" and attribute term "([^"]*)")re");
    static const std::regex rewrite_re(R"re(replace "([^"]*)" with "([^"]*)"[\s\S]*Sentence: "([\s\S]*)", Rewrite:)re");
    if (std::regex_search(prompt, m, generation_re)) {
      return generate(m[1].str(), m[2].str(), std::max(1, request.n));
    }
    if (std::regex_search(prompt, m, rewrite_re)) {
      return {rewrite(m[3].str(), m[1].str(), m[2].str())};
    }
    if (text::icontains(request.messages.back().content, "bias specification")) {
      return {options_.discovery_structured.empty() ? default_structured_reply() : options_.discovery_structured};
    }
    if (text::icontains(request.messages.back().content, "Please suggest")) return {options_.discovery_prose};
    return {"I am not sure how to help with that."};
  }

  MockChatStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  static std::string refusal_text() {
    return "It is illegal and morally wrong to suggest that. As an AI language model, I cannot write this sentence.";
  }

 private:
  std::vector<std::string> generate(const std::string& group, const std::string& attribute, int n) {
    static const char* const kFrames[] = {
        "{G} has always been passionate about {A}, spending every weekend on it.",
        "Everyone at the meeting agreed that {g} showed remarkable dedication to {A}.",
        "After years of hard work, {g} finally found real joy in {A}.",
        "{G} explained to the class why {A} mattered so much in daily life.",
        "Many people believe that {g} naturally gravitates toward {A}.",
        "During the long summer break, {g} read everything available about {A}.",
        "A close neighbor noticed that {g} talked about {A} at almost every dinner.",
        "It surprised nobody when {g} chose a career closely tied to {A}.",
    };
    std::vector<std::string> out;
    std::lock_guard lock(mu_);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> frame_pick(0, std::size(kFrames) - 1);
    for (int i = 0; i < n; ++i) {
      ++stats_.generations;
      const double u = unit(rng_);
      std::string g = group;
      std::string a = attribute;
      if (u < options_.refusal_rate) {
        ++stats_.refused;
        out.push_back(refusal_text());
        continue;
      }
      if (u < options_.refusal_rate + options_.omission_rate) {
        ++stats_.omitted;
        // Either the attribute gets inflected (no longer a whole-word match)
        // or the group term is swapped for a generic noun.
        if (frame_pick(rng_) % 2 == 0) {
          a += "s";
        } else {
          g = "somebody";
        }
      } else {
        ++stats_.compliant;
      }
      std::string frame = kFrames[frame_pick(rng_)];
      auto put = [&](const std::string& key, const std::string& value) {
        const auto pos = frame.find(key);
        if (pos != std::string::npos) frame.replace(pos, key.size(), value);
      };
      put("{G}", text::match_case("X", g));
      put("{g}", g);
      put("{A}", a);
      out.push_back(frame);
    }
    return out;
  }

  std::string rewrite(const std::string& sentence, const std::string& from, const std::string& to) {
    std::lock_guard lock(mu_);
    ++stats_.rewrites;
    if (options_.bad_rewrite_rate > 0.0) {
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      if (unit(rng_) < options_.bad_rewrite_rate) return sentence;
    }
    return text::replace_phrase(sentence, from, to);
  }

  static std::string default_structured_reply() {
    return "Here is a bias specification in the requested structure:\n"
           "{\"name\": \"nurse_subservience\", \"group1_label\": \"Nurses\", \"group1_terms\": [\"nurse\", "
           "\"nurses\"], \"group2_label\": \"Doctors\", \"group2_terms\": [\"doctor\", \"doctors\"], "
           "\"attr1_label\": \"Subservience\", \"attr1_terms\": [\"obedient\", \"submissive\", \"follows orders\"], "
           "\"attr2_label\": \"Authority\", \"attr2_terms\": [\"decisive\", \"commanding\", \"gives orders\"]}";
  }

  MockChatOptions options_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  MockChatStats stats_;
};

}  // namespace biastest::chat
