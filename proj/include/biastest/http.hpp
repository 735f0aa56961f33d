#pragma once

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <utility>

#include "httplib.h"
#include "json.hpp"

#include "biastest/error.hpp"

namespace biastest::http {

/// "http://host:port/prefix" split into the part httplib::Client wants and a
/// path prefix that is prepended to every request path.
struct Endpoint {
  std::string origin;
  std::string path_prefix;
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) {
    throw Error(ErrorCode::InvalidConfig, "endpoint '" + url + "' must start with http:// or https://");
  }
  const auto slash = url.find('/', scheme + 3);
  Endpoint ep;
  ep.origin = url.substr(0, slash);
  if (slash != std::string::npos) {
    ep.path_prefix = url.substr(slash);
    while (!ep.path_prefix.empty() && ep.path_prefix.back() == '/') ep.path_prefix.pop_back();
  }
  return ep;
}

inline std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

struct PostOptions {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::seconds timeout{60};
  httplib::Headers headers;
};

struct Response {
  int status = 0;
  nlohmann::json body;
};

/// POSTs JSON with exponential backoff. Transport failures and 5xx replies
/// are retried; after the last attempt they raise `unavailable`. 4xx replies
/// are returned to the caller untouched.
inline Response post_json(const std::string& url, const std::string& path, const nlohmann::json& payload,
                          const PostOptions& options, ErrorCode unavailable) {
  const auto ep = parse_endpoint(url);
  auto backoff = options.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= options.attempts; ++attempt) {
    httplib::Client client(ep.origin);
    client.set_connection_timeout(options.timeout);
    client.set_read_timeout(options.timeout);
    client.set_write_timeout(options.timeout);
    auto res = client.Post(ep.path_prefix + path, options.headers, payload.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      Response out;
      out.status = res->status;
      try {
        out.body = res->body.empty() ? nlohmann::json() : nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        throw Error(unavailable, url + path + " returned a non-JSON body");
      }
      return out;
    }
    if (attempt < options.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw Error(unavailable, url + path + " unreachable after " + std::to_string(options.attempts) +
                               " attempts (" + last_error + ")");
}

}  // namespace biastest::http
