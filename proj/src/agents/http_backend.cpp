#include <cstdlib>

#include "fairlab/agents.hpp"
#include "fairlab/errors.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fairlab {
namespace {

std::string env_or(const char* name, std::string fallback = {}) {
  const char* value = std::getenv(name);
  return value != nullptr ? std::string(value) : std::move(fallback);
}

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint URL '" + url + "' lacks a scheme");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

nlohmann::json post_json(const HttpSettings& settings, const nlohmann::json& body) {
  if (settings.endpoint.empty()) {
    throw ConfigError("HTTP backend endpoint is not configured");
  }
  const auto url = split_url(settings.endpoint);
  httplib::Client client(url.origin);
  client.set_connection_timeout(settings.timeout_seconds, 0);
  client.set_read_timeout(settings.timeout_seconds, 0);
  httplib::Headers headers;
  if (!settings.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + settings.api_key);
  }
  const auto result =
      client.Post(url.path, headers, body.dump(), "application/json");
  if (!result) {
    throw TransportError("request to " + settings.endpoint +
                         " failed: " + httplib::to_string(result.error()));
  }
  if (result->status < 200 || result->status >= 300) {
    throw TransportError("request to " + settings.endpoint + " returned HTTP " +
                         std::to_string(result->status));
  }
  try {
    return nlohmann::json::parse(result->body);
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("unparseable response body: ") + e.what());
  }
}

}  // namespace

HttpSettings HttpSettings::from_environment() {
  HttpSettings s;
  s.endpoint = env_or("FAIRLAB_LLM_URL");
  s.model = env_or("FAIRLAB_LLM_MODEL");
  s.api_key = env_or("FAIRLAB_LLM_API_KEY");
  return s;
}

HttpBackend::HttpBackend(HttpSettings settings) : settings_(std::move(settings)) {}

std::string HttpBackend::complete(const ChatRequest& request) {
  nlohmann::json body;
  body["model"] = settings_.model;
  body["messages"] = nlohmann::json::array();
  if (!request.system.empty()) {
    body["messages"].push_back({{"role", "system"}, {"content", request.system}});
  }
  body["messages"].push_back({{"role", "user"}, {"content", request.user}});
  body["temperature"] = request.decode.temperature;
  body["max_tokens"] = request.decode.max_tokens;
  const auto reply = post_json(settings_, body);
  try {
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed chat completion: ") + e.what());
  }
}

HttpEmbedder::HttpEmbedder(HttpSettings settings, std::size_t dimension)
    : settings_(std::move(settings)), dimension_(dimension) {}

HttpEmbedder HttpEmbedder::from_environment(std::size_t dimension) {
  HttpSettings s;
  s.endpoint = env_or("FAIRLAB_EMBED_URL");
  s.model = env_or("FAIRLAB_EMBED_MODEL");
  s.api_key = env_or("FAIRLAB_LLM_API_KEY");
  return HttpEmbedder(std::move(s), dimension);
}

std::vector<double> HttpEmbedder::embed(std::string_view text) {
  if (text.empty()) throw ArgumentError("cannot embed empty text");
  nlohmann::json body;
  body["model"] = settings_.model;
  body["input"] = std::string(text);
  const auto reply = post_json(settings_, body);
  std::vector<double> out;
  try {
    out = reply.at("data").at(0).at("embedding").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw TransportError(std::string("malformed embedding response: ") + e.what());
  }
  if (out.size() != dimension_) {
    throw ValidationError("embedding service returned dimension " +
                          std::to_string(out.size()) + ", expected " +
                          std::to_string(dimension_));
  }
  return out;
}

}  // namespace fairlab
