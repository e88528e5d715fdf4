#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "persona/gateway.hpp"

namespace persona {

struct HttpProviderConfig {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env;  // name of the environment variable holding the key
  int timeout_seconds = 120;
};

/// Generic chat-completion adapter (OpenAI-compatible request/response shape).
/// The rendered template is sent as a single user message.
class HttpChatProvider final : public CompletionProvider {
 public:
  explicit HttpChatProvider(HttpProviderConfig config) : config_(std::move(config)) {
    if (config_.base_url.empty() || config_.model.empty()) {
      throw Error(ErrorCode::config_error, "http provider needs base_url and model");
    }
  }

  std::string name() const override { return "http(" + config_.model + ")"; }

  static nlohmann::json request_body(const HttpProviderConfig& config, const CompletionRequest& req) {
    return {{"model", config.model},
            {"temperature", req.temperature},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", req.text}}})}};
  }

  static std::string parse_response(const std::string& body) {
    try {
      auto j = nlohmann::json::parse(body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::provider_failure, std::string("unexpected completion payload: ") + e.what());
    }
  }

  std::string complete(const CompletionRequest& req) override {
    const char* key = config_.api_key_env.empty() ? nullptr : std::getenv(config_.api_key_env.c_str());
    if (!config_.api_key_env.empty() && (key == nullptr || *key == '\0')) {
      throw Error(ErrorCode::config_error, "environment variable " + config_.api_key_env + " is not set");
    }
    httplib::Client cli(config_.base_url);
    cli.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (key) headers.emplace("Authorization", std::string("Bearer ") + key);
    auto res = cli.Post(config_.path, headers, request_body(config_, req).dump(), "application/json");
    if (!res) throw Error(ErrorCode::provider_failure, config_.base_url + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
      throw Error(ErrorCode::provider_failure, config_.base_url + ": HTTP " + std::to_string(res->status));
    }
    return parse_response(res->body);
  }

 private:
  HttpProviderConfig config_;
};

}  // namespace persona
