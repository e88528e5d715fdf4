#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <string>
#include <string_view>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "persona/backend.hpp"
#include "persona/hash.hpp"
#include "persona/wire.hpp"

namespace persona {

struct RemoteOptions {
  int max_attempts = 3;
  std::chrono::milliseconds retry_backoff{200};
  std::chrono::seconds timeout{120};
  std::size_t max_tokens = 256;
};

/// Client for a model server speaking the activation wire protocol. The
/// descriptor is fetched once at construction; every later response whose
/// shape disagrees with it is rejected as a protocol violation.
class RemoteBackend final : public ActivationBackend {
 public:
  explicit RemoteBackend(std::string base_url, RemoteOptions options = {})
      : base_url_(std::move(base_url)), options_(options) {
    auto body = request("GET", "/v1/descriptor", nlohmann::json());
    descriptor_ = descriptor_from_json(body);
    descriptor_.kind = BackendKind::remote;
  }

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const std::string& base_url() const { return base_url_; }

  LayerVectors prompt_activations(std::string_view system_prompt) const override {
    require_non_empty(system_prompt, "system prompt");
    nlohmann::json req = {{"system_prompt", system_prompt}, {"reduction", "final_token"}};
    auto v = wire::decode_vectors(request("POST", "/v1/prompt_activations", req), Reduction::final_token);
    check_shape(v);
    return v;
  }

  GenerationRecord generate_with_activations(std::string_view system_prompt,
                                             std::string_view question) const override {
    require_non_empty(system_prompt, "system prompt");
    require_non_empty(question, "question");
    nlohmann::json req = {{"system_prompt", system_prompt},
                          {"question", question},
                          {"reduction", "mean_tokens"},
                          {"max_tokens", options_.max_tokens}};
    GenerationRecord rec;
    rec.request_id = next_request_id();
    req["request_id"] = rec.request_id;
    auto body = request("POST", "/v1/generate", req);
    try {
      rec.response_text = body.at("response_text").get<std::string>();
      rec.refusal = body.value("refusal", false);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::protocol_violation, std::string("generate: ") + e.what());
    }
    rec.activations = wire::decode_vectors(body, Reduction::mean_tokens);
    check_shape(rec.activations);
    rec.system_prompt = std::string(system_prompt);
    rec.question = std::string(question);
    rec.backend = descriptor_;
    return rec;
  }

  std::string chat(std::string_view system_prompt, std::span<const ChatMessage> messages) const override {
    nlohmann::json req = {{"system_prompt", system_prompt}, {"messages", wire::encode_messages(messages)}};
    auto body = request("POST", "/v1/chat", req);
    if (!body.contains("reply") || !body["reply"].is_string()) {
      throw Error(ErrorCode::protocol_violation, "chat: missing 'reply'");
    }
    return body["reply"].get<std::string>();
  }

 private:
  std::string next_request_id() const {
    return "req-" + hash::sha256_hex(base_url_ + std::to_string(counter_.fetch_add(1)) +
                                     std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()))
                        .substr(0, 16);
  }

  // Transport failures and 5xx are retried with the same body (requests are
  // idempotent); 4xx are surfaced immediately.
  nlohmann::json request(const std::string& method, const std::string& path, const nlohmann::json& body) const {
    std::string last_error;
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
      if (attempt > 0) std::this_thread::sleep_for(options_.retry_backoff * attempt);
      httplib::Client cli(base_url_);
      cli.set_connection_timeout(options_.timeout);
      cli.set_read_timeout(options_.timeout);
      cli.set_write_timeout(options_.timeout);
      httplib::Result res = method == "GET" ? cli.Get(path) : cli.Post(path, body.dump(), "application/json");
      if (!res) {
        last_error = path + ": " + httplib::to_string(res.error());
        continue;
      }
      nlohmann::json parsed;
      try {
        parsed = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::parse_error&) {
        throw Error(ErrorCode::protocol_violation, path + ": response body is not JSON");
      }
      if (res->status >= 200 && res->status < 300) return parsed;
      const std::string detail = parsed.is_object() ? parsed.value("message", std::string()) : std::string();
      last_error = path + ": HTTP " + std::to_string(res->status) + " " + detail;
      if (res->status < 500) throw Error(ErrorCode::protocol_violation, last_error);
    }
    throw Error(ErrorCode::transport_failure, last_error);
  }

  std::string base_url_;
  RemoteOptions options_;
  BackendDescriptor descriptor_;
  mutable std::atomic<std::uint64_t> counter_{0};
};

}  // namespace persona
