#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/backend.hpp"
#include "persona/error.hpp"
#include "persona/linalg.hpp"

// JSON bodies of the activation wire protocol:
//
//   GET  /v1/descriptor          -> {backend_id, model_name, num_layers, hidden_dim}
//   POST /v1/prompt_activations  {system_prompt, reduction:"final_token"} -> {shape:[L,D], activations:[...]}
//   POST /v1/generate            {system_prompt, question, reduction:"mean_tokens", max_tokens}
//                                -> {response_text, refusal, shape, activations}
//   POST /v1/chat                {system_prompt, messages:[{role, content}]} -> {reply}
//
// Errors carry an HTTP status and {error_code, message}. Activations are
// row-major (layer, component).
namespace persona::wire {

inline nlohmann::json encode_vectors(const LayerVectors& v) {
  nlohmann::json j;
  j["shape"] = {v.num_layers(), v.hidden_dim()};
  j["activations"] = std::vector<double>(v.values().begin(), v.values().end());
  return j;
}

inline LayerVectors decode_vectors(const nlohmann::json& j, Reduction reduction) {
  try {
    const auto& shape = j.at("shape");
    if (!shape.is_array() || shape.size() != 2) throw Error(ErrorCode::protocol_violation, "shape must be [L, D]");
    const auto L = shape[0].get<std::size_t>();
    const auto D = shape[1].get<std::size_t>();
    auto values = j.at("activations").get<std::vector<double>>();
    if (values.size() != L * D) {
      throw Error(ErrorCode::protocol_violation, "activation count does not match declared shape");
    }
    return LayerVectors(L, D, std::move(values), reduction);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::protocol_violation, std::string("malformed activations: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::protocol_violation) throw;
    throw Error(ErrorCode::protocol_violation, e.what());
  }
}

inline nlohmann::json encode_messages(std::span<const ChatMessage> messages) {
  auto arr = nlohmann::json::array();
  for (const auto& m : messages) arr.push_back({{"role", m.role}, {"content", m.content}});
  return arr;
}

inline std::vector<ChatMessage> decode_messages(const nlohmann::json& arr) {
  std::vector<ChatMessage> out;
  for (const auto& m : arr) out.push_back({m.at("role").get<std::string>(), m.at("content").get<std::string>()});
  return out;
}

inline nlohmann::json error_body(ErrorCode code, const std::string& message) {
  return {{"error_code", std::string(to_string(code))}, {"message", message}};
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument:
    case ErrorCode::malformed_document:
      return 400;
    case ErrorCode::not_found:
    case ErrorCode::unknown_id:
      return 404;
    case ErrorCode::conflict:
    case ErrorCode::library_mismatch:
    case ErrorCode::mode_mismatch:
      return 409;
    case ErrorCode::transport_failure:
    case ErrorCode::protocol_violation:
    case ErrorCode::provider_failure:
      return 502;
    default:
      return 500;
  }
}

}  // namespace persona::wire
