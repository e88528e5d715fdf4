#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"
#include "persona/linalg.hpp"

namespace persona {

enum class BackendKind { synthetic, remote };

inline std::string_view to_string(BackendKind k) { return k == BackendKind::synthetic ? "synthetic" : "remote"; }

struct BackendDescriptor {
  std::string backend_id;
  std::string model_name;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  BackendKind kind = BackendKind::synthetic;

  /// Same model identity: activations from the two are interchangeable.
  bool same_model(const BackendDescriptor& other) const {
    return model_name == other.model_name && num_layers == other.num_layers && hidden_dim == other.hidden_dim;
  }

  friend bool operator==(const BackendDescriptor&, const BackendDescriptor&) = default;
};

inline nlohmann::ordered_json to_json(const BackendDescriptor& d) {
  return {{"backend_id", d.backend_id},
          {"model_name", d.model_name},
          {"num_layers", d.num_layers},
          {"hidden_dim", d.hidden_dim},
          {"kind", to_string(d.kind)}};
}

inline BackendDescriptor descriptor_from_json(const nlohmann::json& j) {
  try {
    BackendDescriptor d;
    d.backend_id = j.at("backend_id").get<std::string>();
    d.model_name = j.at("model_name").get<std::string>();
    d.num_layers = j.at("num_layers").get<std::size_t>();
    d.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    d.kind = j.value("kind", std::string("remote")) == "synthetic" ? BackendKind::synthetic : BackendKind::remote;
    if (d.num_layers == 0 || d.hidden_dim == 0) {
      throw Error(ErrorCode::protocol_violation, "descriptor dimensions must be positive");
    }
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::protocol_violation, std::string("malformed descriptor: ") + e.what());
  }
}

struct ChatMessage {
  std::string role;  // "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

/// One model response to (system prompt, question) with its token-averaged
/// activations. A refusal is flagged rather than raised.
struct GenerationRecord {
  std::string system_prompt;
  std::string question;
  std::string response_text;
  bool refusal = false;
  LayerVectors activations;
  BackendDescriptor backend;
  std::string request_id;
};

/// Source of prompt activations, generations and chat replies for one model.
class ActivationBackend {
 public:
  virtual ~ActivationBackend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;

  /// Final-token activations of the system prompt at every layer.
  virtual LayerVectors prompt_activations(std::string_view system_prompt) const = 0;

  virtual GenerationRecord generate_with_activations(std::string_view system_prompt,
                                                     std::string_view question) const = 0;

  virtual std::string chat(std::string_view system_prompt, std::span<const ChatMessage> messages) const = 0;

  /// Ground-truth trait direction; only meaningful for synthetic backends.
  virtual std::vector<double> planted_direction(std::string_view trait, std::size_t layer) const {
    (void)trait;
    (void)layer;
    throw Error(ErrorCode::invalid_argument, "planted_direction is only available on a synthetic backend");
  }

 protected:
  void check_shape(const LayerVectors& v) const {
    const auto& d = descriptor();
    if (v.num_layers() != d.num_layers || v.hidden_dim() != d.hidden_dim) {
      throw Error(ErrorCode::protocol_violation,
                  "activations shape (" + std::to_string(v.num_layers()) + ", " + std::to_string(v.hidden_dim()) +
                      ") differs from descriptor (" + std::to_string(d.num_layers) + ", " +
                      std::to_string(d.hidden_dim) + ")");
    }
  }
};

inline void require_non_empty(std::string_view text, std::string_view what) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    throw Error(ErrorCode::invalid_argument, std::string(what) + " must be non-empty");
  }
}

}  // namespace persona
