#pragma once

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "persona/backend.hpp"
#include "persona/library.hpp"
#include "persona/scoring.hpp"
#include "persona/session.hpp"
#include "persona/wire.hpp"

namespace persona {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string library_path;
  std::string backend_url;            // remote model server; empty selects the synthetic backend
  std::string synthetic_config_path;  // used when backend_url is empty
  std::string session_dir;            // empty keeps sessions in memory
  std::vector<std::string> cors_origins = {"http://localhost:4200"};
  bool require_persona_before_chat = true;
  std::size_t snapshot_every = 16;

  static ServiceConfig from_json(const nlohmann::json& j) {
    ServiceConfig c;
    try {
      c.host = j.value("host", c.host);
      c.port = j.value("port", c.port);
      c.library_path = j.value("library_path", c.library_path);
      c.backend_url = j.value("backend_url", c.backend_url);
      c.synthetic_config_path = j.value("synthetic_config", c.synthetic_config_path);
      c.session_dir = j.value("session_dir", c.session_dir);
      c.cors_origins = j.value("cors_origins", c.cors_origins);
      c.require_persona_before_chat = j.value("require_persona_before_chat", c.require_persona_before_chat);
      c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::config_error, std::string("service config: ") + e.what());
    }
    return c;
  }

  /// PERSONA_LIBRARY_PATH, PERSONA_BACKEND_URL and PERSONA_PORT win over the file.
  void apply_env_overrides() {
    if (const char* v = std::getenv("PERSONA_LIBRARY_PATH"); v && *v) library_path = v;
    if (const char* v = std::getenv("PERSONA_BACKEND_URL"); v && *v) backend_url = v;
    if (const char* v = std::getenv("PERSONA_PORT"); v && *v) {
      try {
        port = std::stoi(v);
      } catch (const std::exception&) {
        throw Error(ErrorCode::config_error, std::string("PERSONA_PORT is not a number: ") + v);
      }
    }
  }
};

/// Code points in a UTF-8 string; the prompt minimum counts characters, not bytes.
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

/// Error raised inside a route: an ErrorCode plus a structured detail object.
struct ServiceError : Error {
  ServiceError(ErrorCode code, const std::string& message, nlohmann::json detail)
      : Error(code, message), detail(std::move(detail)) {}
  nlohmann::json detail;
};

/// HTTP API for the studio: trait metadata, scoring, design sessions and chat.
class PersonaService {
 public:
  using Clock = std::function<std::string()>;

  PersonaService(PersonaLibrary library, std::shared_ptr<const ActivationBackend> backend,
                 std::shared_ptr<SessionStore> sessions, ServiceConfig config = {}, Clock clock = {})
      : library_(std::move(library)),
        backend_(std::move(backend)),
        sessions_(std::move(sessions)),
        config_(std::move(config)),
        clock_(std::move(clock)) {
    if (!clock_) clock_ = [] { return std::string(); };
    if (!library_.backend.same_model(backend_->descriptor())) {
      throw Error(ErrorCode::library_mismatch, "library model '" + library_.backend.model_name +
                                                   "' does not match backend model '" +
                                                   backend_->descriptor().model_name + "'");
    }
    install_routes();
  }

  httplib::Server& http() { return server_; }
  const ServiceConfig& config() const { return config_; }

  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

  /// Registry payload in display order (category order, then registry order).
  nlohmann::ordered_json traits_payload() const {
    const auto& reg = library_.registry;
    nlohmann::ordered_json j;
    j["registry_version"] = reg.version();
    j["category_order"] = nlohmann::ordered_json::array();
    for (auto c : reg.category_order()) j["category_order"].push_back(to_string(c));
    j["labels"] = nlohmann::ordered_json::array();
    for (const auto* l : reg.display_order()) {
      j["labels"].push_back({{"id", l->id},
                             {"display_name", l->display_name},
                             {"description", l->description},
                             {"category", to_string(l->category)},
                             {"sister", l->sister},
                             {"dimension", l->dimension},
                             {"polarity", to_string(l->polarity)}});
    }
    return j;
  }

  nlohmann::json create_session(const nlohmann::json& body) {
    const auto avatar = body.at("avatar_id").get<std::string>();
    return {{"session_id", sessions_->create(avatar)}};
  }

  nlohmann::ordered_json score(const nlohmann::json& body) {
    const auto session_id = body.at("session_id").get<std::string>();
    const auto prompt = body.at("system_prompt").get<std::string>();
    const auto chars = utf8_length(prompt);
    if (chars < kMinPromptChars) {
      throw ServiceError(ErrorCode::invalid_argument,
                         "system prompt must be at least " + std::to_string(kMinPromptChars) + " characters",
                         {{"reason", "prompt_too_short"}, {"min_chars", kMinPromptChars}, {"actual_chars", chars}});
    }
    return sessions_->with_session(session_id, [&](SessionStore::Handle& h) {
      auto report = score_all(prompt, library_, *backend_, clock_());
      validate_report(report, library_.registry);
      auto j = to_json(report);
      const auto report_id = h.next_report_id();
      j["report_id"] = report_id;
      j["session_id"] = session_id;
      h.add_revision(prompt, report_id, nlohmann::json(j));
      return j;
    });
  }

  nlohmann::json chat(const nlohmann::json& body) {
    const auto session_id = body.at("session_id").get<std::string>();
    const auto message = body.at("message").get<std::string>();
    require_non_empty(message, "message");
    const std::string override_prompt = body.value("system_prompt", std::string());
    return sessions_->with_session(session_id, [&](SessionStore::Handle& h) {
      const auto* rev = h.state().current_revision();
      if (config_.require_persona_before_chat) {
        if (h.state().active_report_id.empty() || !rev) {
          throw ServiceError(ErrorCode::conflict, "generate a persona report before chatting",
                             {{"reason", "no_active_report"}});
        }
        if (!override_prompt.empty() && override_prompt != rev->text) {
          throw ServiceError(ErrorCode::conflict, "the system prompt changed; generate a new persona report",
                             {{"reason", "stale_report"}});
        }
      } else if (!override_prompt.empty() && (!rev || override_prompt != rev->text)) {
        h.add_revision(override_prompt, "", nullptr);
        rev = h.state().current_revision();
      }
      if (!rev) {
        throw ServiceError(ErrorCode::conflict, "session has no system prompt yet", {{"reason", "no_prompt"}});
      }
      std::vector<ChatMessage> messages;
      for (const auto& t : h.state().transcript) messages.push_back({t.role, t.content});
      messages.push_back({"user", message});
      auto reply = backend_->chat(rev->text, messages);
      h.add_chat(message, reply);
      return nlohmann::json{{"reply", reply}, {"transcript_length", h.state().transcript.size()}};
    });
  }

 private:
  void send_error(httplib::Response& res, ErrorCode code, const std::string& message,
                  const nlohmann::json& detail) const {
    res.status = wire::http_status(code);
    nlohmann::ordered_json body;
    body["error_code"] = to_string(code);
    body["message"] = message;
    body["detail"] = detail.is_null() ? nlohmann::json::object() : detail;
    res.set_content(body.dump(), "application/json");
  }

  template <typename Fn>
  void respond(httplib::Response& res, Fn&& fn) const {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const ServiceError& e) {
      send_error(res, e.code(), e.what(), e.detail);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what(), {{"upstream", is_upstream(e.code())}});
    } catch (const nlohmann::json::exception& e) {
      send_error(res, ErrorCode::invalid_argument, std::string("bad request body: ") + e.what(), {});
    }
  }

  static nlohmann::json parse_body(const httplib::Request& req) {
    try {
      return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::invalid_argument, std::string("body is not JSON: ") + e.what());
    }
  }

  void install_routes() {
    const std::set<std::string> origins(config_.cors_origins.begin(), config_.cors_origins.end());
    server_.set_post_routing_handler([origins](const httplib::Request& req, httplib::Response& res) {
      const auto origin = req.get_header_value("Origin");
      if (!origin.empty() && origins.count(origin)) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Vary", "Origin");
      }
    });
    server_.Options(R"(/api/.*)", [origins](const httplib::Request& req, httplib::Response& res) {
      const auto origin = req.get_header_value("Origin");
      if (!origins.count(origin)) {
        res.status = 403;
        return;
      }
      res.status = 204;
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });

    server_.Get("/api/traits", [this](const httplib::Request&, httplib::Response& res) {
      respond(res, [this] { return traits_payload(); });
    });
    server_.Post("/api/session", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return create_session(parse_body(req)); });
    });
    server_.Get(R"(/api/session/([A-Za-z0-9_-]+))", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return to_json(sessions_->get(req.matches[1].str())); });
    });
    server_.Post("/api/persona/score", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return score(parse_body(req)); });
    });
    server_.Post("/api/chat", [this](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] { return chat(parse_body(req)); });
    });
  }

  PersonaLibrary library_;
  std::shared_ptr<const ActivationBackend> backend_;
  std::shared_ptr<SessionStore> sessions_;
  ServiceConfig config_;
  Clock clock_;
  httplib::Server server_;
};

}  // namespace persona
