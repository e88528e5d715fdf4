#pragma once

#include <functional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "persona/backend.hpp"
#include "persona/wire.hpp"

namespace persona {

/// Serves any ActivationBackend over the activation wire protocol. Used to
/// expose the synthetic backend to remote clients and for conformance tests.
class WireServer {
 public:
  explicit WireServer(const ActivationBackend& backend) : backend_(backend) { install_routes(); }

  httplib::Server& http() { return server_; }

  /// Binds to an ephemeral port on host; returns the port.
  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  using Handler = std::function<nlohmann::json(const nlohmann::json&)>;

  void route(const std::string& path, Handler handler) {
    server_.Post(path, [handler](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
          throw Error(ErrorCode::invalid_argument, std::string("body is not JSON: ") + e.what());
        }
        return handler(body);
      });
    });
  }

  static void respond(httplib::Response& res, const std::function<nlohmann::json()>& fn) {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const Error& e) {
      res.status = wire::http_status(e.code());
      res.set_content(wire::error_body(e.code(), e.what()).dump(), "application/json");
    } catch (const nlohmann::json::exception& e) {
      res.status = 400;
      res.set_content(wire::error_body(ErrorCode::invalid_argument, e.what()).dump(), "application/json");
    }
  }

  void install_routes() {
    server_.Get("/v1/descriptor", [this](const httplib::Request&, httplib::Response& res) {
      respond(res, [this] {
        const auto& d = backend_.descriptor();
        return nlohmann::json{{"backend_id", d.backend_id},
                              {"model_name", d.model_name},
                              {"num_layers", d.num_layers},
                              {"hidden_dim", d.hidden_dim}};
      });
    });
    route("/v1/prompt_activations", [this](const nlohmann::json& body) {
      if (body.value("reduction", std::string("final_token")) != "final_token") {
        throw Error(ErrorCode::invalid_argument, "prompt_activations supports reduction 'final_token' only");
      }
      return wire::encode_vectors(backend_.prompt_activations(body.at("system_prompt").get<std::string>()));
    });
    route("/v1/generate", [this](const nlohmann::json& body) {
      if (body.value("reduction", std::string("mean_tokens")) != "mean_tokens") {
        throw Error(ErrorCode::invalid_argument, "generate supports reduction 'mean_tokens' only");
      }
      auto rec = backend_.generate_with_activations(body.at("system_prompt").get<std::string>(),
                                                    body.at("question").get<std::string>());
      auto out = wire::encode_vectors(rec.activations);
      out["response_text"] = rec.response_text;
      out["refusal"] = rec.refusal;
      return out;
    });
    route("/v1/chat", [this](const nlohmann::json& body) {
      auto messages = wire::decode_messages(body.at("messages"));
      return nlohmann::json{{"reply", backend_.chat(body.at("system_prompt").get<std::string>(), messages)}};
    });
  }

  const ActivationBackend& backend_;
  httplib::Server server_;
};

}  // namespace persona
