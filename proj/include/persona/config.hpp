#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "persona/gateway.hpp"
#include "persona/http_provider.hpp"
#include "persona/io.hpp"
#include "persona/registry.hpp"
#include "persona/remote_backend.hpp"
#include "persona/service.hpp"
#include "persona/synthetic_backend.hpp"
#include "persona/synthetic_provider.hpp"

namespace persona {

/// Run configuration shared by every CLI phase. Relative paths in the file
/// resolve against the file's directory.
///
///   {
///     "registry": "...", "templates": "...",
///     "backend":  {"kind": "synthetic", "synthetic_config": "..."} | {"kind": "remote", "url": "..."},
///     "gateway":  {"mode": "synthetic" | "live", "synthetic_config": "...",
///                  "generator": {base_url, path, model, api_key_env}, "judge": {...}, "max_attempts": 3},
///     "pipeline": {"pairs": 5, "situations": 40, "leveled_per_level": 5,
///                  "calibration_per_length": 5, "projection_mode": "double"},
///     "service":  {...}
///   }
struct StudioConfig {
  std::filesystem::path registry_path;
  std::filesystem::path templates_path;

  std::string backend_kind = "synthetic";
  std::filesystem::path backend_synthetic_config;
  std::string backend_url;

  std::string gateway_mode = "synthetic";
  std::filesystem::path gateway_synthetic_config;
  HttpProviderConfig generator;
  HttpProviderConfig judge;
  int max_attempts = 3;

  int pairs = 5;
  int situations = 40;
  int leveled_per_level = 5;
  int calibration_per_length = 5;
  ProjectionMode mode = ProjectionMode::double_norm;

  ServiceConfig service;

  std::optional<std::uint64_t> seed_override;
};

namespace detail {

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

inline HttpProviderConfig provider_from_json(const nlohmann::json& j) {
  HttpProviderConfig c;
  c.base_url = j.value("base_url", std::string());
  c.path = j.value("path", c.path);
  c.model = j.value("model", std::string());
  c.api_key_env = j.value("api_key_env", std::string());
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  return c;
}

}  // namespace detail

inline StudioConfig studio_config_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  try {
    StudioConfig c;
    c.registry_path = detail::resolve(base, j.at("registry").get<std::string>());
    c.templates_path = detail::resolve(base, j.at("templates").get<std::string>());
    const auto& b = j.at("backend");
    c.backend_kind = b.value("kind", c.backend_kind);
    c.backend_synthetic_config = detail::resolve(base, b.value("synthetic_config", std::string()));
    c.backend_url = b.value("url", std::string());
    if (j.contains("gateway")) {
      const auto& g = j["gateway"];
      c.gateway_mode = g.value("mode", c.gateway_mode);
      c.gateway_synthetic_config = detail::resolve(base, g.value("synthetic_config", std::string()));
      if (g.contains("generator")) c.generator = detail::provider_from_json(g["generator"]);
      if (g.contains("judge")) c.judge = detail::provider_from_json(g["judge"]);
      c.max_attempts = g.value("max_attempts", c.max_attempts);
    }
    if (c.gateway_synthetic_config.empty()) c.gateway_synthetic_config = c.backend_synthetic_config;
    if (j.contains("pipeline")) {
      const auto& p = j["pipeline"];
      c.pairs = p.value("pairs", c.pairs);
      c.situations = p.value("situations", c.situations);
      c.leveled_per_level = p.value("leveled_per_level", c.leveled_per_level);
      c.calibration_per_length = p.value("calibration_per_length", c.calibration_per_length);
      c.mode = parse_projection_mode(p.value("projection_mode", std::string("double")));
    }
    if (j.contains("service")) c.service = ServiceConfig::from_json(j["service"]);
    if (c.service.synthetic_config_path.empty()) {
      c.service.synthetic_config_path = c.backend_synthetic_config.string();
    } else {
      c.service.synthetic_config_path = detail::resolve(base, c.service.synthetic_config_path).string();
    }
    if (c.service.backend_url.empty()) c.service.backend_url = c.backend_url;
    if (!c.service.library_path.empty()) {
      c.service.library_path = detail::resolve(base, c.service.library_path).string();
    }
    if (!c.service.session_dir.empty()) c.service.session_dir = detail::resolve(base, c.service.session_dir).string();
    if (c.backend_kind != "synthetic" && c.backend_kind != "remote") {
      throw Error(ErrorCode::config_error, "backend.kind must be 'synthetic' or 'remote'");
    }
    if (c.gateway_mode != "synthetic" && c.gateway_mode != "live") {
      throw Error(ErrorCode::config_error, "gateway.mode must be 'synthetic' or 'live'");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config_error, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::config_error) throw;
    throw Error(ErrorCode::config_error, e.what());
  }
}

inline StudioConfig load_studio_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = io::read_json(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::config_error, e.what());
  }
  return studio_config_from_json(j, path.parent_path());
}

inline SyntheticConfig synthetic_config_for(const std::filesystem::path& path, const StudioConfig& c) {
  if (path.empty()) throw Error(ErrorCode::config_error, "no synthetic_config path configured");
  auto cfg = load_synthetic_config(path);
  if (c.seed_override) cfg.seed = *c.seed_override;
  return cfg;
}

inline std::shared_ptr<ActivationBackend> make_backend(const StudioConfig& c) {
  if (c.backend_kind == "remote") {
    if (c.backend_url.empty()) throw Error(ErrorCode::config_error, "backend.url is required for a remote backend");
    return std::make_shared<RemoteBackend>(c.backend_url);
  }
  return std::make_shared<SyntheticBackend>(synthetic_config_for(c.backend_synthetic_config, c));
}

/// replay_dir: serve completions only from fixtures; record_dir: record every
/// completion of the configured providers.
inline Gateway make_gateway(const StudioConfig& c, const TraitRegistry& registry,
                            const std::filesystem::path& replay_dir = {}, const std::filesystem::path& record_dir = {}) {
  if (!replay_dir.empty() && !record_dir.empty()) {
    throw Error(ErrorCode::config_error, "--replay and --record are mutually exclusive");
  }
  std::shared_ptr<CompletionProvider> generator, judge;
  if (!replay_dir.empty()) {
    if (!std::filesystem::is_directory(replay_dir)) {
      throw Error(ErrorCode::config_error, "replay fixture directory '" + replay_dir.string() + "' does not exist");
    }
    generator = judge = std::make_shared<ReplayProvider>(std::make_shared<FixtureStore>(replay_dir));
  } else {
    if (c.gateway_mode == "synthetic") {
      generator = judge = std::make_shared<SyntheticProvider>(synthetic_config_for(c.gateway_synthetic_config, c));
    } else {
      generator = std::make_shared<HttpChatProvider>(c.generator);
      judge = std::make_shared<HttpChatProvider>(c.judge);
    }
    if (!record_dir.empty()) {
      auto store = std::make_shared<FixtureStore>(record_dir);
      const bool shared = generator == judge;
      generator = std::make_shared<RecordingProvider>(generator, store);
      judge = shared ? generator : std::make_shared<RecordingProvider>(judge, store);
    }
  }
  GatewayOptions opts;
  opts.max_attempts = c.max_attempts;
  return Gateway(PromptTemplates::load(c.templates_path), registry, generator, judge, opts);
}

}  // namespace persona
