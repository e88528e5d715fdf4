#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"
#include "persona/hash.hpp"
#include "persona/io.hpp"
#include "persona/registry.hpp"

namespace persona {

enum class Purpose { contrastive_pair, situation, leveled_prompt, extremal_prompt, judge };

inline std::string_view to_string(Purpose p) {
  switch (p) {
    case Purpose::contrastive_pair: return "contrastive_pair";
    case Purpose::situation: return "situation";
    case Purpose::leveled_prompt: return "leveled_prompt";
    case Purpose::extremal_prompt: return "extremal_prompt";
    case Purpose::judge: return "judge";
  }
  return "judge";
}

/// A rendered template plus the structured fields it was rendered from.
/// `sample_index` distinguishes repeated draws of the same template and
/// `attempt` distinguishes retries, so both participate in the fixture key.
struct CompletionRequest {
  Purpose purpose = Purpose::judge;
  std::string route;  // "generation" or "judge"
  std::string text;
  double temperature = 1.0;
  std::string trait;
  std::map<std::string, std::string> variables;
  int sample_index = 0;
  int attempt = 0;

  nlohmann::ordered_json canonical() const {
    nlohmann::ordered_json j;
    j["purpose"] = to_string(purpose);
    j["route"] = route;
    j["trait"] = trait;
    j["sample_index"] = sample_index;
    j["attempt"] = attempt;
    j["temperature"] = temperature;
    j["variables"] = variables;
    j["text"] = text;
    return j;
  }

  std::string fixture_key() const { return hash::sha256_hex(canonical().dump()); }
};

struct JudgeScore {
  int value = 0;  // 0..100
  std::string trait;
  std::string response_id;
};

struct ContrastivePair {
  std::string positive;
  std::string negative;

  friend bool operator==(const ContrastivePair&, const ContrastivePair&) = default;
};

class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
  virtual std::string name() const = 0;
};

/// Content-addressed directory of {request, response} documents, one file per
/// request keyed by the SHA-256 of its canonical form.
class FixtureStore {
 public:
  explicit FixtureStore(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }

  std::filesystem::path path_for(const CompletionRequest& req) const { return dir_ / (req.fixture_key() + ".json"); }

  std::optional<std::string> lookup(const CompletionRequest& req) const {
    auto p = path_for(req);
    if (!std::filesystem::exists(p)) return std::nullopt;
    auto doc = io::read_json(p);
    if (!doc.contains("response") || !doc["response"].is_string()) {
      throw Error(ErrorCode::malformed_document, p.string() + ": missing 'response'");
    }
    return doc["response"].get<std::string>();
  }

  void record(const CompletionRequest& req, const std::string& response) {
    nlohmann::ordered_json doc;
    doc["request"] = req.canonical();
    doc["response"] = response;
    std::lock_guard<std::mutex> lock(mutex_);
    io::write_json(path_for(req), doc);
  }

 private:
  std::filesystem::path dir_;
  std::mutex mutex_;
};

/// Forwards to an inner provider and records every exchange.
class RecordingProvider final : public CompletionProvider {
 public:
  RecordingProvider(std::shared_ptr<CompletionProvider> inner, std::shared_ptr<FixtureStore> store)
      : inner_(std::move(inner)), store_(std::move(store)) {}

  std::string complete(const CompletionRequest& request) override {
    auto response = inner_->complete(request);
    store_->record(request, response);
    return response;
  }
  std::string name() const override { return "record(" + inner_->name() + ")"; }

 private:
  std::shared_ptr<CompletionProvider> inner_;
  std::shared_ptr<FixtureStore> store_;
};

/// Serves only recorded exchanges; never touches the network.
class ReplayProvider final : public CompletionProvider {
 public:
  explicit ReplayProvider(std::shared_ptr<FixtureStore> store) : store_(std::move(store)) {}

  std::string complete(const CompletionRequest& request) override {
    if (auto hit = store_->lookup(request)) return *hit;
    throw Error(ErrorCode::replay_miss, "no fixture for " + std::string(to_string(request.purpose)) + " request on '" +
                                            request.trait + "' (key " + request.fixture_key() + ") in " +
                                            store_->dir().string());
  }
  std::string name() const override { return "replay"; }

 private:
  std::shared_ptr<FixtureStore> store_;
};

struct PromptTemplates {
  std::string version;
  std::map<Purpose, std::string> text;

  static PromptTemplates from_json(const nlohmann::json& j) {
    PromptTemplates t;
    t.version = j.value("version", std::string("1"));
    for (Purpose p : {Purpose::contrastive_pair, Purpose::situation, Purpose::leveled_prompt,
                      Purpose::extremal_prompt, Purpose::judge}) {
      const std::string key(to_string(p));
      if (!j.contains(key) || !j[key].is_string()) {
        throw Error(ErrorCode::config_error, "templates: missing '" + key + "'");
      }
      t.text[p] = j[key].get<std::string>();
    }
    return t;
  }

  static PromptTemplates load(const std::filesystem::path& path) { return from_json(io::read_json(path)); }

  /// Substitutes {name} placeholders; unknown names are left untouched so
  /// literal braces in templates (JSON examples) survive.
  std::string render(Purpose p, const std::map<std::string, std::string>& vars) const {
    const std::string& tpl = text.at(p);
    std::string out;
    for (std::size_t i = 0; i < tpl.size();) {
      if (tpl[i] == '{') {
        auto close = tpl.find('}', i);
        if (close != std::string::npos) {
          auto it = vars.find(tpl.substr(i + 1, close - i - 1));
          if (it != vars.end()) {
            out += it->second;
            i = close + 1;
            continue;
          }
        }
      }
      out.push_back(tpl[i++]);
    }
    return out;
  }
};

inline std::string number_word(int n) {
  static const char* kWords[] = {"zero", "one", "two", "three", "four", "five",
                                 "six",  "seven", "eight", "nine", "ten"};
  return (n >= 0 && n <= 10) ? kWords[n] : std::to_string(n);
}

struct GatewayOptions {
  int max_attempts = 3;
  double generation_temperature = 1.0;
  double judge_temperature = 0.0;
};

/// Template-driven access to the generator and judge models. Every
/// completion is validated; unparseable or out-of-range output is retried up
/// to max_attempts and then surfaced, never silently repaired.
class Gateway {
 public:
  Gateway(PromptTemplates templates, TraitRegistry registry, std::shared_ptr<CompletionProvider> generator,
          std::shared_ptr<CompletionProvider> judge, GatewayOptions options = {})
      : templates_(std::move(templates)),
        registry_(std::move(registry)),
        generator_(std::move(generator)),
        judge_(std::move(judge)),
        options_(options) {}

  const TraitRegistry& registry() const { return registry_; }
  const PromptTemplates& templates() const { return templates_; }

  std::vector<ContrastivePair> generate_contrastive_pairs(const std::string& trait, int n) {
    if (n < 1) throw Error(ErrorCode::invalid_argument, "contrastive pair count must be >= 1");
    auto req = make_request(Purpose::contrastive_pair, trait, {{"n", std::to_string(n)}}, 0);
    return with_retries(req, *generator_, [&](const std::string& text) -> std::optional<std::vector<ContrastivePair>> {
      auto j = parse_json_object(text);
      if (!j || !j->contains("pairs") || !(*j)["pairs"].is_array()) return std::nullopt;
      std::vector<ContrastivePair> pairs;
      for (const auto& p : (*j)["pairs"]) {
        if (!p.is_object() || !p.contains("positive") || !p.contains("negative") || !p["positive"].is_string() ||
            !p["negative"].is_string()) {
          return std::nullopt;
        }
        ContrastivePair cp{trim(p["positive"].get<std::string>()), trim(p["negative"].get<std::string>())};
        if (cp.positive.empty() || cp.negative.empty()) return std::nullopt;
        pairs.push_back(std::move(cp));
      }
      if (static_cast<int>(pairs.size()) != n) return std::nullopt;
      return pairs;
    });
  }

  std::vector<std::string> generate_situations(const std::string& trait, int n) {
    if (n < 1) throw Error(ErrorCode::invalid_argument, "situation count must be >= 1");
    auto req = make_request(Purpose::situation, trait, {{"n", std::to_string(n)}}, 0);
    return with_retries(req, *generator_, [&](const std::string& text) -> std::optional<std::vector<std::string>> {
      auto j = parse_json_object(text);
      if (!j || !j->contains("questions") || !(*j)["questions"].is_array()) return std::nullopt;
      std::vector<std::string> qs;
      std::set<std::string> seen;
      for (const auto& q : (*j)["questions"]) {
        if (!q.is_string()) return std::nullopt;
        auto s = trim(q.get<std::string>());
        if (s.empty() || !seen.insert(s).second) return std::nullopt;
        qs.push_back(std::move(s));
      }
      if (static_cast<int>(qs.size()) != n) return std::nullopt;
      return qs;
    });
  }

  std::string generate_leveled_prompt(const std::string& trait, int level, int sample_index, int sentences = 3) {
    if (level < 1 || level > 5) throw Error(ErrorCode::invalid_argument, "level must be in 1..5");
    auto req = make_request(Purpose::leveled_prompt, trait,
                            {{"level", std::to_string(level)}, {"sentences", number_word(sentences)}}, sample_index);
    return with_retries(req, *generator_, parse_prompt_text);
  }

  std::string generate_extremal_prompt(const std::string& trait, Polarity polarity, int num_sentences,
                                       int sample_index) {
    if (num_sentences < 1 || num_sentences > 5) throw Error(ErrorCode::invalid_argument, "num_sentences must be in 1..5");
    const auto& dim = registry_.dimension(trait);
    std::map<std::string, std::string> vars = {{"num_sentences", std::to_string(num_sentences)},
                                               {"polarity", std::string(to_string(polarity))}};
    if (polarity == Polarity::negative) vars["trait"] = "the opposite of " + dim.prompt_noun;
    auto req = make_request(Purpose::extremal_prompt, trait, std::move(vars), sample_index);
    return with_retries(req, *generator_, parse_prompt_text);
  }

  JudgeScore judge_trait_expression(const std::string& trait, const std::string& response_text,
                                    const std::string& response_id) {
    if (trim(response_text).empty()) throw Error(ErrorCode::invalid_argument, "cannot judge an empty response");
    auto req = make_request(Purpose::judge, trait, {{"response", response_text}}, 0);
    int value = with_retries(req, *judge_, parse_judge_score);
    return JudgeScore{value, trait, response_id};
  }

  /// Accepts a bare integer or {"score": n}; anything outside 0..100 is rejected.
  static std::optional<int> parse_judge_score(const std::string& text) {
    auto t = trim(text);
    if (t.empty()) return std::nullopt;
    long value = -1;
    if (t.front() == '{') {
      auto j = parse_json_object(t);
      if (!j || !j->contains("score") || !(*j)["score"].is_number_integer()) return std::nullopt;
      value = (*j)["score"].get<long>();
    } else {
      if (!std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::isdigit(c); }) || t.size() > 3) {
        return std::nullopt;
      }
      value = std::stol(t);
    }
    if (value < 0 || value > 100) return std::nullopt;
    return static_cast<int>(value);
  }

 private:
  CompletionRequest make_request(Purpose purpose, const std::string& trait, std::map<std::string, std::string> vars,
                                 int sample_index) const {
    const auto& dim = registry_.dimension(trait);
    CompletionRequest req;
    req.purpose = purpose;
    req.route = purpose == Purpose::judge ? "judge" : "generation";
    req.temperature = purpose == Purpose::judge ? options_.judge_temperature : options_.generation_temperature;
    req.trait = trait;
    if (!vars.count("trait")) vars["trait"] = dim.prompt_noun;
    req.text = templates_.render(purpose, vars);
    req.variables = std::move(vars);
    req.sample_index = sample_index;
    return req;
  }

  template <typename Parse>
  auto with_retries(CompletionRequest req, CompletionProvider& provider, Parse parse)
      -> typename decltype(parse(std::string()))::value_type {
    std::string last;
    for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
      req.attempt = attempt;
      std::string text;
      try {
        text = provider.complete(req);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::replay_miss || e.code() == ErrorCode::config_error) throw;
        last = e.what();
        continue;
      }
      if (auto parsed = parse(text)) return *parsed;
      last = "unparseable completion: " + text.substr(0, 200);
    }
    throw Error(ErrorCode::parse_failure, std::string(to_string(req.purpose)) + " for '" + req.trait + "' failed after " +
                                              std::to_string(options_.max_attempts) + " attempts (" + last + ")");
  }

  static std::optional<std::string> parse_prompt_text(const std::string& text) {
    auto t = trim(text);
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = trim(t.substr(1, t.size() - 2));
    if (t.empty()) return std::nullopt;
    return t;
  }

  static std::optional<nlohmann::json> parse_json_object(const std::string& text) {
    // Tolerate prose or code fences around the object.
    auto b = text.find('{');
    auto e = text.rfind('}');
    if (b == std::string::npos || e == std::string::npos || e < b) return std::nullopt;
    try {
      auto j = nlohmann::json::parse(text.substr(b, e - b + 1));
      if (!j.is_object()) return std::nullopt;
      return j;
    } catch (const nlohmann::json::parse_error&) {
      return std::nullopt;
    }
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  PromptTemplates templates_;
  TraitRegistry registry_;
  std::shared_ptr<CompletionProvider> generator_;
  std::shared_ptr<CompletionProvider> judge_;
  GatewayOptions options_;
};

}  // namespace persona
