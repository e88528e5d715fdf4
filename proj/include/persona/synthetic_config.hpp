#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"
#include "persona/hash.hpp"

namespace persona {

struct LexiconEntry {
  std::string word;
  int level = 0;  // signed trait level carried by one occurrence
};

struct PlantedTrait {
  std::string trait;
  std::size_t peak_layer = 0;
  double width = 1.0;  // Gaussian layer-profile width, in layers
  std::vector<LexiconEntry> lexicon;

  /// g(layer): 1 at the peak, strictly below 1 elsewhere.
  double profile(std::size_t layer) const {
    const double z = (static_cast<double>(layer) - static_cast<double>(peak_layer)) / width;
    return std::exp(-z * z);
  }
};

/// Ground-truth world shared by the synthetic backend, the synthetic prompt
/// generator and the lexicon judge.
struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t num_layers = 6;
  std::size_t hidden_dim = 32;
  double noise_sigma = 0.0;
  double signal_scale = 1.0;  // activation magnitude per unit lexicon level
  double base_scale = 1.0;    // norm scale of content (non-trait) embeddings
  std::size_t max_trait_words = 4;
  std::vector<PlantedTrait> planted;
  std::vector<std::string> refusal_markers;

  const PlantedTrait* find(std::string_view trait) const {
    for (const auto& p : planted) {
      if (p.trait == trait) return &p;
    }
    return nullptr;
  }
};

/// Lowercases ASCII, treats anything but [a-z0-9'-] as a separator, and trims
/// leading/trailing apostrophes and hyphens from each token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    std::size_t b = 0, e = cur.size();
    while (b < e && (cur[b] == '-' || cur[b] == '\'')) ++b;
    while (e > b && (cur[e - 1] == '-' || cur[e - 1] == '\'')) --e;
    if (e > b) out.push_back(cur.substr(b, e - b));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch == '-' || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

/// Word -> (planted trait index, level) lookup over a config's lexicons.
class Lexicon {
 public:
  struct Hit {
    std::size_t trait_index;
    int level;
  };

  explicit Lexicon(const SyntheticConfig& cfg) {
    for (std::size_t t = 0; t < cfg.planted.size(); ++t) {
      for (const auto& e : cfg.planted[t].lexicon) {
        if (!entries_.emplace(e.word, Hit{t, e.level}).second) {
          throw Error(ErrorCode::duplicate_id, "lexicon word '" + e.word + "' appears more than once");
        }
      }
    }
    num_traits_ = cfg.planted.size();
  }

  std::optional<Hit> lookup(const std::string& token) const {
    auto it = entries_.find(token);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  /// Summed signed level per planted trait over the tokens.
  std::vector<long> levels(const std::vector<std::string>& tokens) const {
    std::vector<long> out(num_traits_, 0);
    for (const auto& tok : tokens) {
      if (auto hit = lookup(tok)) out[hit->trait_index] += hit->level;
    }
    return out;
  }

 private:
  std::map<std::string, Hit> entries_;
  std::size_t num_traits_ = 0;
};

inline nlohmann::ordered_json to_json(const SyntheticConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["num_layers"] = c.num_layers;
  j["hidden_dim"] = c.hidden_dim;
  j["noise_sigma"] = c.noise_sigma;
  j["signal_scale"] = c.signal_scale;
  j["base_scale"] = c.base_scale;
  j["max_trait_words"] = c.max_trait_words;
  j["refusal_markers"] = c.refusal_markers;
  j["planted"] = nlohmann::ordered_json::array();
  for (const auto& p : c.planted) {
    nlohmann::ordered_json pj;
    pj["trait"] = p.trait;
    pj["peak_layer"] = p.peak_layer;
    pj["width"] = p.width;
    pj["lexicon"] = nlohmann::ordered_json::object();
    for (const auto& e : p.lexicon) pj["lexicon"][e.word] = e.level;
    j["planted"].push_back(std::move(pj));
  }
  return j;
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
  try {
    SyntheticConfig c;
    c.seed = j.value("seed", std::uint64_t{1});
    c.num_layers = j.value("num_layers", std::size_t{6});
    c.hidden_dim = j.value("hidden_dim", std::size_t{32});
    c.noise_sigma = j.value("noise_sigma", 0.0);
    c.signal_scale = j.value("signal_scale", 1.0);
    c.base_scale = j.value("base_scale", 1.0);
    c.max_trait_words = j.value("max_trait_words", std::size_t{4});
    c.refusal_markers = j.value("refusal_markers", std::vector<std::string>{});
    const std::size_t default_peak = j.value("peak_layer", c.num_layers / 2);
    const double default_width = j.value("width", 1.0);
    for (const auto& pj : j.at("planted")) {
      PlantedTrait p;
      p.trait = pj.at("trait").get<std::string>();
      p.peak_layer = pj.value("peak_layer", default_peak);
      p.width = pj.value("width", default_width);
      // nlohmann::json objects iterate in key order, so lexicon order does not
      // depend on file layout.
      for (const auto& [word, level] : pj.at("lexicon").items()) {
        p.lexicon.push_back({word, level.get<int>()});
      }
      c.planted.push_back(std::move(p));
    }
    if (c.num_layers == 0 || c.hidden_dim == 0) throw Error(ErrorCode::config_error, "synthetic dimensions must be >= 1");
    if (c.planted.size() > c.hidden_dim) {
      throw Error(ErrorCode::config_error, "more planted traits than hidden dimensions");
    }
    if (c.noise_sigma < 0.0) throw Error(ErrorCode::config_error, "noise_sigma must be >= 0");
    for (const auto& p : c.planted) {
      if (p.peak_layer >= c.num_layers) {
        throw Error(ErrorCode::config_error, "trait '" + p.trait + "': peak_layer out of range");
      }
      if (!(p.width > 0.0)) throw Error(ErrorCode::config_error, "trait '" + p.trait + "': width must be > 0");
      bool has_pos = false, has_neg = false;
      for (const auto& e : p.lexicon) {
        if (e.level > 0) has_pos = true;
        if (e.level < 0) has_neg = true;
        if (tokenize(e.word) != std::vector<std::string>{e.word}) {
          throw Error(ErrorCode::config_error, "lexicon word '" + e.word + "' is not a single lowercase token");
        }
      }
      if (!has_pos || !has_neg) {
        throw Error(ErrorCode::config_error, "trait '" + p.trait + "': lexicon needs positive and negative words");
      }
    }
    Lexicon check(c);  // duplicate detection
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::config_error, std::string("synthetic config: ") + e.what());
  }
}

inline SyntheticConfig load_synthetic_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config_error, "cannot open synthetic config '" + path.string() + "'");
  try {
    return synthetic_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::config_error, path.string() + ": " + e.what());
  }
}

}  // namespace persona
