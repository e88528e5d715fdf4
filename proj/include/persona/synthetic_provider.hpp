#pragma once

#include <cmath>
#include <cstdlib>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/gateway.hpp"
#include "persona/hash.hpp"
#include "persona/synthetic_config.hpp"

namespace persona {

/// Lexicon judge: net = summed signed levels of the trait's lexicon words in
/// the text, score = round(100 / (1 + exp(-net))). Monotone in net, exactly 50
/// when the text carries no net trait signal.
inline int lexicon_judge_score(const SyntheticConfig& config, const std::string& trait, const std::string& text) {
  const PlantedTrait* p = config.find(trait);
  if (!p) throw Error(ErrorCode::unknown_id, "lexicon judge: trait '" + trait + "' is not planted");
  long net = 0;
  for (const auto& tok : tokenize(text)) {
    for (const auto& e : p->lexicon) {
      if (e.word == tok) net += e.level;
    }
  }
  return static_cast<int>(std::lround(100.0 / (1.0 + std::exp(-static_cast<double>(net)))));
}

/// Deterministic generator and judge that writes prompts from the synthetic
/// world's lexicons, so every generated prompt has a known summed trait level:
///
///   contrastive pair i:      +/-(2 + i mod 3)
///   leveled prompt, level k: 2 * (k - 3)
///   extremal prompt:         +/-extremal_level, padded with neutral sentences
///
/// Situation questions carry no lexicon words.
class SyntheticProvider final : public CompletionProvider {
 public:
  explicit SyntheticProvider(SyntheticConfig config, int extremal_level = 5)
      : config_(std::move(config)), extremal_level_(extremal_level) {}

  std::string name() const override { return "synthetic"; }
  int extremal_level() const { return extremal_level_; }

  static long contrastive_level(int pair_index) { return 2 + pair_index % 3; }
  static long leveled_level(int level) { return 2L * (level - 3); }

  std::string complete(const CompletionRequest& req) override {
    const PlantedTrait* p = config_.find(req.trait);
    if (!p) throw Error(ErrorCode::provider_failure, "synthetic provider: trait '" + req.trait + "' is not planted");
    switch (req.purpose) {
      case Purpose::contrastive_pair: return contrastive_pairs(*p, std::stoi(req.variables.at("n")));
      case Purpose::situation: return situations(std::stoi(req.variables.at("n")));
      case Purpose::leveled_prompt:
        return leveled(*p, std::stoi(req.variables.at("level")), req.sample_index);
      case Purpose::extremal_prompt:
        return extremal(*p, req.variables.at("polarity") == "+" ? 1 : -1, std::stoi(req.variables.at("num_sentences")),
                        req.sample_index);
      case Purpose::judge: return std::to_string(lexicon_judge_score(config_, req.trait, req.variables.at("response")));
    }
    throw Error(ErrorCode::provider_failure, "synthetic provider: unsupported purpose");
  }

  /// Lexicon words whose levels sum exactly to `target`: level-2 words first,
  /// then one level-1 word for an odd remainder.
  std::vector<std::string> words_for_level(const PlantedTrait& p, long target, std::uint64_t salt) const {
    std::vector<std::string> out;
    const int sign = target >= 0 ? 1 : -1;
    long remaining = std::labs(target);
    std::vector<std::string> twos, ones;
    for (const auto& e : p.lexicon) {
      if (e.level == 2 * sign) twos.push_back(e.word);
      if (e.level == sign) ones.push_back(e.word);
    }
    std::size_t j = 0;
    while (remaining >= 2 && !twos.empty()) {
      out.push_back(twos[hash::mix({salt, j++}) % twos.size()]);
      remaining -= 2;
    }
    while (remaining > 0) {
      if (ones.empty()) throw Error(ErrorCode::config_error, "trait '" + p.trait + "' lacks level-1 lexicon words");
      out.push_back(ones[hash::mix({salt, j++}) % ones.size()]);
      remaining -= 1;
    }
    return out;
  }

 private:
  static std::string join_words(const std::vector<std::string>& words) {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i > 0) s += (i + 1 == words.size()) ? " and " : ", ";
      s += words[i];
    }
    return s;
  }

  std::uint64_t salt(const PlantedTrait& p, std::string_view what, long a, long b) const {
    return hash::mix({config_.seed, hash::fnv1a64(p.trait), hash::fnv1a64(what), static_cast<std::uint64_t>(a),
                      static_cast<std::uint64_t>(b)});
  }

  std::string trait_sentence(const std::vector<std::string>& words, std::size_t frame) const {
    static const char* kFrames[] = {
        "Respond to the person's situation with {}.",
        "Answer every message with {}, no matter the topic.",
        "Your replies should always convey {}.",
        "In each conversation, show {} toward the user.",
        "Keep {} at the center of how you respond.",
    };
    std::string f = kFrames[frame % 5];
    return f.replace(f.find("{}"), 2, join_words(words));
  }

  static std::string neutral_sentence(std::size_t i) {
    static const char* kNeutral[] = {
        "You are an assistant on a messaging app.",
        "Users come to you to talk about their day.",
        "Keep each reply to a short paragraph.",
        "Ask a follow-up question when it helps the conversation.",
        "Refer to earlier messages when they are relevant.",
        "Write in plain sentences without lists.",
        "Address the user directly.",
    };
    return kNeutral[i % 7];
  }

  std::string contrastive_pairs(const PlantedTrait& p, int n) const {
    nlohmann::json out;
    out["pairs"] = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
      const long m = contrastive_level(i);
      auto pos = trait_sentence(words_for_level(p, m, salt(p, "pair+", i, 0)), static_cast<std::size_t>(i));
      auto neg = trait_sentence(words_for_level(p, -m, salt(p, "pair-", i, 0)), static_cast<std::size_t>(i));
      out["pairs"].push_back({{"positive", pos}, {"negative", neg}});
    }
    return out.dump();
  }

  static std::string situations(int n) {
    static const char* kScenes[] = {
        "A close friend just lost their job unexpectedly.",
        "Your neighbor has been feeling lonely since moving to a new city.",
        "A coworker missed an important deadline and is worried about the consequences.",
        "A student failed an exam they studied hard for.",
        "Someone is nervous about a first date this weekend.",
        "A parent is exhausted from looking after a newborn.",
        "A teammate was left out of a group decision.",
        "Your cousin is deciding whether to move abroad for work.",
        "A person just received a difficult medical diagnosis.",
        "An old friend reached out after years of silence.",
    };
    static const char* kAsks[] = {
        "How would you support them?",
        "What would you say to them?",
        "How would you respond to them?",
        "What advice would you give them?",
    };
    nlohmann::json out;
    out["questions"] = nlohmann::json::array();
    for (int i = 0; i < n; ++i) {
      std::string q = std::string(kScenes[i % 10]) + " " + kAsks[(i / 10) % 4];
      if (i >= 40) q += " (case " + std::to_string(i / 40 + 1) + ")";
      out["questions"].push_back(q);
    }
    return out.dump();
  }

  std::string leveled(const PlantedTrait& p, int level, int sample) const {
    const long target = leveled_level(level);
    std::string s = neutral_sentence(static_cast<std::size_t>(sample));
    if (target != 0) {
      s += " " + trait_sentence(words_for_level(p, target, salt(p, "level", level, sample)),
                                static_cast<std::size_t>(sample + level));
    } else {
      s += " " + neutral_sentence(static_cast<std::size_t>(sample + 3));
    }
    s += " " + neutral_sentence(static_cast<std::size_t>(sample + 1));
    return s;
  }

  std::string extremal(const PlantedTrait& p, int sign, int num_sentences, int sample) const {
    const long target = sign * static_cast<long>(extremal_level_);
    std::string s = trait_sentence(words_for_level(p, target, salt(p, sign > 0 ? "max+" : "max-", num_sentences, sample)),
                                   static_cast<std::size_t>(sample));
    for (int k = 1; k < num_sentences; ++k) s += " " + neutral_sentence(static_cast<std::size_t>(sample + k));
    return s;
  }

  SyntheticConfig config_;
  int extremal_level_;
};

}  // namespace persona
