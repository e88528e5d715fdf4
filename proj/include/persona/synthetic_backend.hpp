#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "persona/backend.hpp"
#include "persona/hash.hpp"
#include "persona/linalg.hpp"
#include "persona/synthetic_config.hpp"

namespace persona {

/// Deterministic stand-in for a language model with known trait directions.
///
/// Per-token activation at layer l for position i of a token sequence:
///
///   h_i(l) = e(tok_i, l) + signal_scale * sum_t g_t(l) * C_t(i) * d_t(l) + noise_sigma * xi(seq, i, l)
///
/// where d_t(l) are orthonormal planted directions, g_t the layer profile,
/// C_t(i) the cumulative signed lexicon level of tokens 0..i, and e(tok, l) a
/// seeded content embedding orthogonal to every planted direction (and zero
/// for lexicon words at their trait's peak layer). The final token therefore
/// carries the prompt's summed lexicon level exactly.
class SyntheticBackend final : public ActivationBackend {
 public:
  explicit SyntheticBackend(SyntheticConfig config) : config_(std::move(config)), lexicon_(config_) {
    descriptor_.backend_id = "synthetic";
    descriptor_.model_name = "synthetic-" + hash::sha256_hex(to_json(config_).dump()).substr(0, 16);
    descriptor_.num_layers = config_.num_layers;
    descriptor_.hidden_dim = config_.hidden_dim;
    descriptor_.kind = BackendKind::synthetic;
    build_directions();
  }

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const SyntheticConfig& config() const { return config_; }
  const Lexicon& lexicon() const { return lexicon_; }

  LayerVectors prompt_activations(std::string_view system_prompt) const override {
    require_non_empty(system_prompt, "system prompt");
    auto tokens = tokenize(system_prompt);
    if (tokens.empty()) throw Error(ErrorCode::invalid_argument, "system prompt has no tokens");
    const auto key = hash::mix({config_.seed, hash::fnv1a64("prompt"), hash::fnv1a64(system_prompt)});
    return reduce_tokens(activations(tokens, key), Reduction::final_token);
  }

  GenerationRecord generate_with_activations(std::string_view system_prompt,
                                             std::string_view question) const override {
    require_non_empty(system_prompt, "system prompt");
    require_non_empty(question, "question");
    GenerationRecord rec;
    rec.system_prompt = std::string(system_prompt);
    rec.question = std::string(question);
    rec.response_text = compose_response(system_prompt, question, rec.refusal);
    const auto key = hash::mix({config_.seed, hash::fnv1a64("generate"), hash::fnv1a64(system_prompt),
                                hash::fnv1a64(question)});
    rec.activations = reduce_tokens(activations(tokenize(rec.response_text), key), Reduction::mean_tokens);
    rec.backend = descriptor_;
    rec.request_id = "syn-" + hash::sha256_hex(std::string(system_prompt) + '\x1f' + std::string(question)).substr(0, 16);
    return rec;
  }

  std::string chat(std::string_view system_prompt, std::span<const ChatMessage> messages) const override {
    require_non_empty(system_prompt, "system prompt");
    auto last_user = std::find_if(messages.rbegin(), messages.rend(),
                                  [](const ChatMessage& m) { return m.role == "user"; });
    if (last_user == messages.rend()) throw Error(ErrorCode::invalid_argument, "chat needs a user message");
    bool refusal = false;
    return compose_response(system_prompt, last_user->content, refusal);
  }

  std::vector<double> planted_direction(std::string_view trait, std::size_t layer) const override {
    if (layer >= config_.num_layers) throw Error(ErrorCode::invalid_argument, "layer out of range");
    for (std::size_t t = 0; t < config_.planted.size(); ++t) {
      if (config_.planted[t].trait == trait) return direction(t, layer);
    }
    throw Error(ErrorCode::unknown_id, "trait '" + std::string(trait) + "' is not planted");
  }

  /// Full per-token tensor for an explicit token sequence.
  ActivationTensor activations(const std::vector<std::string>& tokens, std::uint64_t sequence_key) const {
    const std::size_t L = config_.num_layers, D = config_.hidden_dim, K = config_.planted.size();
    const std::size_t T = tokens.size();
    std::vector<std::vector<long>> cumulative(T, std::vector<long>(K, 0));
    std::vector<long> running(K, 0);
    for (std::size_t i = 0; i < T; ++i) {
      if (auto hit = lexicon_.lookup(tokens[i])) running[hit->trait_index] += hit->level;
      cumulative[i] = running;
    }
    std::vector<std::vector<double>> embeddings;
    embeddings.reserve(T);
    for (const auto& tok : tokens) embeddings.push_back(token_embeddings(tok));
    std::vector<double> values(L * T * D, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t i = 0; i < T; ++i) {
        double* h = values.data() + (l * T + i) * D;
        const auto& base = embeddings[i];
        std::copy(base.begin() + static_cast<std::ptrdiff_t>(l * D), base.begin() + static_cast<std::ptrdiff_t>((l + 1) * D),
                  h);
        for (std::size_t t = 0; t < K; ++t) {
          if (cumulative[i][t] == 0) continue;
          const double coeff = config_.signal_scale * config_.planted[t].profile(l) *
                               static_cast<double>(cumulative[i][t]);
          const double* d = directions_.data() + (l * K + t) * D;
          for (std::size_t c = 0; c < D; ++c) h[c] += coeff * d[c];
        }
        if (config_.noise_sigma > 0.0) {
          for (std::size_t c = 0; c < D; ++c) {
            h[c] += config_.noise_sigma * hash::gaussian(hash::mix({sequence_key, i, l, c}));
          }
        }
      }
    }
    return ActivationTensor(L, T, D, std::move(values));
  }

  /// Seeded content embedding of one token, orthogonal to all planted
  /// directions. A lexicon word's embedding is scaled by 1 - g_t(l), so at its
  /// trait's peak layer the word carries nothing but the trait signal.
  std::vector<double> content_embedding(const std::string& token, std::size_t layer) const {
    const std::size_t D = config_.hidden_dim, K = config_.planted.size();
    std::vector<double> e(D);
    double scale = config_.base_scale / std::sqrt(static_cast<double>(D));
    if (auto hit = lexicon_.lookup(token)) scale *= 1.0 - config_.planted[hit->trait_index].profile(layer);
    const auto tok_key = hash::fnv1a64(token);
    for (std::size_t c = 0; c < D; ++c) {
      e[c] = scale * hash::gaussian(hash::mix({config_.seed, hash::fnv1a64("base"), tok_key, layer, c}));
    }
    for (std::size_t t = 0; t < K; ++t) {
      const double* d = directions_.data() + (layer * K + t) * D;
      double p = 0.0;
      for (std::size_t c = 0; c < D; ++c) p += e[c] * d[c];
      for (std::size_t c = 0; c < D; ++c) e[c] -= p * d[c];
    }
    return e;
  }

  /// Response text the synthetic model writes for (system prompt, question):
  /// lexicon words echoing the prompt's trait levels, then the question's
  /// content. Refusal markers in either input produce a fixed refusal.
  std::string compose_response(std::string_view system_prompt, std::string_view question, bool& refusal) const {
    const auto prompt_tokens = tokenize(system_prompt);
    const auto question_tokens = tokenize(question);
    refusal = false;
    for (const auto& marker : config_.refusal_markers) {
      auto has = [&](const std::vector<std::string>& toks) {
        return std::find(toks.begin(), toks.end(), marker) != toks.end();
      };
      if (has(prompt_tokens) || has(question_tokens)) {
        refusal = true;
        return "I'm sorry, but I can't help with that request.";
      }
    }
    const auto levels = lexicon_.levels(prompt_tokens);
    std::vector<std::string> words;
    for (std::size_t t = 0; t < config_.planted.size(); ++t) {
      if (levels[t] == 0) continue;
      std::vector<const LexiconEntry*> pool;
      for (const auto& e : config_.planted[t].lexicon) {
        if ((e.level > 0) == (levels[t] > 0)) pool.push_back(&e);
      }
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::labs(levels[t])),
                                                   config_.max_trait_words);
      for (std::size_t j = 0; j < n; ++j) {
        const auto pick = hash::mix({config_.seed, hash::fnv1a64("pick"), hash::fnv1a64(system_prompt),
                                     hash::fnv1a64(question), t, j});
        words.push_back(pool[pick % pool.size()]->word);
      }
    }
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) out += (i ? ", " : "") + words[i];
    if (!out.empty()) {
      out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
      out += ". ";
    }
    out += "Regarding your question:";
    for (const auto& tok : question_tokens) out += " " + tok;
    out += ".";
    return out;
  }

 private:
  static constexpr std::size_t kEmbeddingCacheLimit = 1 << 16;

  // content_embedding at every layer, (layer, component); memoized because
  // the same tokens recur across thousands of generations.
  std::vector<double> token_embeddings(const std::string& token) const {
    {
      std::shared_lock lock(cache_mu_);
      if (auto it = embedding_cache_.find(token); it != embedding_cache_.end()) return it->second;
    }
    std::vector<double> all;
    all.reserve(config_.num_layers * config_.hidden_dim);
    for (std::size_t l = 0; l < config_.num_layers; ++l) {
      const auto e = content_embedding(token, l);
      all.insert(all.end(), e.begin(), e.end());
    }
    std::unique_lock lock(cache_mu_);
    if (embedding_cache_.size() < kEmbeddingCacheLimit) embedding_cache_.emplace(token, all);
    return all;
  }

  std::vector<double> direction(std::size_t trait_index, std::size_t layer) const {
    const std::size_t D = config_.hidden_dim, K = config_.planted.size();
    const double* d = directions_.data() + (layer * K + trait_index) * D;
    return std::vector<double>(d, d + D);
  }

  // Seeded Gaussian draws orthonormalized per layer (modified Gram-Schmidt,
  // applied twice).
  void build_directions() {
    const std::size_t L = config_.num_layers, D = config_.hidden_dim, K = config_.planted.size();
    directions_.assign(L * K * D, 0.0);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t t = 0; t < K; ++t) {
        double* v = directions_.data() + (l * K + t) * D;
        for (std::size_t c = 0; c < D; ++c) {
          v[c] = hash::gaussian(hash::mix({config_.seed, hash::fnv1a64("direction"), l, t, c}));
        }
        for (int pass = 0; pass < 2; ++pass) {
          for (std::size_t s = 0; s < t; ++s) {
            const double* u = directions_.data() + (l * K + s) * D;
            double p = 0.0;
            for (std::size_t c = 0; c < D; ++c) p += v[c] * u[c];
            for (std::size_t c = 0; c < D; ++c) v[c] -= p * u[c];
          }
          double n = 0.0;
          for (std::size_t c = 0; c < D; ++c) n += v[c] * v[c];
          n = std::sqrt(n);
          if (!(n > 1e-12)) throw Error(ErrorCode::config_error, "planted direction construction degenerated");
          for (std::size_t c = 0; c < D; ++c) v[c] /= n;
        }
      }
    }
  }

  SyntheticConfig config_;
  Lexicon lexicon_;
  BackendDescriptor descriptor_;
  std::vector<double> directions_;  // (layer, trait, component)
  mutable std::shared_mutex cache_mu_;
  mutable std::unordered_map<std::string, std::vector<double>> embedding_cache_;
};

}  // namespace persona
