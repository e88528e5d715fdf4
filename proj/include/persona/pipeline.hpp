#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "persona/backend.hpp"
#include "persona/error.hpp"
#include "persona/gateway.hpp"
#include "persona/library.hpp"
#include "persona/linalg.hpp"
#include "persona/parallel.hpp"
#include "persona/registry.hpp"
#include "persona/scoring.hpp"

namespace persona {

/// One generated response with the polarity of the system prompt that
/// produced it. Failed generations keep `error` and no activations.
struct TaggedRecord {
  std::string id;
  Polarity source = Polarity::positive;
  int pair_index = 0;
  int situation_index = 0;
  GenerationRecord record;
  std::optional<int> judge_score;
  std::string error;

  bool failed() const { return !error.empty(); }
};

struct ResponseSet {
  std::string trait;
  BackendDescriptor backend;
  std::vector<ContrastivePair> pairs;
  std::vector<std::string> situations;
  std::vector<TaggedRecord> records;  // pair-major, then polarity (+ before -), then situation

  std::size_t failures() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(),
                                                  [](const TaggedRecord& r) { return r.failed(); }));
  }
};

struct CollectOptions {
  int pairs = 5;
  int situations = 40;
  std::size_t jobs = 1;
};

/// Generates contrastive prompts and situations through the gateway, then the
/// full Cartesian product of responses through the backend.
inline ResponseSet collect_responses(const std::string& trait, const ActivationBackend& backend, Gateway& gateway,
                                     const CollectOptions& options = {}) {
  ResponseSet set;
  set.trait = trait;
  set.backend = backend.descriptor();
  set.pairs = gateway.generate_contrastive_pairs(trait, options.pairs);
  set.situations = gateway.generate_situations(trait, options.situations);

  for (int p = 0; p < static_cast<int>(set.pairs.size()); ++p) {
    for (Polarity pol : {Polarity::positive, Polarity::negative}) {
      for (int s = 0; s < static_cast<int>(set.situations.size()); ++s) {
        TaggedRecord r;
        r.id = trait + "-p" + std::to_string(p) + (pol == Polarity::positive ? "+" : "-") + "-s" + std::to_string(s);
        r.source = pol;
        r.pair_index = p;
        r.situation_index = s;
        set.records.push_back(std::move(r));
      }
    }
  }
  parallel_for(set.records.size(), options.jobs, [&](std::size_t i) {
    auto& r = set.records[i];
    const auto& pair = set.pairs[static_cast<std::size_t>(r.pair_index)];
    const auto& prompt = r.source == Polarity::positive ? pair.positive : pair.negative;
    try {
      r.record = backend.generate_with_activations(prompt, set.situations[static_cast<std::size_t>(r.situation_index)]);
    } catch (const Error& e) {
      if (!is_upstream(e.code())) throw;
      r.error = e.what();
      r.record.system_prompt = prompt;
      r.record.question = set.situations[static_cast<std::size_t>(r.situation_index)];
    }
  });
  if (2 * set.failures() > set.records.size()) {
    throw Error(ErrorCode::transport_failure, "trait '" + trait + "': " + std::to_string(set.failures()) + " of " +
                                                  std::to_string(set.records.size()) + " generations failed");
  }
  return set;
}

/// Scores every usable record that has no judge score yet.
inline void judge_responses(ResponseSet& set, Gateway& gateway, std::size_t jobs = 1) {
  parallel_for(set.records.size(), jobs, [&](std::size_t i) {
    auto& r = set.records[i];
    if (r.failed() || r.record.refusal || r.judge_score) return;
    r.judge_score = gateway.judge_trait_expression(set.trait, r.record.response_text, r.id).value;
  });
}

enum class DropReason { failed, refusal, unjudged, positive_not_above, negative_not_below };

inline std::string_view to_string(DropReason r) {
  switch (r) {
    case DropReason::failed: return "failed";
    case DropReason::refusal: return "refusal";
    case DropReason::unjudged: return "unjudged";
    case DropReason::positive_not_above: return "positive_not_above_50";
    case DropReason::negative_not_below: return "negative_not_below_50";
  }
  return "failed";
}

struct FilterResult {
  std::vector<std::size_t> kept_positive;  // indices into ResponseSet::records
  std::vector<std::size_t> kept_negative;
  std::vector<std::pair<std::size_t, DropReason>> dropped;
};

inline constexpr int kJudgeThreshold = 50;

/// Positive-source records are kept iff score > 50, negative-source iff
/// score < 50. A score of exactly 50 is dropped on both sides; refusals and
/// failures are dropped before the score is consulted.
inline FilterResult partition_by_judge(const std::vector<TaggedRecord>& records) {
  FilterResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.failed()) {
      out.dropped.emplace_back(i, DropReason::failed);
    } else if (r.record.refusal) {
      out.dropped.emplace_back(i, DropReason::refusal);
    } else if (!r.judge_score) {
      out.dropped.emplace_back(i, DropReason::unjudged);
    } else if (r.source == Polarity::positive) {
      if (*r.judge_score > kJudgeThreshold) {
        out.kept_positive.push_back(i);
      } else {
        out.dropped.emplace_back(i, DropReason::positive_not_above);
      }
    } else if (*r.judge_score < kJudgeThreshold) {
      out.kept_negative.push_back(i);
    } else {
      out.dropped.emplace_back(i, DropReason::negative_not_below);
    }
  }
  return out;
}

inline FilterResult filter_responses(ResponseSet& set, Gateway& gateway, std::size_t jobs = 1) {
  judge_responses(set, gateway, jobs);
  auto result = partition_by_judge(set.records);
  if (result.kept_positive.empty() || result.kept_negative.empty()) {
    throw Error(ErrorCode::extraction_impossible,
                "trait '" + set.trait + "': kept " + std::to_string(result.kept_positive.size()) + " positive and " +
                    std::to_string(result.kept_negative.size()) + " negative responses");
  }
  return result;
}

namespace detail {

inline std::vector<double> mean_of(const std::vector<const LayerVectors*>& side, std::size_t L, std::size_t D) {
  std::vector<double> acc(L * D, 0.0);
  for (const auto* v : side) {
    if (v->num_layers() != L || v->hidden_dim() != D) {
      throw Error(ErrorCode::shape_mismatch, "response activations differ in shape");
    }
    auto vals = v->values();
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += vals[k];
  }
  for (auto& x : acc) x /= static_cast<double>(side.size());
  return acc;
}

}  // namespace detail

/// mean(positive activations) - mean(negative activations), per layer. Layers
/// where the difference vanishes are flagged; if every layer vanishes the
/// trait is degenerate.
inline PersonaVector extract_persona_vector(const std::string& trait, const std::vector<const LayerVectors*>& positive,
                                            const std::vector<const LayerVectors*>& negative,
                                            const BackendDescriptor& backend = {}) {
  if (positive.empty() || negative.empty()) {
    throw Error(ErrorCode::extraction_impossible, "trait '" + trait + "': both sides need at least one response");
  }
  const std::size_t L = positive.front()->num_layers(), D = positive.front()->hidden_dim();
  const auto mp = detail::mean_of(positive, L, D);
  const auto mn = detail::mean_of(negative, L, D);
  std::vector<double> diff(L * D);
  for (std::size_t k = 0; k < diff.size(); ++k) diff[k] = mp[k] - mn[k];

  PersonaVector v;
  v.trait = trait;
  v.kept_positive = positive.size();
  v.kept_negative = negative.size();
  v.backend = backend;
  for (std::size_t l = 0; l < L; ++l) {
    std::span<const double> row(diff.data() + l * D, D);
    const double scale = std::max(norm(std::span<const double>(mp.data() + l * D, D)),
                                  norm(std::span<const double>(mn.data() + l * D, D)));
    if (!(norm(row) > 1e-12 * scale)) v.degenerate_layers.push_back(l);
  }
  if (v.degenerate_layers.size() == L) {
    throw Error(ErrorCode::degenerate_trait, "trait '" + trait + "': persona vector is zero at every layer");
  }
  v.direction = LayerVectors(L, D, std::move(diff), Reduction::mean_tokens);
  return v;
}

inline PersonaVector extract_persona_vector(const ResponseSet& set, const FilterResult& filtered) {
  std::vector<const LayerVectors*> pos, neg;
  for (auto i : filtered.kept_positive) pos.push_back(&set.records[i].record.activations);
  for (auto i : filtered.kept_negative) neg.push_back(&set.records[i].record.activations);
  return extract_persona_vector(set.trait, pos, neg, set.backend);
}

struct LeveledPrompt {
  int level = 0;
  int sample = 0;
  std::string text;
};

/// Raw scores of graded-expression prompts at every layer.
struct LeveledScores {
  std::string trait;
  ProjectionMode mode = ProjectionMode::double_norm;
  std::vector<LeveledPrompt> prompts;
  std::vector<std::vector<double>> raw_by_layer;  // [layer][prompt]
};

inline LeveledScores score_leveled_prompts(const std::string& trait, const PersonaVector& vector,
                                           const ActivationBackend& backend, Gateway& gateway, ProjectionMode mode,
                                           int per_level = 5, std::size_t jobs = 1) {
  LeveledScores out;
  out.trait = trait;
  out.mode = mode;
  for (int level = 1; level <= 5; ++level) {
    for (int s = 0; s < per_level; ++s) out.prompts.push_back({level, s, {}});
  }
  const std::size_t L = vector.direction.num_layers();
  out.raw_by_layer.assign(L, std::vector<double>(out.prompts.size(), 0.0));
  parallel_for(out.prompts.size(), jobs, [&](std::size_t i) {
    auto& p = out.prompts[i];
    p.text = gateway.generate_leveled_prompt(trait, p.level, p.sample);
    const auto acts = backend.prompt_activations(p.text);
    for (std::size_t l = 0; l < L; ++l) {
      out.raw_by_layer[l][i] = vector.is_degenerate(l) ? 0.0 : raw_score(acts, vector, l, mode).value;
    }
  });
  return out;
}

struct LayerSelection {
  std::size_t selected_layer = 0;
  std::vector<std::string> traits;
  std::vector<std::vector<RegressionResult>> fits;  // [trait][layer]
  std::vector<double> mean_r_squared;              // [layer]
  std::string tie_break = "deeper";
};

/// Layer maximizing the mean R² (level vs raw score) across traits; exact
/// ties go to the larger layer index.
inline LayerSelection select_layer(const std::map<std::string, PersonaVector>& vectors,
                                   const std::map<std::string, LeveledScores>& leveled) {
  if (vectors.empty()) throw Error(ErrorCode::missing_coverage, "no persona vectors to select a layer for");
  const std::size_t L = vectors.begin()->second.direction.num_layers();
  LayerSelection sel;
  sel.mean_r_squared.assign(L, 0.0);
  for (const auto& [trait, vec] : vectors) {
    auto it = leveled.find(trait);
    if (it == leveled.end()) throw Error(ErrorCode::missing_coverage, "no leveled scores for trait '" + trait + "'");
    const auto& scores = it->second;
    if (scores.raw_by_layer.size() != L || vec.direction.num_layers() != L) {
      throw Error(ErrorCode::missing_coverage, "trait '" + trait + "': leveled scores do not cover every layer");
    }
    std::vector<double> xs;
    for (const auto& p : scores.prompts) xs.push_back(static_cast<double>(p.level));
    std::vector<RegressionResult> row;
    for (std::size_t l = 0; l < L; ++l) {
      if (scores.raw_by_layer[l].size() != xs.size()) {
        throw Error(ErrorCode::missing_coverage, "trait '" + trait + "': layer " + std::to_string(l) + " incomplete");
      }
      row.push_back(linear_fit(xs, scores.raw_by_layer[l]));
      sel.mean_r_squared[l] += row.back().r_squared;
    }
    sel.traits.push_back(trait);
    sel.fits.push_back(std::move(row));
  }
  for (auto& m : sel.mean_r_squared) m /= static_cast<double>(vectors.size());
  for (std::size_t l = 0; l < L; ++l) {
    if (sel.mean_r_squared[l] >= sel.mean_r_squared[sel.selected_layer]) sel.selected_layer = l;
  }
  return sel;
}

struct CalibrationSample {
  std::string prompt_id;
  Polarity polarity = Polarity::positive;
  int num_sentences = 1;
  std::size_t length_chars = 0;
  double raw = 0.0;
  std::string text;
};

struct CalibrationResult {
  CalibrationBounds bounds;
  std::vector<CalibrationSample> samples;
};

/// max_pos = max raw score over positive extremal prompts, min_neg = min over
/// negative ones, at the selected layer under `mode`.
inline CalibrationBounds bounds_from_samples(const std::string& trait, std::size_t layer, ProjectionMode mode,
                                             const std::vector<CalibrationSample>& samples) {
  CalibrationBounds b;
  b.trait = trait;
  b.layer = layer;
  b.mode = mode;
  bool any_pos = false, any_neg = false;
  for (const auto& s : samples) {
    if (s.polarity == Polarity::positive) {
      b.max_pos = any_pos ? std::max(b.max_pos, s.raw) : s.raw;
      any_pos = true;
    } else {
      b.min_neg = any_neg ? std::min(b.min_neg, s.raw) : s.raw;
      any_neg = true;
    }
    b.source_prompt_ids.push_back(s.prompt_id);
  }
  if (!any_pos || !any_neg) {
    throw Error(ErrorCode::calibration_failure, "trait '" + trait + "': need positive and negative extremal prompts");
  }
  if (!(b.max_pos > 0.0) || !(b.min_neg < 0.0)) {
    throw Error(ErrorCode::calibration_failure,
                "trait '" + trait + "': extremal prompts disagree with the vector's polarity (max_pos " +
                    std::to_string(b.max_pos) + ", min_neg " + std::to_string(b.min_neg) + ")");
  }
  return b;
}

/// Extremal prompts: 5 lengths (1..5 sentences) x per_length samples x 2
/// polarities (50 per trait at the default).
inline CalibrationResult calibrate(const std::string& trait, const PersonaVector& vector, std::size_t layer,
                                   const ActivationBackend& backend, Gateway& gateway, ProjectionMode mode,
                                   int per_length = 5, std::size_t jobs = 1) {
  CalibrationResult out;
  for (Polarity pol : {Polarity::positive, Polarity::negative}) {
    for (int len = 1; len <= 5; ++len) {
      for (int s = 0; s < per_length; ++s) {
        CalibrationSample c;
        c.polarity = pol;
        c.num_sentences = len;
        c.prompt_id = trait + (pol == Polarity::positive ? "+" : "-") + "L" + std::to_string(len) + "#" + std::to_string(s);
        out.samples.push_back(std::move(c));
      }
    }
  }
  parallel_for(out.samples.size(), jobs, [&](std::size_t i) {
    auto& c = out.samples[i];
    const int sample = std::stoi(c.prompt_id.substr(c.prompt_id.find('#') + 1));
    c.text = gateway.generate_extremal_prompt(trait, c.polarity, c.num_sentences, sample);
    c.length_chars = c.text.size();
    c.raw = raw_score(backend.prompt_activations(c.text), vector, layer, mode).value;
  });
  out.bounds = bounds_from_samples(trait, layer, mode, out.samples);
  return out;
}

}  // namespace persona
