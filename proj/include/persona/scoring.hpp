#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "persona/backend.hpp"
#include "persona/hash.hpp"
#include "persona/library.hpp"
#include "persona/linalg.hpp"
#include "persona/registry.hpp"

namespace persona {

inline constexpr std::size_t kMinPromptChars = 100;

struct RawScore {
  std::string trait;
  double value = 0.0;
  std::size_t layer = 0;
  ProjectionMode mode = ProjectionMode::double_norm;
};

struct RescaledScore {
  std::string trait;
  double value = 0.0;  // in [-1, 1]
  bool clamped = false;
};

inline RawScore raw_score(const LayerVectors& prompt, const PersonaVector& vector, std::size_t layer,
                          ProjectionMode mode) {
  if (prompt.hidden_dim() != vector.direction.hidden_dim() || prompt.num_layers() != vector.direction.num_layers()) {
    throw Error(ErrorCode::shape_mismatch, "trait '" + vector.trait + "': prompt activations and vector differ in shape");
  }
  try {
    return RawScore{vector.trait, project(prompt.layer(layer), vector.direction.layer(layer), mode), layer, mode};
  } catch (const Error& e) {
    if (e.code() != ErrorCode::degenerate_direction) throw;
    throw Error(ErrorCode::degenerate_direction,
                "trait '" + vector.trait + "': vector is zero at layer " + std::to_string(layer));
  }
}

/// Positive raw scores divide by max_pos, negative ones by |min_neg|; the
/// result is clamped to [-1, 1] and the clamp is reported.
inline RescaledScore rescale(const RawScore& raw, const CalibrationBounds& bounds) {
  if (raw.mode != bounds.mode) {
    throw Error(ErrorCode::mode_mismatch, "trait '" + raw.trait + "': raw score mode " +
                                              std::string(to_string(raw.mode)) + " vs bounds mode " +
                                              std::string(to_string(bounds.mode)));
  }
  bounds.validate();
  const double v = raw.value >= 0.0 ? raw.value / bounds.max_pos : raw.value / std::fabs(bounds.min_neg);
  // + 0.0 folds a negative zero into +0 so displays never show "-0.000000".
  RescaledScore out{raw.trait, std::clamp(v, -1.0, 1.0) + 0.0, std::fabs(v) > 1.0};
  return out;
}

/// (positive label score, negative label score); at most one is nonzero.
inline std::pair<double, double> split(const RescaledScore& rescaled) {
  if (rescaled.value >= 0.0) return {rescaled.value, 0.0};
  return {0.0, -rescaled.value};
}

struct SplitScore {
  std::string positive_label;
  double positive = 0.0;
  std::string negative_label;
  double negative = 0.0;
};

inline SplitScore split(const RescaledScore& rescaled, const TraitDimension& dimension) {
  const auto [pos, neg] = split(rescaled);
  return {dimension.positive_label, pos, dimension.negative_label, neg};
}

struct DimensionScore {
  std::string trait;
  double raw = 0.0;
  double rescaled = 0.0;
  bool clamped = false;
};

struct LabelScore {
  std::string id;
  std::string display_name;
  std::string description;
  std::string dimension;
  std::string sister;
  Category category = Category::neutral;
  Polarity polarity = Polarity::positive;
  double score = 0.0;  // in [0, 1]
};

struct PersonaReport {
  std::string system_prompt;
  std::string prompt_hash;
  std::string library_id;
  std::string backend_id;
  std::string timestamp;
  std::size_t layer = 0;
  ProjectionMode mode = ProjectionMode::double_norm;
  std::vector<DimensionScore> dimensions;
  std::vector<LabelScore> labels;  // registry order
  std::vector<std::string> warnings;

  const LabelScore& label(const std::string& id) const {
    for (const auto& l : labels) {
      if (l.id == id) return l;
    }
    throw Error(ErrorCode::unknown_id, "report has no label '" + id + "'");
  }
};

inline std::string fixed6(double v) {
  if (std::fabs(v) < 5e-7) v = 0.0;  // no "-0.000000"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::vector<std::string> prompt_warnings(const std::string& prompt) {
  std::vector<std::string> w;
  if (prompt.size() < kMinPromptChars) {
    w.push_back("prompt is shorter than " + std::to_string(kMinPromptChars) + " characters; scores may be unstable");
  }
  auto last = prompt.find_last_not_of(" \t\r\n");
  if (last != std::string::npos) {
    const char c = prompt[last];
    if (c != '.' && c != '!' && c != '?' && c != '"' && c != ')') {
      w.push_back("prompt does not end with terminal punctuation; complete sentences score more reliably");
    }
  }
  return w;
}

/// Checks pair exclusivity and bounds; used at every boundary a report crosses.
inline void validate_report(const PersonaReport& report, const TraitRegistry& registry) {
  if (report.labels.size() != registry.labels().size()) {
    throw Error(ErrorCode::shape_mismatch, "report label count differs from registry");
  }
  for (const auto& d : report.dimensions) {
    if (!(std::fabs(d.rescaled) <= 1.0)) throw Error(ErrorCode::invalid_argument, "rescaled score out of [-1, 1]");
    const auto& dim = registry.dimension(d.trait);
    const double p = report.label(dim.positive_label).score, n = report.label(dim.negative_label).score;
    if (p < 0.0 || p > 1.0 || n < 0.0 || n > 1.0) throw Error(ErrorCode::invalid_argument, "label score out of [0, 1]");
    if (std::min(p, n) != 0.0) {
      throw Error(ErrorCode::invalid_argument, "labels of '" + d.trait + "' are both nonzero");
    }
  }
}

/// One activation fetch, then raw -> rescale -> split for every dimension.
inline PersonaReport score_all(const std::string& system_prompt, const PersonaLibrary& library,
                               const ActivationBackend& backend, const std::string& timestamp = {}) {
  require_non_empty(system_prompt, "system prompt");
  if (!library.backend.same_model(backend.descriptor())) {
    throw Error(ErrorCode::library_mismatch, "library was built for '" + library.backend.model_name + "' (" +
                                                 std::to_string(library.backend.num_layers) + "x" +
                                                 std::to_string(library.backend.hidden_dim) + "), backend serves '" +
                                                 backend.descriptor().model_name + "'");
  }
  const auto activations = backend.prompt_activations(system_prompt);

  PersonaReport report;
  report.system_prompt = system_prompt;
  report.prompt_hash = hash::sha256_hex(system_prompt);
  report.library_id = library_id(library);
  report.backend_id = backend.descriptor().backend_id;
  report.timestamp = timestamp;
  report.layer = library.selected_layer;
  report.mode = library.mode;
  report.warnings = prompt_warnings(system_prompt);

  std::map<std::string, double> label_scores;
  for (const auto& dim : library.registry.dimensions()) {
    const auto& entry = library.entry(dim.id);
    const auto raw = raw_score(activations, entry.vector, library.selected_layer, library.mode);
    const auto rescaled = rescale(raw, entry.bounds);
    const auto parts = split(rescaled, dim);
    label_scores[parts.positive_label] = parts.positive;
    label_scores[parts.negative_label] = parts.negative;
    report.dimensions.push_back({dim.id, raw.value, rescaled.value, rescaled.clamped});
  }
  for (const auto& l : library.registry.labels()) {
    report.labels.push_back(
        {l.id, l.display_name, l.description, l.dimension, l.sister, l.category, l.polarity, label_scores.at(l.id)});
  }
  validate_report(report, library.registry);
  return report;
}

/// Stable field order; full precision in numeric fields, 6-decimal strings in
/// `display` fields.
inline nlohmann::ordered_json to_json(const PersonaReport& r) {
  nlohmann::ordered_json j;
  j["system_prompt"] = r.system_prompt;
  j["prompt_hash"] = r.prompt_hash;
  j["library_id"] = r.library_id;
  j["backend_id"] = r.backend_id;
  j["timestamp"] = r.timestamp;
  j["layer"] = r.layer;
  j["projection_mode"] = to_string(r.mode);
  j["dimensions"] = nlohmann::ordered_json::array();
  for (const auto& d : r.dimensions) {
    j["dimensions"].push_back({{"id", d.trait},
                               {"raw", d.raw},
                               {"rescaled", d.rescaled},
                               {"display", fixed6(d.rescaled)},
                               {"clamped", d.clamped}});
  }
  j["labels"] = nlohmann::ordered_json::array();
  for (const auto& l : r.labels) {
    j["labels"].push_back({{"id", l.id},
                           {"display_name", l.display_name},
                           {"dimension", l.dimension},
                           {"polarity", to_string(l.polarity)},
                           {"category", to_string(l.category)},
                           {"sister", l.sister},
                           {"description", l.description},
                           {"score", l.score},
                           {"display", fixed6(l.score)}});
  }
  j["warnings"] = r.warnings;
  return j;
}

inline PersonaReport report_from_json(const nlohmann::json& j) {
  try {
    PersonaReport r;
    r.system_prompt = j.at("system_prompt").get<std::string>();
    r.prompt_hash = j.at("prompt_hash").get<std::string>();
    r.library_id = j.at("library_id").get<std::string>();
    r.backend_id = j.at("backend_id").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.layer = j.at("layer").get<std::size_t>();
    r.mode = parse_projection_mode(j.at("projection_mode").get<std::string>());
    for (const auto& d : j.at("dimensions")) {
      r.dimensions.push_back({d.at("id").get<std::string>(), d.at("raw").get<double>(), d.at("rescaled").get<double>(),
                              d.at("clamped").get<bool>()});
    }
    for (const auto& l : j.at("labels")) {
      LabelScore s;
      s.id = l.at("id").get<std::string>();
      s.display_name = l.at("display_name").get<std::string>();
      s.dimension = l.at("dimension").get<std::string>();
      s.polarity = parse_polarity(l.at("polarity").get<std::string>()).value_or(Polarity::positive);
      s.category = parse_category(l.at("category").get<std::string>()).value_or(Category::neutral);
      s.sister = l.at("sister").get<std::string>();
      s.description = l.at("description").get<std::string>();
      s.score = l.at("score").get<double>();
      r.labels.push_back(std::move(s));
    }
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_document, std::string("report: ") + e.what());
  }
}

inline std::string render_human(const PersonaReport& r, const TraitRegistry& registry) {
  std::ostringstream out;
  out << "layer " << r.layer << " (" << to_string(r.mode) << " projection), library " << r.library_id << "\n";
  for (const auto* l : registry.display_order()) {
    const auto& s = r.label(l->id);
    char line[160];
    std::snprintf(line, sizeof line, "  %-9s %-14s %s\n", std::string(to_string(l->category)).c_str(),
                  s.display_name.c_str(), fixed6(s.score).c_str());
    out << line;
  }
  for (const auto& w : r.warnings) out << "warning: " << w << "\n";
  return out.str();
}

}  // namespace persona
