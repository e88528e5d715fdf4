#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/backend.hpp"
#include "persona/error.hpp"
#include "persona/hash.hpp"
#include "persona/io.hpp"
#include "persona/linalg.hpp"
#include "persona/registry.hpp"

namespace persona {

inline constexpr int kLibraryFormatVersion = 1;
inline constexpr const char* kPipelineVersion = "1.0.0";

/// Difference of mean response activations (trait-positive minus
/// trait-negative) at every layer.
struct PersonaVector {
  std::string trait;
  LayerVectors direction;
  std::size_t kept_positive = 0;
  std::size_t kept_negative = 0;
  BackendDescriptor backend;
  std::string created_at;
  std::string pipeline_version = kPipelineVersion;
  std::vector<std::size_t> degenerate_layers;

  bool is_degenerate(std::size_t layer) const {
    for (auto l : degenerate_layers) {
      if (l == layer) return true;
    }
    return false;
  }
};

struct CalibrationBounds {
  std::string trait;
  std::size_t layer = 0;
  double max_pos = 0.0;
  double min_neg = 0.0;
  ProjectionMode mode = ProjectionMode::double_norm;
  std::vector<std::string> source_prompt_ids;

  void validate() const {
    if (!(max_pos > 0.0) || !(min_neg < 0.0)) {
      throw Error(ErrorCode::calibration_failure,
                  "trait '" + trait + "': bounds require max_pos > 0 and min_neg < 0 (got " +
                      std::to_string(max_pos) + ", " + std::to_string(min_neg) + ")");
    }
  }
};

struct LibraryEntry {
  PersonaVector vector;
  CalibrationBounds bounds;
};

struct PersonaLibrary {
  int format_version = kLibraryFormatVersion;
  TraitRegistry registry;
  BackendDescriptor backend;
  std::size_t selected_layer = 0;
  ProjectionMode mode = ProjectionMode::double_norm;
  std::map<std::string, LibraryEntry> traits;

  const LibraryEntry& entry(const std::string& trait) const {
    auto it = traits.find(trait);
    if (it == traits.end()) throw Error(ErrorCode::missing_coverage, "library has no trait '" + trait + "'");
    return it->second;
  }
};

namespace detail {

inline nlohmann::ordered_json library_content(const PersonaLibrary& lib) {
  nlohmann::ordered_json doc;
  doc["format_version"] = lib.format_version;
  doc["registry"] = lib.registry.to_json();
  doc["backend"] = to_json(lib.backend);
  doc["selected_layer"] = lib.selected_layer;
  doc["projection_mode"] = to_string(lib.mode);
  doc["traits"] = nlohmann::ordered_json::array();
  for (const auto& dim : lib.registry.dimensions()) {
    auto it = lib.traits.find(dim.id);
    if (it == lib.traits.end()) continue;
    const auto& [vec, bounds] = it->second;
    nlohmann::ordered_json t;
    t["id"] = dim.id;
    t["vector"]["shape"] = {vec.direction.num_layers(), vec.direction.hidden_dim()};
    t["vector"]["values"] = std::vector<double>(vec.direction.values().begin(), vec.direction.values().end());
    t["bounds"] = {{"layer", bounds.layer},
                   {"max_pos", bounds.max_pos},
                   {"min_neg", bounds.min_neg},
                   {"projection_mode", to_string(bounds.mode)},
                   {"source_prompt_ids", bounds.source_prompt_ids}};
    t["provenance"] = {{"kept_positive", vec.kept_positive},
                       {"kept_negative", vec.kept_negative},
                       {"created_at", vec.created_at},
                       {"pipeline_version", vec.pipeline_version},
                       {"degenerate_layers", vec.degenerate_layers},
                       {"backend", to_json(vec.backend)}};
    doc["traits"].push_back(std::move(t));
  }
  return doc;
}

}  // namespace detail

/// SHA-256 over the compact serialization of everything except the checksum.
inline std::string library_checksum(const PersonaLibrary& lib) {
  return hash::sha256_hex(detail::library_content(lib).dump());
}

/// Short stable identifier of a library's content.
inline std::string library_id(const PersonaLibrary& lib) { return library_checksum(lib).substr(0, 16); }

/// Checks every structural invariant; throws on the first violation.
inline void validate_library(const PersonaLibrary& lib) {
  if (lib.selected_layer >= lib.backend.num_layers) {
    throw Error(ErrorCode::shape_mismatch, "selected_layer " + std::to_string(lib.selected_layer) + " out of range");
  }
  for (const auto& dim : lib.registry.dimensions()) {
    auto it = lib.traits.find(dim.id);
    if (it == lib.traits.end()) {
      throw Error(ErrorCode::missing_coverage, "library is missing dimension '" + dim.id + "'");
    }
    const auto& [vec, bounds] = it->second;
    if (vec.direction.num_layers() != lib.backend.num_layers || vec.direction.hidden_dim() != lib.backend.hidden_dim) {
      throw Error(ErrorCode::shape_mismatch, "trait '" + dim.id + "': vector shape does not match backend");
    }
    if (bounds.layer != lib.selected_layer) {
      throw Error(ErrorCode::shape_mismatch, "trait '" + dim.id + "': calibration layer differs from selected layer");
    }
    if (bounds.mode != lib.mode) {
      throw Error(ErrorCode::mode_mismatch, "trait '" + dim.id + "': calibration mode differs from library mode");
    }
    bounds.validate();
  }
  for (const auto& [id, _] : lib.traits) {
    if (!lib.registry.has_dimension(id)) throw Error(ErrorCode::unknown_id, "library trait '" + id + "' not in registry");
  }
}

inline std::string serialize_library(const PersonaLibrary& lib) {
  validate_library(lib);
  auto doc = detail::library_content(lib);
  doc["checksum"] = hash::sha256_hex(doc.dump());
  return doc.dump(2) + "\n";
}

inline void save_library(const PersonaLibrary& lib, const std::filesystem::path& path) {
  io::write_file_atomic(path, serialize_library(lib));
}

inline PersonaLibrary parse_library(const std::string& text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::malformed_document, std::string("library: ") + e.what());
  }
  try {
    const auto plain = nlohmann::json::parse(text);
    const int version = plain.at("format_version").get<int>();
    if (version != kLibraryFormatVersion) {
      throw Error(ErrorCode::version_mismatch, "library format_version " + std::to_string(version) +
                                                   " (expected " + std::to_string(kLibraryFormatVersion) + ")");
    }
    PersonaLibrary lib;
    lib.format_version = version;
    lib.registry = load_registry(plain.at("registry"));
    lib.backend = descriptor_from_json(plain.at("backend"));
    lib.selected_layer = plain.at("selected_layer").get<std::size_t>();
    lib.mode = parse_projection_mode(plain.at("projection_mode").get<std::string>());
    for (const auto& t : plain.at("traits")) {
      const auto id = t.at("id").get<std::string>();
      const auto& shape = t.at("vector").at("shape");
      const auto L = shape.at(0).get<std::size_t>(), D = shape.at(1).get<std::size_t>();
      auto values = t.at("vector").at("values").get<std::vector<double>>();
      if (values.size() != L * D || L == 0 || D == 0) {
        throw Error(ErrorCode::shape_mismatch, "trait '" + id + "': vector has " + std::to_string(values.size()) +
                                                   " values for shape (" + std::to_string(L) + ", " +
                                                   std::to_string(D) + ")");
      }
      LibraryEntry e;
      e.vector.trait = id;
      e.vector.direction = LayerVectors(L, D, std::move(values), Reduction::mean_tokens);
      const auto& prov = t.at("provenance");
      e.vector.kept_positive = prov.at("kept_positive").get<std::size_t>();
      e.vector.kept_negative = prov.at("kept_negative").get<std::size_t>();
      e.vector.created_at = prov.at("created_at").get<std::string>();
      e.vector.pipeline_version = prov.at("pipeline_version").get<std::string>();
      e.vector.degenerate_layers = prov.at("degenerate_layers").get<std::vector<std::size_t>>();
      e.vector.backend = descriptor_from_json(prov.at("backend"));
      const auto& b = t.at("bounds");
      e.bounds.trait = id;
      e.bounds.layer = b.at("layer").get<std::size_t>();
      e.bounds.max_pos = b.at("max_pos").get<double>();
      e.bounds.min_neg = b.at("min_neg").get<double>();
      e.bounds.mode = parse_projection_mode(b.at("projection_mode").get<std::string>());
      e.bounds.source_prompt_ids = b.at("source_prompt_ids").get<std::vector<std::string>>();
      if (!lib.traits.emplace(id, std::move(e)).second) {
        throw Error(ErrorCode::duplicate_id, "library trait '" + id + "' appears twice");
      }
    }
    validate_library(lib);
    if (!doc.contains("checksum") || !doc["checksum"].is_string()) {
      throw Error(ErrorCode::checksum_failure, "library has no checksum");
    }
    const auto stored = doc["checksum"].get<std::string>();
    doc.erase("checksum");
    if (hash::sha256_hex(doc.dump()) != stored) {
      throw Error(ErrorCode::checksum_failure, "library content does not match its checksum");
    }
    return lib;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_document, std::string("library: ") + e.what());
  }
}

inline PersonaLibrary load_library(const std::filesystem::path& path) { return parse_library(io::read_file(path)); }

}  // namespace persona
