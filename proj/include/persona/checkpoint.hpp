#pragma once

// On-disk form of every pipeline phase. Layout under an output directory:
//
//   dataset/<trait>.json      ResponseSet with judge scores
//   vectors/<trait>.json      PersonaVector plus the filter outcome
//   leveled/<trait>.json      raw leveled-prompt scores at every layer
//   selection.json            per-trait per-layer regression table
//   calibration/<trait>.json  bounds and the extremal samples behind them
//   library.json              persona library
//   validation.json           regression report at the selected layer

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "persona/io.hpp"
#include "persona/pipeline.hpp"

namespace persona::checkpoint {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline fs::path dataset_path(const fs::path& out, const std::string& trait) { return out / "dataset" / (trait + ".json"); }
inline fs::path vector_path(const fs::path& out, const std::string& trait) { return out / "vectors" / (trait + ".json"); }
inline fs::path leveled_path(const fs::path& out, const std::string& trait) { return out / "leveled" / (trait + ".json"); }
inline fs::path calibration_path(const fs::path& out, const std::string& trait) {
  return out / "calibration" / (trait + ".json");
}
inline fs::path selection_path(const fs::path& out) { return out / "selection.json"; }
inline fs::path library_path(const fs::path& out) { return out / "library.json"; }
inline fs::path validation_path(const fs::path& out) { return out / "validation.json"; }

inline void write(const fs::path& path, const ojson& doc) { io::write_file_atomic(path, doc.dump(2) + "\n"); }

inline nlohmann::json read(const fs::path& path, const std::string& phase) {
  if (!fs::exists(path)) {
    throw Error(ErrorCode::not_found, "missing checkpoint " + path.string() + "; run '" + phase + "' first");
  }
  return io::read_json(path);
}

template <typename F>
auto guarded(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_document, what + ": " + e.what());
  }
}

inline ojson vectors_json(const LayerVectors& v) {
  return {{"shape", {v.num_layers(), v.hidden_dim()}},
          {"reduction", to_string(v.reduction())},
          {"values", std::vector<double>(v.values().begin(), v.values().end())}};
}

inline LayerVectors vectors_from_json(const nlohmann::json& j) {
  return LayerVectors(j.at("shape").at(0).get<std::size_t>(), j.at("shape").at(1).get<std::size_t>(),
                      j.at("values").get<std::vector<double>>(), parse_reduction(j.at("reduction").get<std::string>()));
}

// ---- dataset

inline ojson to_json(const ResponseSet& s) {
  ojson j;
  j["trait"] = s.trait;
  j["backend"] = persona::to_json(s.backend);
  j["pairs"] = ojson::array();
  for (const auto& p : s.pairs) j["pairs"].push_back({{"positive", p.positive}, {"negative", p.negative}});
  j["situations"] = s.situations;
  j["records"] = ojson::array();
  for (const auto& r : s.records) {
    ojson o;
    o["id"] = r.id;
    o["source"] = to_string(r.source);
    o["pair"] = r.pair_index;
    o["situation"] = r.situation_index;
    o["response"] = r.record.response_text;
    o["refusal"] = r.record.refusal;
    o["request_id"] = r.record.request_id;
    o["judge_score"] = r.judge_score ? ojson(*r.judge_score) : ojson(nullptr);
    o["error"] = r.error;
    o["activations"] = r.failed() ? ojson(nullptr) : vectors_json(r.record.activations);
    j["records"].push_back(std::move(o));
  }
  return j;
}

inline ResponseSet response_set_from_json(const nlohmann::json& j) {
  return guarded("dataset checkpoint", [&] {
    ResponseSet s;
    s.trait = j.at("trait").get<std::string>();
    s.backend = descriptor_from_json(j.at("backend"));
    for (const auto& p : j.at("pairs")) {
      s.pairs.push_back({p.at("positive").get<std::string>(), p.at("negative").get<std::string>()});
    }
    s.situations = j.at("situations").get<std::vector<std::string>>();
    for (const auto& o : j.at("records")) {
      TaggedRecord r;
      r.id = o.at("id").get<std::string>();
      r.source = parse_polarity(o.at("source").get<std::string>()).value();
      r.pair_index = o.at("pair").get<int>();
      r.situation_index = o.at("situation").get<int>();
      if (r.pair_index < 0 || r.pair_index >= static_cast<int>(s.pairs.size()) || r.situation_index < 0 ||
          r.situation_index >= static_cast<int>(s.situations.size())) {
        throw Error(ErrorCode::malformed_document, "record " + r.id + " points outside the pair/situation lists");
      }
      const auto& pair = s.pairs[static_cast<std::size_t>(r.pair_index)];
      r.record.system_prompt = r.source == Polarity::positive ? pair.positive : pair.negative;
      r.record.question = s.situations[static_cast<std::size_t>(r.situation_index)];
      r.record.response_text = o.at("response").get<std::string>();
      r.record.refusal = o.at("refusal").get<bool>();
      r.record.request_id = o.at("request_id").get<std::string>();
      r.record.backend = s.backend;
      if (!o.at("judge_score").is_null()) r.judge_score = o.at("judge_score").get<int>();
      r.error = o.at("error").get<std::string>();
      if (!o.at("activations").is_null()) r.record.activations = vectors_from_json(o.at("activations"));
      s.records.push_back(std::move(r));
    }
    return s;
  });
}

// ---- vectors

inline ojson to_json(const PersonaVector& v, const FilterResult& f, const ResponseSet& set) {
  ojson j;
  j["trait"] = v.trait;
  j["direction"] = vectors_json(v.direction);
  j["kept_positive"] = v.kept_positive;
  j["kept_negative"] = v.kept_negative;
  j["backend"] = persona::to_json(v.backend);
  j["created_at"] = v.created_at;
  j["pipeline_version"] = v.pipeline_version;
  j["degenerate_layers"] = v.degenerate_layers;
  j["dropped"] = ojson::array();
  for (const auto& [i, why] : f.dropped) j["dropped"].push_back({{"id", set.records[i].id}, {"reason", to_string(why)}});
  return j;
}

inline PersonaVector persona_vector_from_json(const nlohmann::json& j) {
  return guarded("vector checkpoint", [&] {
    PersonaVector v;
    v.trait = j.at("trait").get<std::string>();
    v.direction = vectors_from_json(j.at("direction"));
    v.kept_positive = j.at("kept_positive").get<std::size_t>();
    v.kept_negative = j.at("kept_negative").get<std::size_t>();
    v.backend = descriptor_from_json(j.at("backend"));
    v.created_at = j.at("created_at").get<std::string>();
    v.pipeline_version = j.at("pipeline_version").get<std::string>();
    v.degenerate_layers = j.at("degenerate_layers").get<std::vector<std::size_t>>();
    return v;
  });
}

// ---- leveled

inline ojson to_json(const LeveledScores& s) {
  ojson j;
  j["trait"] = s.trait;
  j["projection_mode"] = to_string(s.mode);
  j["prompts"] = ojson::array();
  for (const auto& p : s.prompts) j["prompts"].push_back({{"level", p.level}, {"sample", p.sample}, {"text", p.text}});
  j["raw_by_layer"] = s.raw_by_layer;
  return j;
}

inline LeveledScores leveled_from_json(const nlohmann::json& j) {
  return guarded("leveled checkpoint", [&] {
    LeveledScores s;
    s.trait = j.at("trait").get<std::string>();
    s.mode = parse_projection_mode(j.at("projection_mode").get<std::string>());
    for (const auto& p : j.at("prompts")) {
      s.prompts.push_back({p.at("level").get<int>(), p.at("sample").get<int>(), p.at("text").get<std::string>()});
    }
    s.raw_by_layer = j.at("raw_by_layer").get<std::vector<std::vector<double>>>();
    return s;
  });
}

// ---- selection

inline ojson to_json(const LayerSelection& s) {
  ojson j;
  j["selected_layer"] = s.selected_layer;
  j["tie_break"] = s.tie_break;
  j["mean_r_squared"] = s.mean_r_squared;
  j["rows"] = ojson::array();
  for (std::size_t t = 0; t < s.traits.size(); ++t) {
    for (std::size_t l = 0; l < s.fits[t].size(); ++l) {
      const auto& f = s.fits[t][l];
      j["rows"].push_back({{"trait", s.traits[t]},
                           {"layer", l},
                           {"r_squared", f.r_squared},
                           {"slope", f.slope},
                           {"intercept", f.intercept},
                           {"n", f.n}});
    }
  }
  return j;
}

inline LayerSelection selection_from_json(const nlohmann::json& j) {
  return guarded("selection checkpoint", [&] {
    LayerSelection s;
    s.selected_layer = j.at("selected_layer").get<std::size_t>();
    s.tie_break = j.at("tie_break").get<std::string>();
    s.mean_r_squared = j.at("mean_r_squared").get<std::vector<double>>();
    for (const auto& row : j.at("rows")) {
      const auto trait = row.at("trait").get<std::string>();
      if (s.traits.empty() || s.traits.back() != trait) {
        s.traits.push_back(trait);
        s.fits.emplace_back();
      }
      RegressionResult f;
      f.r_squared = row.at("r_squared").get<double>();
      f.slope = row.at("slope").get<double>();
      f.intercept = row.at("intercept").get<double>();
      f.n = row.at("n").get<std::size_t>();
      s.fits.back().push_back(f);
    }
    return s;
  });
}

// ---- calibration

inline ojson to_json(const CalibrationResult& c) {
  ojson j;
  j["trait"] = c.bounds.trait;
  j["layer"] = c.bounds.layer;
  j["projection_mode"] = to_string(c.bounds.mode);
  j["max_pos"] = c.bounds.max_pos;
  j["min_neg"] = c.bounds.min_neg;
  j["samples"] = ojson::array();
  for (const auto& s : c.samples) {
    j["samples"].push_back({{"id", s.prompt_id},
                            {"polarity", to_string(s.polarity)},
                            {"num_sentences", s.num_sentences},
                            {"length_chars", s.length_chars},
                            {"raw", s.raw},
                            {"text", s.text}});
  }
  return j;
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
  return guarded("calibration checkpoint", [&] {
    CalibrationResult c;
    for (const auto& s : j.at("samples")) {
      CalibrationSample x;
      x.prompt_id = s.at("id").get<std::string>();
      x.polarity = parse_polarity(s.at("polarity").get<std::string>()).value();
      x.num_sentences = s.at("num_sentences").get<int>();
      x.length_chars = s.at("length_chars").get<std::size_t>();
      x.raw = s.at("raw").get<double>();
      x.text = s.at("text").get<std::string>();
      c.samples.push_back(std::move(x));
    }
    c.bounds = bounds_from_samples(j.at("trait").get<std::string>(), j.at("layer").get<std::size_t>(),
                                   parse_projection_mode(j.at("projection_mode").get<std::string>()), c.samples);
    return c;
  });
}

}  // namespace persona::checkpoint
