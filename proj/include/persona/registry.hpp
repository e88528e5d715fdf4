#pragma once

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "persona/error.hpp"

namespace persona {

enum class Category { positive, negative, neutral };
enum class Polarity { positive, negative };

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::positive: return "positive";
    case Category::negative: return "negative";
    case Category::neutral: return "neutral";
  }
  return "neutral";
}

inline std::optional<Category> parse_category(std::string_view s) {
  if (s == "positive") return Category::positive;
  if (s == "negative") return Category::negative;
  if (s == "neutral") return Category::neutral;
  return std::nullopt;
}

inline std::string_view to_string(Polarity p) { return p == Polarity::positive ? "+" : "-"; }

inline std::optional<Polarity> parse_polarity(std::string_view s) {
  if (s == "+") return Polarity::positive;
  if (s == "-" || s == "−") return Polarity::negative;
  return std::nullopt;
}

inline Polarity opposite(Polarity p) {
  return p == Polarity::positive ? Polarity::negative : Polarity::positive;
}

struct TraitLabel {
  std::string id;
  std::string display_name;
  std::string description;
  Category category = Category::neutral;
  std::string sister;
  Polarity polarity = Polarity::positive;
  std::string dimension;  // owning dimension id, resolved at load
};

struct TraitDimension {
  std::string id;
  std::string positive_label;
  std::string negative_label;
  std::string prompt_noun;
};

/// Immutable set of trait dimensions and their paired labels. Built only
/// through load_registry, which enforces every structural invariant, so all
/// lookups on registered ids are total.
class TraitRegistry {
 public:
  const std::string& version() const { return version_; }
  const std::vector<TraitDimension>& dimensions() const { return dimensions_; }
  const std::vector<TraitLabel>& labels() const { return labels_; }
  const std::vector<Category>& category_order() const { return category_order_; }

  bool has_label(std::string_view id) const { return label_index_.count(std::string(id)) != 0; }
  bool has_dimension(std::string_view id) const {
    return dimension_index_.count(std::string(id)) != 0;
  }

  const TraitLabel& label(std::string_view id) const {
    auto it = label_index_.find(std::string(id));
    if (it == label_index_.end()) throw Error(ErrorCode::unknown_id, "label '" + std::string(id) + "'");
    return labels_[it->second];
  }

  const TraitDimension& dimension(std::string_view id) const {
    auto it = dimension_index_.find(std::string(id));
    if (it == dimension_index_.end()) {
      throw Error(ErrorCode::unknown_id, "dimension '" + std::string(id) + "'");
    }
    return dimensions_[it->second];
  }

  std::vector<std::string> dimension_ids() const {
    std::vector<std::string> ids;
    for (const auto& d : dimensions_) ids.push_back(d.id);
    return ids;
  }

  /// Labels ordered by category_order, then by registry order within a category.
  std::vector<const TraitLabel*> display_order() const {
    std::vector<const TraitLabel*> out;
    for (Category c : category_order_) {
      for (const auto& l : labels_) {
        if (l.category == c) out.push_back(&l);
      }
    }
    return out;
  }

  /// True when the registry carries exactly the eight standard dimensions.
  bool is_default() const {
    static const std::set<std::string> kDefault = {"empathy",    "sociality",     "encouraging",
                                                   "toxicity",   "sycophancy",    "hallucination",
                                                   "funniness",  "formality"};
    if (dimensions_.size() != kDefault.size() || labels_.size() != 2 * kDefault.size()) return false;
    return std::all_of(dimensions_.begin(), dimensions_.end(),
                       [](const TraitDimension& d) { return kDefault.count(d.id) != 0; });
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json doc;
    doc["version"] = version_;
    doc["dimensions"] = nlohmann::ordered_json::array();
    for (const auto& d : dimensions_) {
      doc["dimensions"].push_back({{"id", d.id},
                                   {"positive_label", d.positive_label},
                                   {"negative_label", d.negative_label},
                                   {"prompt_noun", d.prompt_noun}});
    }
    doc["labels"] = nlohmann::ordered_json::array();
    for (const auto& l : labels_) {
      doc["labels"].push_back({{"id", l.id},
                               {"display_name", l.display_name},
                               {"description", l.description},
                               {"category", to_string(l.category)},
                               {"sister", l.sister},
                               {"polarity", to_string(l.polarity)}});
    }
    doc["category_order"] = nlohmann::ordered_json::array();
    for (Category c : category_order_) doc["category_order"].push_back(to_string(c));
    return doc;
  }

 private:
  friend TraitRegistry load_registry(const nlohmann::json& doc);

  std::string version_;
  std::vector<TraitDimension> dimensions_;
  std::vector<TraitLabel> labels_;
  std::vector<Category> category_order_;
  std::map<std::string, std::size_t> label_index_;
  std::map<std::string, std::size_t> dimension_index_;
};

namespace detail {

inline std::string require_string(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key) || !obj.at(key).is_string()) {
    throw Error(ErrorCode::malformed_document, where + ": missing string field '" + key + "'");
  }
  std::string value = obj.at(key).get<std::string>();
  if (value.empty()) throw Error(ErrorCode::malformed_document, where + ": empty field '" + key + "'");
  return value;
}

}  // namespace detail

inline TraitRegistry load_registry(const nlohmann::json& doc) {
  using detail::require_string;
  if (!doc.is_object()) throw Error(ErrorCode::malformed_document, "registry root must be an object");
  if (!doc.contains("version") || !(doc["version"].is_string() || doc["version"].is_number_integer())) {
    throw Error(ErrorCode::malformed_document, "registry: missing 'version'");
  }
  if (!doc.contains("dimensions") || !doc["dimensions"].is_array() || doc["dimensions"].empty()) {
    throw Error(ErrorCode::malformed_document, "registry: 'dimensions' must be a non-empty array");
  }
  if (!doc.contains("labels") || !doc["labels"].is_array()) {
    throw Error(ErrorCode::malformed_document, "registry: 'labels' must be an array");
  }

  TraitRegistry reg;
  reg.version_ = doc["version"].is_string() ? doc["version"].get<std::string>()
                                            : std::to_string(doc["version"].get<long long>());

  for (const auto& entry : doc["labels"]) {
    TraitLabel l;
    l.id = require_string(entry, "id", "label");
    const std::string where = "label '" + l.id + "'";
    l.display_name = require_string(entry, "display_name", where);
    l.description = require_string(entry, "description", where);
    l.sister = require_string(entry, "sister", where);
    auto cat = parse_category(require_string(entry, "category", where));
    if (!cat) throw Error(ErrorCode::malformed_document, where + ": unknown category");
    l.category = *cat;
    auto pol = parse_polarity(require_string(entry, "polarity", where));
    if (!pol) throw Error(ErrorCode::malformed_document, where + ": polarity must be '+' or '-'");
    l.polarity = *pol;
    if (reg.label_index_.count(l.id)) throw Error(ErrorCode::duplicate_id, "label '" + l.id + "'");
    reg.label_index_[l.id] = reg.labels_.size();
    reg.labels_.push_back(std::move(l));
  }

  for (const auto& entry : doc["dimensions"]) {
    TraitDimension d;
    d.id = require_string(entry, "id", "dimension");
    const std::string where = "dimension '" + d.id + "'";
    d.positive_label = require_string(entry, "positive_label", where);
    d.negative_label = require_string(entry, "negative_label", where);
    d.prompt_noun = require_string(entry, "prompt_noun", where);
    if (reg.dimension_index_.count(d.id)) throw Error(ErrorCode::duplicate_id, "dimension '" + d.id + "'");
    if (d.positive_label == d.negative_label) {
      throw Error(ErrorCode::malformed_document, where + ": positive and negative label are identical");
    }
    for (const auto* lid : {&d.positive_label, &d.negative_label}) {
      auto it = reg.label_index_.find(*lid);
      if (it == reg.label_index_.end()) {
        throw Error(ErrorCode::unknown_reference, where + ": label '" + *lid + "' is not defined");
      }
      auto& label = reg.labels_[it->second];
      if (!label.dimension.empty()) {
        throw Error(ErrorCode::duplicate_id, "label '" + *lid + "' claimed by dimensions '" +
                                                 label.dimension + "' and '" + d.id + "'");
      }
      label.dimension = d.id;
    }
    reg.dimension_index_[d.id] = reg.dimensions_.size();
    reg.dimensions_.push_back(std::move(d));
  }

  for (const auto& l : reg.labels_) {
    if (l.dimension.empty()) {
      throw Error(ErrorCode::unknown_reference, "label '" + l.id + "' belongs to no dimension");
    }
    auto sit = reg.label_index_.find(l.sister);
    if (sit == reg.label_index_.end()) {
      throw Error(ErrorCode::broken_sister, "label '" + l.id + "': sister '" + l.sister + "' is not defined");
    }
    const auto& sister = reg.labels_[sit->second];
    if (sister.id == l.id) throw Error(ErrorCode::broken_sister, "label '" + l.id + "' is its own sister");
    if (sister.dimension != l.dimension) {
      throw Error(ErrorCode::broken_sister, "label '" + l.id + "': sister '" + sister.id +
                                                "' belongs to another dimension");
    }
    if (sister.sister != l.id) {
      throw Error(ErrorCode::broken_sister, "label '" + l.id + "': sister '" + sister.id +
                                                "' does not point back");
    }
    if (sister.polarity == l.polarity) {
      throw Error(ErrorCode::malformed_document, "label '" + l.id + "': polarity equals its sister's");
    }
  }
  for (const auto& d : reg.dimensions_) {
    if (reg.label(d.positive_label).polarity != Polarity::positive) {
      throw Error(ErrorCode::malformed_document,
                  "dimension '" + d.id + "': positive_label '" + d.positive_label + "' has polarity '-'");
    }
  }

  if (doc.contains("category_order")) {
    if (!doc["category_order"].is_array()) {
      throw Error(ErrorCode::malformed_document, "registry: 'category_order' must be an array");
    }
    for (const auto& c : doc["category_order"]) {
      auto cat = c.is_string() ? parse_category(c.get<std::string>()) : std::nullopt;
      if (!cat) throw Error(ErrorCode::malformed_document, "registry: bad category in 'category_order'");
      if (std::find(reg.category_order_.begin(), reg.category_order_.end(), *cat) !=
          reg.category_order_.end()) {
        throw Error(ErrorCode::duplicate_id, "category '" + std::string(to_string(*cat)) + "'");
      }
      reg.category_order_.push_back(*cat);
    }
  }
  for (Category c : {Category::positive, Category::negative, Category::neutral}) {
    if (std::find(reg.category_order_.begin(), reg.category_order_.end(), c) == reg.category_order_.end()) {
      reg.category_order_.push_back(c);
    }
  }
  return reg;
}

inline TraitRegistry load_registry_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::config_error, "cannot open registry '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::malformed_document, path.string() + ": " + e.what());
  }
  return load_registry(doc);
}

}  // namespace persona
