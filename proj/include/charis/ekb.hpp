// SPDX-License-Identifier: Apache-2.0
#pragma once

// External knowledge base: the image-agnostic priors that constrain every
// pipeline stage. A (type, style) pair selects attributes, each attribute
// owns an ordered list of features, and the rule set drives aggregation.

#include <algorithm>
#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "charis/error.hpp"
#include "charis/types.hpp"
#include "charis/util.hpp"

namespace charis {

struct TaxonomyEntry {
  std::string id;
  std::string display_name;
  std::string description;
  std::vector<std::string> aliases;  // extra phrases accepted when parsing replies

  friend bool operator==(const TaxonomyEntry&, const TaxonomyEntry&) = default;
};

struct Taxonomy {
  std::vector<TaxonomyEntry> subject_types;
  std::vector<TaxonomyEntry> styles;
  std::vector<TaxonomyEntry> transformation_classes;
  /// Combinations the knowledge base deliberately does not cover.
  std::vector<TypeStyle> unsupported;

  friend bool operator==(const Taxonomy&, const Taxonomy&) = default;
};

struct AttributeSpec {
  std::string id;
  std::string display_name;
  std::vector<TypeStyle> applicability;
  std::vector<std::string> feature_ids;
  std::string prompt_hint;

  bool applies_to(TypeStyle ts) const {
    return std::find(applicability.begin(), applicability.end(), ts) != applicability.end();
  }

  friend bool operator==(const AttributeSpec&, const AttributeSpec&) = default;
};

struct FeatureSpec {
  std::string id;
  std::string display_name;
  std::string attribute_id;
  Tier tier = Tier::minor;
  std::string prompt_hint;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

struct RuleSet {
  /// Identity-neutral transformation classes, kept sorted and unique.
  std::vector<TransformationClass> context_classes;
  /// Points indexed [tier][magnitude]; the `none` column is always 0.
  std::array<std::array<int, 3>, 3> penalty{};
  ConsistencyCategory critical_override = ConsistencyCategory::partial;
  /// Ascending cut-points: points < t0 -> exact, < t1 -> near_exact,
  /// < t2 -> partial, otherwise mismatch.
  std::array<int, 3> thresholds{1, 3, 7};

  bool is_context(TransformationClass c) const {
    return std::find(context_classes.begin(), context_classes.end(), c) != context_classes.end();
  }
  int points(Tier tier, Magnitude m) const {
    return penalty[static_cast<std::size_t>(tier)][static_cast<std::size_t>(m)];
  }

  friend bool operator==(const RuleSet&, const RuleSet&) = default;
};

struct KnowledgeBase {
  std::string version;
  Taxonomy taxonomy;
  std::vector<AttributeSpec> attributes;
  std::vector<FeatureSpec> features;
  RuleSet rules;

  const AttributeSpec* find_attribute(std::string_view id) const {
    for (const auto& a : attributes)
      if (a.id == id) return &a;
    return nullptr;
  }
  const FeatureSpec* find_feature(std::string_view id) const {
    for (const auto& f : features)
      if (f.id == id) return &f;
    return nullptr;
  }
  bool is_declared_unsupported(TypeStyle ts) const {
    const auto& u = taxonomy.unsupported;
    return std::find(u.begin(), u.end(), ts) != u.end();
  }

  friend bool operator==(const KnowledgeBase&, const KnowledgeBase&) = default;
};

struct Finding {
  std::string code;     // machine-readable, e.g. "thresholds_not_ascending"
  std::string subject;  // offending id or combination, may be empty
  std::string message;

  friend bool operator==(const Finding&, const Finding&) = default;
};

struct ValidationReport {
  std::vector<Finding> findings;
  bool ok() const { return findings.empty(); }
  bool has(std::string_view code) const {
    return std::any_of(findings.begin(), findings.end(), [&](const Finding& f) { return f.code == code; });
  }
};

class ValidationError : public Error {
 public:
  explicit ValidationError(ValidationReport report)
      : Error("validation_error", describe(report)), report_(std::move(report)) {}
  const ValidationReport& report() const noexcept { return report_; }

 private:
  static std::string describe(const ValidationReport& r) {
    std::string msg = "knowledge base failed validation:";
    for (const auto& f : r.findings) msg += " [" + f.code + (f.subject.empty() ? "" : " " + f.subject) + "]";
    return msg;
  }
  ValidationReport report_;
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace ekb_detail {

inline const json& require(const json& obj, const char* key, const char* where) {
  if (!obj.is_object() || !obj.contains(key))
    throw SchemaError(std::string(where) + ": missing key '" + key + "'");
  return obj.at(key);
}

inline std::string require_string(const json& obj, const char* key, const char* where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw SchemaError(std::string(where) + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

inline std::string optional_string(const json& obj, const char* key, const char* where) {
  if (!obj.contains(key)) return {};
  if (!obj.at(key).is_string()) throw SchemaError(std::string(where) + ": '" + key + "' must be a string");
  return obj.at(key).get<std::string>();
}

inline std::vector<std::string> string_list(const json& v, const char* where) {
  if (!v.is_array()) throw SchemaError(std::string(where) + ": expected an array of strings");
  std::vector<std::string> out;
  for (const auto& item : v) {
    if (!item.is_string()) throw SchemaError(std::string(where) + ": expected an array of strings");
    out.push_back(item.get<std::string>());
  }
  return out;
}

inline TypeStyle parse_type_style(const json& v, const char* where) {
  return {from_token<SubjectType>(require_string(v, "type", where)),
          from_token<Style>(require_string(v, "style", where))};
}

inline json type_style_json(TypeStyle ts) {
  return {{"type", to_token(ts.type)}, {"style", to_token(ts.style)}};
}

template <typename E>
std::vector<TaxonomyEntry> parse_taxonomy_list(const json& v, const char* where) {
  if (!v.is_array()) throw SchemaError(std::string(where) + ": expected an array");
  std::vector<TaxonomyEntry> out;
  for (const auto& item : v) {
    TaxonomyEntry e;
    e.id = require_string(item, "id", where);
    from_token<E>(e.id);  // closed vocabulary
    e.display_name = require_string(item, "display_name", where);
    e.description = optional_string(item, "description", where);
    if (item.contains("aliases")) e.aliases = string_list(item.at("aliases"), where);
    out.push_back(std::move(e));
  }
  return out;
}

inline json taxonomy_list_json(const std::vector<TaxonomyEntry>& list) {
  json out = json::array();
  for (const auto& e : list) {
    json j = {{"id", e.id}, {"display_name", e.display_name}, {"description", e.description}};
    if (!e.aliases.empty()) j["aliases"] = e.aliases;
    out.push_back(std::move(j));
  }
  return out;
}

}  // namespace ekb_detail

/// Maps a parsed EKB document onto a KnowledgeBase. Only shape and closed
/// vocabularies are checked here; semantic invariants belong to validate_ekb.
inline KnowledgeBase parse_ekb(const json& doc) {
  using namespace ekb_detail;
  if (!doc.is_object()) throw SchemaError("EKB document must be a JSON object");
  KnowledgeBase kb;
  kb.version = require_string(doc, "version", "ekb");

  const auto& tax = require(doc, "taxonomy", "ekb");
  kb.taxonomy.subject_types =
      parse_taxonomy_list<SubjectType>(require(tax, "subject_types", "taxonomy"), "taxonomy.subject_types");
  kb.taxonomy.styles = parse_taxonomy_list<Style>(require(tax, "styles", "taxonomy"), "taxonomy.styles");
  kb.taxonomy.transformation_classes = parse_taxonomy_list<TransformationClass>(
      require(tax, "transformation_classes", "taxonomy"), "taxonomy.transformation_classes");
  if (tax.contains("unsupported")) {
    if (!tax.at("unsupported").is_array()) throw SchemaError("taxonomy.unsupported: expected an array");
    for (const auto& u : tax.at("unsupported"))
      kb.taxonomy.unsupported.push_back(parse_type_style(u, "taxonomy.unsupported"));
  }

  const auto& attrs = require(doc, "attributes", "ekb");
  if (!attrs.is_array()) throw SchemaError("attributes: expected an array");
  for (const auto& a : attrs) {
    AttributeSpec spec;
    spec.id = require_string(a, "id", "attribute");
    spec.display_name = require_string(a, "display_name", "attribute");
    const auto& app = require(a, "applicability", "attribute");
    if (!app.is_array()) throw SchemaError("attribute " + spec.id + ": applicability must be an array");
    for (const auto& ts : app) spec.applicability.push_back(parse_type_style(ts, "attribute.applicability"));
    spec.feature_ids = string_list(require(a, "feature_ids", "attribute"), "attribute.feature_ids");
    spec.prompt_hint = optional_string(a, "prompt_hint", "attribute");
    kb.attributes.push_back(std::move(spec));
  }

  const auto& feats = require(doc, "features", "ekb");
  if (!feats.is_array()) throw SchemaError("features: expected an array");
  for (const auto& f : feats) {
    FeatureSpec spec;
    spec.id = require_string(f, "id", "feature");
    spec.display_name = require_string(f, "display_name", "feature");
    spec.attribute_id = require_string(f, "attribute_id", "feature");
    spec.tier = from_token<Tier>(require_string(f, "tier", "feature"));
    spec.prompt_hint = optional_string(f, "prompt_hint", "feature");
    kb.features.push_back(std::move(spec));
  }

  const auto& rules = require(doc, "rules", "ekb");
  for (const auto& c : string_list(require(rules, "context_classes", "rules"), "rules.context_classes"))
    kb.rules.context_classes.push_back(from_token<TransformationClass>(c));
  std::sort(kb.rules.context_classes.begin(), kb.rules.context_classes.end());
  kb.rules.context_classes.erase(std::unique(kb.rules.context_classes.begin(), kb.rules.context_classes.end()),
                                 kb.rules.context_classes.end());

  const auto& penalty = require(rules, "penalty", "rules");
  for (auto tier : all_values<Tier>()) {
    const auto& row = require(penalty, std::string(to_token(tier)).c_str(), "rules.penalty");
    for (auto m : {Magnitude::minor, Magnitude::major}) {
      const auto& cell = require(row, std::string(to_token(m)).c_str(), "rules.penalty");
      if (!cell.is_number_integer()) throw SchemaError("rules.penalty: points must be integers");
      kb.rules.penalty[static_cast<std::size_t>(tier)][static_cast<std::size_t>(m)] = cell.get<int>();
    }
  }
  kb.rules.critical_override =
      from_token<ConsistencyCategory>(require_string(rules, "critical_override", "rules"));
  const auto& th = require(rules, "thresholds", "rules");
  if (!th.is_array() || th.size() != 3) throw SchemaError("rules.thresholds: expected exactly three integers");
  for (std::size_t i = 0; i < 3; ++i) {
    if (!th[i].is_number_integer()) throw SchemaError("rules.thresholds: expected integers");
    kb.rules.thresholds[i] = th[i].get<int>();
  }
  return kb;
}

inline json to_json(const KnowledgeBase& kb) {
  using namespace ekb_detail;
  json doc;
  doc["version"] = kb.version;
  json unsupported = json::array();
  for (auto ts : kb.taxonomy.unsupported) unsupported.push_back(type_style_json(ts));
  doc["taxonomy"] = {{"subject_types", taxonomy_list_json(kb.taxonomy.subject_types)},
                     {"styles", taxonomy_list_json(kb.taxonomy.styles)},
                     {"transformation_classes", taxonomy_list_json(kb.taxonomy.transformation_classes)},
                     {"unsupported", unsupported}};
  json attrs = json::array();
  for (const auto& a : kb.attributes) {
    json app = json::array();
    for (auto ts : a.applicability) app.push_back(type_style_json(ts));
    attrs.push_back({{"id", a.id},
                     {"display_name", a.display_name},
                     {"applicability", app},
                     {"feature_ids", a.feature_ids},
                     {"prompt_hint", a.prompt_hint}});
  }
  doc["attributes"] = attrs;
  json feats = json::array();
  for (const auto& f : kb.features)
    feats.push_back({{"id", f.id},
                     {"display_name", f.display_name},
                     {"attribute_id", f.attribute_id},
                     {"tier", to_token(f.tier)},
                     {"prompt_hint", f.prompt_hint}});
  doc["features"] = feats;
  json context = json::array();
  for (auto c : kb.rules.context_classes) context.push_back(to_token(c));
  json penalty = json::object();
  for (auto tier : all_values<Tier>())
    penalty[std::string(to_token(tier))] = {{"minor", kb.rules.points(tier, Magnitude::minor)},
                                            {"major", kb.rules.points(tier, Magnitude::major)}};
  doc["rules"] = {{"context_classes", context},
                  {"penalty", penalty},
                  {"critical_override", to_token(kb.rules.critical_override)},
                  {"thresholds", kb.rules.thresholds}};
  return doc;
}

// ---------------------------------------------------------------------------
// Validation

inline ValidationReport validate_ekb(const KnowledgeBase& kb) {
  ValidationReport report;
  auto add = [&](std::string code, std::string subject, std::string message) {
    report.findings.push_back({std::move(code), std::move(subject), std::move(message)});
  };

  if (kb.version.empty()) add("missing_version", "", "version must be non-empty");

  auto check_taxonomy = [&]<typename E>(const std::vector<TaxonomyEntry>& list, const char* name, E*) {
    std::set<std::string> seen;
    for (const auto& e : list)
      if (!seen.insert(e.id).second) add("taxonomy_duplicate", e.id, std::string(name) + " lists '" + e.id + "' twice");
    for (auto tok : EnumTokens<E>::tokens)
      if (!seen.count(std::string(tok)))
        add("taxonomy_incomplete", std::string(tok), std::string(name) + " does not describe '" + std::string(tok) + "'");
  };
  check_taxonomy(kb.taxonomy.subject_types, "subject_types", static_cast<SubjectType*>(nullptr));
  check_taxonomy(kb.taxonomy.styles, "styles", static_cast<Style*>(nullptr));
  check_taxonomy(kb.taxonomy.transformation_classes, "transformation_classes",
                 static_cast<TransformationClass*>(nullptr));

  std::map<std::string, const AttributeSpec*> attr_by_id;
  for (const auto& a : kb.attributes) {
    if (!text::is_token(a.id)) add("invalid_token", a.id, "attribute id '" + a.id + "' is not lower_snake_case");
    if (!attr_by_id.emplace(a.id, &a).second) add("duplicate_attribute_id", a.id, "attribute id repeated");
    if (a.feature_ids.empty()) add("attribute_no_features", a.id, "attribute lists no features");
    if (a.applicability.empty()) add("attribute_no_applicability", a.id, "attribute applies to no combination");
  }

  std::map<std::string, const FeatureSpec*> feat_by_id;
  for (const auto& f : kb.features) {
    if (!text::is_token(f.id)) add("invalid_token", f.id, "feature id '" + f.id + "' is not lower_snake_case");
    if (!feat_by_id.emplace(f.id, &f).second) add("duplicate_feature_id", f.id, "feature id repeated");
    if (!attr_by_id.count(f.attribute_id))
      add("unknown_attribute_reference", f.id,
          "feature '" + f.id + "' names unknown attribute '" + f.attribute_id + "'");
  }

  // Tree shape: every listed feature resolves, is listed exactly once, and
  // agrees with its declared parent.
  std::map<std::string, std::string> listed_under;
  for (const auto& a : kb.attributes) {
    for (const auto& fid : a.feature_ids) {
      auto it = feat_by_id.find(fid);
      if (it == feat_by_id.end()) {
        add("unknown_feature_reference", fid, "attribute '" + a.id + "' references missing feature '" + fid + "'");
        continue;
      }
      auto [pos, inserted] = listed_under.emplace(fid, a.id);
      if (!inserted)
        add("feature_multiple_parents", fid, "feature '" + fid + "' listed under '" + pos->second + "' and '" + a.id + "'");
      else if (it->second->attribute_id != a.id)
        add("feature_parent_mismatch", fid,
            "feature '" + fid + "' declares parent '" + it->second->attribute_id + "' but is listed under '" + a.id + "'");
    }
  }
  for (const auto& f : kb.features)
    if (!listed_under.count(f.id) && attr_by_id.count(f.attribute_id))
      add("orphan_feature", f.id, "feature '" + f.id + "' is not listed by its parent attribute");

  for (auto ts : all_type_styles()) {
    const bool covered = std::any_of(kb.attributes.begin(), kb.attributes.end(),
                                     [&](const AttributeSpec& a) { return a.applies_to(ts); });
    const bool declared = kb.is_declared_unsupported(ts);
    if (!covered && !declared)
      add("uncovered_type_style", ts.str(), "no attribute applies to " + ts.str() + " and it is not declared unsupported");
    if (covered && declared)
      add("unsupported_but_covered", ts.str(), ts.str() + " is declared unsupported but attributes apply to it");
  }

  const auto& r = kb.rules;
  for (auto tier : all_values<Tier>()) {
    const int minor = r.points(tier, Magnitude::minor);
    const int major = r.points(tier, Magnitude::major);
    const std::string t(to_token(tier));
    if (r.points(tier, Magnitude::none) != 0) add("penalty_none_nonzero", t, "magnitude none must cost 0 points");
    if (minor < 0 || major < 0) add("penalty_negative", t, "penalty points must be non-negative");
    if (minor < r.points(tier, Magnitude::none) || major < minor)
      add("penalty_not_monotone", t, "penalty must not decrease with magnitude");
  }
  if (!(r.thresholds[0] < r.thresholds[1] && r.thresholds[1] < r.thresholds[2]))
    add("thresholds_not_ascending", "", "thresholds must be strictly ascending");
  if (r.thresholds[0] < 1) add("thresholds_first_nonpositive", "", "first threshold must be >= 1 so zero points is exact");
  if (r.critical_override != ConsistencyCategory::partial && r.critical_override != ConsistencyCategory::mismatch)
    add("critical_override_invalid", std::string(to_token(r.critical_override)),
        "critical_override must be partial or mismatch");
  return report;
}

/// Reads, parses and validates an EKB document.
inline KnowledgeBase load_ekb(const std::filesystem::path& path) {
  const std::string content = fs_util::read_file(path);
  if (text::trim(content).empty()) throw SchemaError(path.string() + ": empty document");
  json doc;
  try {
    doc = json::parse(content);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  KnowledgeBase kb = parse_ekb(doc);
  auto report = validate_ekb(kb);
  if (!report.ok()) throw ValidationError(std::move(report));
  return kb;
}

inline std::string serialize_ekb(const KnowledgeBase& kb) { return to_json(kb).dump(2) + "\n"; }

// ---------------------------------------------------------------------------
// Queries

/// Attributes applicable to (t, s), in declaration order.
inline std::vector<AttributeSpec> attributes_for(const KnowledgeBase& kb, SubjectType t, Style s) {
  const TypeStyle ts{t, s};
  if (kb.is_declared_unsupported(ts)) throw UnsupportedCombination(ts.str() + " is declared unsupported");
  std::vector<AttributeSpec> out;
  for (const auto& a : kb.attributes)
    if (a.applies_to(ts)) out.push_back(a);
  return out;
}

/// Features of the given attributes, concatenated in attribute-list order
/// and each attribute's declaration order, without duplicates.
inline std::vector<FeatureSpec> features_for(const KnowledgeBase& kb, const std::vector<std::string>& attr_ids) {
  std::vector<FeatureSpec> out;
  std::set<std::string> seen;
  for (const auto& aid : attr_ids) {
    const auto* attr = kb.find_attribute(aid);
    if (!attr) throw UnknownAttribute(aid);
    for (const auto& fid : attr->feature_ids) {
      if (!seen.insert(fid).second) continue;
      const auto* feat = kb.find_feature(fid);
      if (!feat) throw UnknownFeature(fid);
      out.push_back(*feat);
    }
  }
  return out;
}

inline const TaxonomyEntry* find_taxonomy_entry(const std::vector<TaxonomyEntry>& list, std::string_view id) {
  for (const auto& e : list)
    if (e.id == id) return &e;
  return nullptr;
}

}  // namespace charis
