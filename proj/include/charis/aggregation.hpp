// SPDX-License-Identifier: Apache-2.0
#pragma once

// Aggregation of per-feature transformation reports into one consistency
// category, either by the local rule engine or by delegating to the VLM with
// the same rules rendered as prose.

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "charis/decomposition.hpp"
#include "charis/ekb.hpp"
#include "charis/transform_analysis.hpp"
#include "charis/types.hpp"
#include "charis/util.hpp"

namespace charis {

using ReportMap = std::map<std::string, TransformationReport>;

struct TraceEntry {
  std::string feature_id;  // empty for pair-level rules
  std::optional<TransformationStep> step;
  int points = 0;
  std::string rule_id;

  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

enum class AggregationMode { rules, vlm };

inline std::string_view to_token(AggregationMode m) { return m == AggregationMode::rules ? "rules" : "vlm"; }

struct CategorizationResult {
  ConsistencyCategory category = ConsistencyCategory::exact;
  int total_points = 0;
  std::vector<TraceEntry> trace;  // rules mode
  std::string raw_reply;          // vlm mode
  AggregationMode mode = AggregationMode::rules;
};

// ---------------------------------------------------------------------------
// Scores

/// Category -> [0,1] score. Must be strictly increasing along the category
/// order with endpoints 0 and 1.
struct ScoreMap {
  std::array<Rational, 4> values{Rational(0), Rational(1, 3), Rational(2, 3), Rational(1)};

  void validate() const {
    if (!(values[0] == Rational(0)) || !(values[3] == Rational(1)))
      throw ConfigError("score map endpoints must be 0 and 1");
    for (std::size_t i = 1; i < values.size(); ++i)
      if (!(values[i - 1] < values[i])) throw ConfigError("score map must be strictly increasing");
  }
};

inline Rational normalized_rational(ConsistencyCategory c, const ScoreMap& map = {}) {
  return map.values[static_cast<std::size_t>(c)];
}

inline double normalize(ConsistencyCategory c, const ScoreMap& map = {}) { return normalized_rational(c, map).to_double(); }

// ---------------------------------------------------------------------------
// Rule engine

/// Points a single step costs a feature of the given tier.
inline int severity_of(const TransformationStep& step, Tier tier, const RuleSet& rules) {
  if (step.magnitude == Magnitude::none || step.provenance != Provenance::intrinsic || rules.is_context(step.cls))
    return 0;
  return rules.points(tier, step.magnitude);
}

inline ConsistencyCategory category_for_points(int points, const RuleSet& rules) {
  if (points < rules.thresholds[0]) return ConsistencyCategory::exact;
  if (points < rules.thresholds[1]) return ConsistencyCategory::near_exact;
  if (points < rules.thresholds[2]) return ConsistencyCategory::partial;
  return ConsistencyCategory::mismatch;
}

inline CategorizationResult categorize_rules(const ReportMap& reports, const KnowledgeBase& kb) {
  const auto& rules = kb.rules;
  CategorizationResult out;
  out.mode = AggregationMode::rules;
  std::string override_feature;

  for (const auto& [feature_id, report] : reports) {
    const auto* spec = kb.find_feature(feature_id);
    if (!spec) throw UnknownFeature(feature_id);
    for (const auto& step : report.steps) {
      if (step.magnitude == Magnitude::none) continue;
      TraceEntry e{feature_id, step, severity_of(step, spec->tier, rules), {}};
      if (step.provenance != Provenance::intrinsic)
        e.rule_id = "exempt.provenance." + std::string(to_token(step.provenance));
      else if (rules.is_context(step.cls))
        e.rule_id = "exempt.context_class." + std::string(to_token(step.cls));
      else
        e.rule_id = "penalty." + std::string(to_token(spec->tier)) + "." + std::string(to_token(step.magnitude));
      out.total_points += e.points;
      if (e.points > 0 && spec->tier == Tier::critical && step.magnitude == Magnitude::major && override_feature.empty())
        override_feature = feature_id;
      out.trace.push_back(std::move(e));
    }
  }

  out.category = category_for_points(out.total_points, rules);
  out.trace.push_back({"", std::nullopt, 0, "threshold." + std::string(to_token(out.category))});
  if (!override_feature.empty()) {
    out.category = std::min(out.category, rules.critical_override);
    out.trace.push_back({override_feature, std::nullopt, 0,
                         "override.critical_major." + std::string(to_token(rules.critical_override))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prose rendering shared by the VLM prompt and the annotation guidelines

inline std::string category_definition(ConsistencyCategory c) {
  switch (c) {
    case ConsistencyCategory::exact: return "Exact Match: full identity preservation.";
    case ConsistencyCategory::near_exact: return "Near Exact Match: minor cosmetic variations not affecting identity.";
    case ConsistencyCategory::partial: return "Partial Match: significant alterations but identifiable features retained.";
    case ConsistencyCategory::mismatch: return "Mismatch: identity severely compromised or lost.";
  }
  return {};
}

inline std::string render_rules_prose(const KnowledgeBase& kb) {
  const auto& r = kb.rules;
  std::vector<std::string> context;
  for (auto c : r.context_classes) context.push_back(std::string(to_token(c)));
  std::vector<std::string> critical;
  for (const auto& f : kb.features)
    if (f.tier == Tier::critical) critical.push_back(f.display_name);

  std::string out;
  out += "Categories, best to worst:\n";
  for (auto c : {ConsistencyCategory::exact, ConsistencyCategory::near_exact, ConsistencyCategory::partial,
                 ConsistencyCategory::mismatch})
    out += "- " + std::string(to_token(c)) + ": " + category_definition(c) + "\n";
  out += "Rules:\n";
  out += "1. Only intrinsic changes count against identity. Changes induced by pose or by rendering style are "
         "acceptable.\n";
  out += "2. These transformation classes never count against identity: " + text::join(context, ", ") + ".\n";
  out += "3. Features are weighted by importance. Critical features (" + text::join(critical, ", ") +
         ") weigh most, then major features, then minor ones such as clothing.\n";
  out += "4. Points per intrinsic change (minor/major magnitude): critical " +
         std::to_string(r.points(Tier::critical, Magnitude::minor)) + "/" +
         std::to_string(r.points(Tier::critical, Magnitude::major)) + ", major " +
         std::to_string(r.points(Tier::major, Magnitude::minor)) + "/" +
         std::to_string(r.points(Tier::major, Magnitude::major)) + ", minor " +
         std::to_string(r.points(Tier::minor, Magnitude::minor)) + "/" +
         std::to_string(r.points(Tier::minor, Magnitude::major)) + ".\n";
  out += "5. Total points below " + std::to_string(r.thresholds[0]) + " is exact, below " +
         std::to_string(r.thresholds[1]) + " is near_exact, below " + std::to_string(r.thresholds[2]) +
         " is partial, otherwise mismatch.\n";
  out += "6. A major intrinsic change to any critical feature caps the category at " +
         std::string(to_token(r.critical_override)) + ".\n";
  return out;
}

inline std::string render_reports(const ReportMap& reports, const KnowledgeBase& kb) {
  std::string out;
  for (const auto& [feature_id, report] : reports) {
    const auto* spec = kb.find_feature(feature_id);
    if (!spec) throw UnknownFeature(feature_id);
    out += "Feature " + feature_id + " (" + std::string(to_token(spec->tier)) + "):\n";
    if (report.steps.empty()) out += "  " + std::string(kNoChange) + "\n";
    for (const auto& s : report.steps) out += "  " + format_step(s) + "\n";
  }
  return out;
}

inline std::map<std::string, std::string> category_aliases() {
  return {{"exact match", "exact"},       {"near exact match", "near_exact"}, {"near-exact", "near_exact"},
          {"nearly exact", "near_exact"}, {"partial match", "partial"},       {"no match", "mismatch"},
          {"mis match", "mismatch"}};
}

inline ConsistencyCategory parse_category(std::string_view reply) {
  try {
    return from_token<ConsistencyCategory>(parse_choice(reply, all_tokens<ConsistencyCategory>(), category_aliases()));
  } catch (const ParseMiss& e) {
    throw CategorizationParseError(e.what());
  } catch (const ParseAmbiguous& e) {
    throw CategorizationParseError(e.what());
  }
}

inline std::string build_categorization_prompt(const KnowledgeBase& kb, const TemplateSet& t, const ReportMap& reports) {
  return t.render("categorization", {{"reports", render_reports(reports, kb)},
                                     {"rules", render_rules_prose(kb)},
                                     {"categories", text::join(all_tokens<ConsistencyCategory>(), ", ")}});
}

/// Delegates the final verdict to the VLM; both images accompany the
/// serialized reports and rule prose.
inline CategorizationResult categorize_vlm(const ReportMap& reports, const ImagePayload& ref_image,
                                           const ImagePayload& gen_image, const PipelineContext& ctx) {
  for (const auto& [feature_id, _] : reports)
    if (!ctx.kb.find_feature(feature_id)) throw UnknownFeature(feature_id);
  VlmRequest req;
  req.stage = stage::categorization;
  req.prompt = build_categorization_prompt(ctx.kb, ctx.templates, reports);
  req.images = {ref_image, gen_image};
  req.constraints = all_tokens<ConsistencyCategory>();
  req.max_tokens = ctx.max_tokens;
  req.temperature = ctx.temperature;
  const auto resp = ctx.backend.complete(req);
  CategorizationResult out;
  out.mode = AggregationMode::vlm;
  out.raw_reply = resp.text;
  out.category = parse_category(resp.text);
  return out;
}

inline json to_json(const CategorizationResult& r) {
  json j = {{"mode", to_token(r.mode)}, {"category", to_token(r.category)}, {"total_points", r.total_points}};
  if (r.mode == AggregationMode::rules) {
    json trace = json::array();
    for (const auto& e : r.trace) {
      json t = {{"feature_id", e.feature_id}, {"points", e.points}, {"rule", e.rule_id}};
      if (e.step) t["step"] = to_json(*e.step);
      trace.push_back(std::move(t));
    }
    j["trace"] = trace;
  } else {
    j["raw_reply"] = r.raw_reply;
  }
  return j;
}

}  // namespace charis
