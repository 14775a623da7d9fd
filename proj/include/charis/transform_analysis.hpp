// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-feature transformation analysis between a reference and a generated
// image. One VLM call per visible reference feature; replies follow a strict
// line grammar:
//
//   reply := "NO_CHANGE" | line { "\n" line }
//   line  := class "|" magnitude "|" provenance "|" description

#include <algorithm>
#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "charis/decomposition.hpp"
#include "charis/ekb.hpp"
#include "charis/types.hpp"
#include "charis/vlm_client.hpp"

namespace charis {

inline constexpr std::string_view kNoChange = "NO_CHANGE";

struct TransformationStep {
  TransformationClass cls{};
  Magnitude magnitude = Magnitude::none;
  Provenance provenance = Provenance::intrinsic;
  std::string description;

  friend bool operator==(const TransformationStep&, const TransformationStep&) = default;
};

struct TransformationReport {
  std::string feature_id;
  std::vector<TransformationStep> steps;  // empty when the feature is unchanged
  std::string raw_reply;

  friend bool operator==(const TransformationReport&, const TransformationReport&) = default;
};

inline std::string format_step(const TransformationStep& s) {
  return std::string(to_token(s.cls)) + " | " + std::string(to_token(s.magnitude)) + " | " +
         std::string(to_token(s.provenance)) + " | " + s.description;
}

namespace transform_detail {

inline std::string normalize_token(std::string_view raw) {
  std::string t = text::lower(text::trim(raw));
  for (auto& c : t)
    if (c == ' ' || c == '-') c = '_';
  return t;
}

}  // namespace transform_detail

/// Parses one `class | magnitude | provenance | description` line. Tokens
/// are case-insensitive; the description is everything after the third bar.
inline TransformationStep parse_transformation_line(std::string_view raw_line) {
  using transform_detail::normalize_token;
  auto line = text::trim(raw_line);
  if (line.size() >= 2 && (line[0] == '-' || line[0] == '*') && line[1] == ' ') line = text::trim(line.substr(2));

  std::vector<std::string> fields;
  std::size_t start = 0;
  for (int i = 0; i < 3; ++i) {
    const auto bar = line.find('|', start);
    if (bar == std::string_view::npos) break;
    fields.emplace_back(line.substr(start, bar - start));
    start = bar + 1;
  }
  if (fields.size() != 3)
    throw AnalysisParseError("expected 'class | magnitude | provenance | description', got: " +
                             std::string(line.substr(0, 120)));
  fields.emplace_back(line.substr(start));

  TransformationStep step;
  std::vector<std::string> bad;
  const auto cls = try_from_token<TransformationClass>(normalize_token(fields[0]));
  const auto mag = try_from_token<Magnitude>(normalize_token(fields[1]));
  const auto prov = try_from_token<Provenance>(normalize_token(fields[2]));
  if (!cls) bad.push_back("class '" + std::string(text::trim(fields[0])).substr(0, 60) + "'");
  if (!mag) bad.push_back("magnitude '" + std::string(text::trim(fields[1])).substr(0, 60) + "'");
  if (!prov) bad.push_back("provenance '" + std::string(text::trim(fields[2])).substr(0, 60) + "'");
  if (!bad.empty()) throw AnalysisParseError("unknown " + text::join(bad, ", "));
  step.cls = *cls;
  step.magnitude = *mag;
  step.provenance = *prov;
  step.description = std::string(text::trim(fields[3]));
  if (step.description.empty()) throw AnalysisParseError("transformation line has an empty description");
  return step;
}

inline std::vector<TransformationStep> parse_transformation_reply(std::string_view reply) {
  std::vector<std::string> content;
  for (const auto& l : text::lines(reply)) {
    const auto t = text::trim(l);
    if (t.empty() || t.rfind("```", 0) == 0) continue;
    content.emplace_back(t);
  }
  if (content.empty()) throw AnalysisParseError("empty reply");
  if (content.size() == 1) {
    std::string only = content.front();
    while (!only.empty() && (only.back() == '.' || only.back() == '`')) only.pop_back();
    while (!only.empty() && only.front() == '`') only.erase(only.begin());
    if (text::lower(only) == "no_change") return {};
  }
  std::vector<TransformationStep> steps;
  for (const auto& l : content) {
    if (text::lower(l).find("no_change") != std::string::npos && l.find('|') == std::string::npos)
      throw AnalysisParseError("NO_CHANGE must be the only line of a reply");
    steps.push_back(parse_transformation_line(l));
  }
  return steps;
}

inline std::string build_transformation_prompt(const KnowledgeBase& kb, const TemplateSet& t,
                                               const FeatureSpec& feature) {
  std::string classes;
  for (const auto& c : kb.taxonomy.transformation_classes) {
    if (!classes.empty()) classes += "\n";
    classes += "- " + c.id + ": " + c.display_name;
    if (!c.description.empty()) classes += ". " + c.description;
  }
  const auto* attr = kb.find_attribute(feature.attribute_id);
  return t.render("transformation",
                  {{"feature_id", feature.id},
                   {"feature_name", feature.display_name},
                   {"feature_hint", feature.prompt_hint.empty() ? feature.display_name : feature.prompt_hint},
                   {"attribute_name", attr ? attr->display_name : feature.attribute_id},
                   {"classes", classes},
                   {"magnitudes", text::join(all_tokens<Magnitude>(), ", ")},
                   {"provenances", text::join(all_tokens<Provenance>(), ", ")}});
}

/// Asks for the transformation sequence of one feature; both images travel
/// in one request, reference first.
inline TransformationReport analyze_feature(const FeatureSpec& feature, const ImagePayload& ref_image,
                                            const ImagePayload& gen_image, const PipelineContext& ctx) {
  VlmRequest req;
  req.stage = stage::transformation;
  req.focus = feature.id;
  req.prompt = build_transformation_prompt(ctx.kb, ctx.templates, feature);
  req.images = {ref_image, gen_image};
  req.max_tokens = ctx.max_tokens;
  req.temperature = ctx.temperature;
  const auto resp = ctx.backend.complete(req);
  TransformationReport report;
  report.feature_id = feature.id;
  report.raw_reply = resp.text;
  try {
    report.steps = parse_transformation_reply(resp.text);
  } catch (const AnalysisParseError& e) {
    throw AnalysisParseError("feature " + feature.id + ": " + e.what());
  }
  return report;
}

struct FeatureAnalysis {
  std::string feature_id;
  std::optional<TransformationReport> report;
  std::string error_code;  // set iff report is empty
  std::string error_message;

  bool ok() const { return report.has_value(); }
};

/// One entry per visible reference feature, in the hierarchy's feature order.
struct AnalysisResult {
  std::vector<FeatureAnalysis> features;

  bool partial() const {
    return std::any_of(features.begin(), features.end(), [](const FeatureAnalysis& f) { return !f.ok(); });
  }
  std::map<std::string, TransformationReport> reports() const {
    std::map<std::string, TransformationReport> out;
    for (const auto& f : features)
      if (f.report) out.emplace(f.feature_id, *f.report);
    return out;
  }
};

/// Analyzes every feature of the reference hierarchy. Individual failures
/// become failed entries; only a total failure throws. `workers` bounds the
/// number of concurrent requests for this pair.
inline AnalysisResult analyze_all(const Hierarchy& hierarchy_ref, const ImagePayload& ref_image,
                                  const ImagePayload& gen_image, const PipelineContext& ctx, std::size_t workers = 1) {
  const auto& ids = hierarchy_ref.visible_feature_ids;
  if (ids.empty()) throw ContractViolation("reference hierarchy has no visible features");

  AnalysisResult result;
  result.features.resize(ids.size());
  auto run_one = [&](std::size_t i) {
    auto& slot = result.features[i];
    slot.feature_id = ids[i];
    try {
      const auto* spec = ctx.kb.find_feature(ids[i]);
      if (!spec) throw UnknownFeature(ids[i]);
      slot.report = analyze_feature(*spec, ref_image, gen_image, ctx);
    } catch (const Error& e) {
      slot.error_code = e.code();
      slot.error_message = e.what();
    }
  };

  workers = std::clamp<std::size_t>(workers, 1, ids.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < ids.size(); ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < ids.size(); i = next++) run_one(i);
      });
  }

  if (std::none_of(result.features.begin(), result.features.end(), [](const FeatureAnalysis& f) { return f.ok(); }))
    throw AllFeaturesFailed("all " + std::to_string(ids.size()) + " feature analyses failed; first: " +
                            result.features.front().error_message);
  return result;
}

inline json to_json(const TransformationStep& s) {
  return {{"class", to_token(s.cls)},
          {"magnitude", to_token(s.magnitude)},
          {"provenance", to_token(s.provenance)},
          {"description", s.description}};
}

inline json to_json(const FeatureAnalysis& f) {
  json j = {{"feature_id", f.feature_id}};
  if (f.report) {
    json steps = json::array();
    for (const auto& s : f.report->steps) steps.push_back(to_json(s));
    j["status"] = "ok";
    j["steps"] = steps;
    j["raw_reply"] = f.report->raw_reply;
  } else {
    j["status"] = "failed";
    j["error"] = f.error_code;
    j["message"] = f.error_message;
  }
  return j;
}

}  // namespace charis
