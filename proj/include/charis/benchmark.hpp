// SPDX-License-Identifier: Apache-2.0
#pragma once

// Benchmark manifests (JSONL, one image-prompt pair per line), diversity
// statistics, reference-image quality gate and transformation-rich prompt
// synthesis.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "charis/decomposition.hpp"
#include "charis/ekb.hpp"
#include "charis/image.hpp"
#include "charis/types.hpp"
#include "charis/util.hpp"
#include "charis/vlm_client.hpp"

namespace charis {

struct BenchmarkEntry {
  std::string entry_id;
  std::string subject_id;
  std::string reference_image;
  std::string prompt;
  SubjectType declared_type{};
  Style declared_style{};
  std::vector<TransformationClass> transformation_axes;  // sorted, unique
  std::optional<std::string> generated_image;
  std::optional<std::string> model;

  TypeStyle type_style() const { return {declared_type, declared_style}; }

  friend bool operator==(const BenchmarkEntry&, const BenchmarkEntry&) = default;
};

inline BenchmarkEntry parse_entry(const json& obj) {
  auto str = [&](const char* key) {
    if (!obj.contains(key) || !obj.at(key).is_string()) throw SchemaError(std::string("field '") + key + "' must be a string");
    return obj.at(key).get<std::string>();
  };
  auto opt_str = [&](const char* key) -> std::optional<std::string> {
    if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
    if (!obj.at(key).is_string()) throw SchemaError(std::string("field '") + key + "' must be a string");
    return obj.at(key).get<std::string>();
  };
  static const std::set<std::string> kKnown = {"entry_id",       "subject_id",     "reference_image",
                                               "prompt",         "declared_type",  "declared_style",
                                               "transformation_axes", "generated_image", "model"};
  for (const auto& [key, _] : obj.items())
    if (!kKnown.count(key)) throw SchemaError("unknown field '" + key + "'");

  BenchmarkEntry e;
  e.entry_id = str("entry_id");
  if (e.entry_id.empty() || e.entry_id.find_first_of(" \t\r\n") != std::string::npos)
    throw SchemaError("entry_id must be a non-empty token");
  e.subject_id = str("subject_id");
  if (e.subject_id.empty()) throw SchemaError("subject_id must be non-empty");
  e.reference_image = str("reference_image");
  e.prompt = str("prompt");
  e.declared_type = from_token<SubjectType>(str("declared_type"));
  e.declared_style = from_token<Style>(str("declared_style"));
  if (!obj.contains("transformation_axes") || !obj.at("transformation_axes").is_array())
    throw SchemaError("field 'transformation_axes' must be an array");
  for (const auto& axis : obj.at("transformation_axes")) {
    if (!axis.is_string()) throw SchemaError("transformation_axes must hold strings");
    const auto cls = from_token<TransformationClass>(axis.get<std::string>());
    if (std::find(e.transformation_axes.begin(), e.transformation_axes.end(), cls) != e.transformation_axes.end())
      throw SchemaError("transformation axis '" + axis.get<std::string>() + "' repeated");
    e.transformation_axes.push_back(cls);
  }
  if (e.transformation_axes.empty()) throw SchemaError("entry " + e.entry_id + " has no transformation axes");
  std::sort(e.transformation_axes.begin(), e.transformation_axes.end());
  e.generated_image = opt_str("generated_image");
  e.model = opt_str("model");
  return e;
}

inline json to_json(const BenchmarkEntry& e) {
  json axes = json::array();
  for (auto a : e.transformation_axes) axes.push_back(to_token(a));
  json j = {{"entry_id", e.entry_id},
            {"subject_id", e.subject_id},
            {"reference_image", e.reference_image},
            {"prompt", e.prompt},
            {"declared_type", to_token(e.declared_type)},
            {"declared_style", to_token(e.declared_style)},
            {"transformation_axes", axes}};
  if (e.generated_image) j["generated_image"] = *e.generated_image;
  if (e.model) j["model"] = *e.model;
  return j;
}

inline std::vector<BenchmarkEntry> load_manifest(const std::filesystem::path& path) {
  std::vector<BenchmarkEntry> entries;
  std::set<std::string> ids;
  fs_util::for_each_jsonl(path, [&](std::size_t line_no, const json& obj) {
    auto e = parse_entry(obj);
    if (!ids.insert(e.entry_id).second)
      throw DuplicateEntryId(path.string() + ":" + std::to_string(line_no) + ": duplicate entry_id '" + e.entry_id + "'");
    entries.push_back(std::move(e));
  });
  return entries;
}

inline std::string serialize_manifest(const std::vector<BenchmarkEntry>& entries) {
  std::string out;
  for (const auto& e : entries) out += to_json(e).dump() + "\n";
  return out;
}

/// Resolves a manifest-relative path.
inline std::filesystem::path resolve_path(const std::filesystem::path& manifest_dir, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : (manifest_dir / path).lexically_normal();
}

// ---------------------------------------------------------------------------
// Diversity statistics

struct DiversityStats {
  std::map<TypeStyle, std::size_t> counts;
  std::size_t subject_count = 0;
  std::size_t entry_count = 0;
  Rational mean_axes;
};

inline DiversityStats manifest_stats(const std::vector<BenchmarkEntry>& entries) {
  if (entries.empty()) throw EmptyManifest("manifest has no entries");
  DiversityStats s;
  std::set<std::string> subjects;
  std::int64_t axes = 0;
  for (const auto& e : entries) {
    ++s.counts[e.type_style()];
    subjects.insert(e.subject_id);
    axes += static_cast<std::int64_t>(e.transformation_axes.size());
  }
  s.subject_count = subjects.size();
  s.entry_count = entries.size();
  s.mean_axes = Rational(axes, static_cast<std::int64_t>(entries.size()));
  return s;
}

inline json to_json(const DiversityStats& s) {
  json cells = json::array();
  for (const auto& [ts, n] : s.counts)
    cells.push_back({{"type", to_token(ts.type)}, {"style", to_token(ts.style)}, {"count", n}});
  return {{"entry_count", s.entry_count},
          {"subject_count", s.subject_count},
          {"mean_axes", s.mean_axes.str()},
          {"mean_axes_decimal", s.mean_axes.to_double()},
          {"cells", cells}};
}

// ---------------------------------------------------------------------------
// Quality gate

struct GateConfig {
  int min_width = 1024;
  int min_height = 1024;
  double max_aspect = 2.0;
  int strip_uniform_range = 6;   // per-channel max-min inside a margin strip
  int strip_contrast = 24;       // per-channel mean jump into the interior
};

struct GateReport {
  int width = 0;
  int height = 0;
  std::vector<std::string> findings;  // advisory
};

namespace gate_detail {

struct BandStats {
  std::array<int, 3> lo{255, 255, 255}, hi{0, 0, 0};
  std::array<double, 3> mean{};
};

inline BandStats band(const RgbImage& img, int x0, int y0, int x1, int y1) {
  BandStats b;
  std::array<double, 3> sum{};
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const auto* p = img.at(x, y);
      for (int c = 0; c < 3; ++c) {
        b.lo[c] = std::min<int>(b.lo[c], p[c]);
        b.hi[c] = std::max<int>(b.hi[c], p[c]);
        sum[c] += p[c];
      }
    }
  const double n = static_cast<double>(x1 - x0) * static_cast<double>(y1 - y0);
  for (int c = 0; c < 3; ++c) b.mean[c] = n > 0 ? sum[c] / n : 0;
  return b;
}

}  // namespace gate_detail

/// Flags a uniform margin strip that stands apart from the content next to
/// it, the typical shape of a stamped banner or letterbox watermark.
inline bool has_uniform_margin(const RgbImage& img, const GateConfig& cfg = {}) {
  using gate_detail::band;
  const int k = std::max(4, std::min(img.width, img.height) / 25);
  if (img.width < 3 * k || img.height < 3 * k) return false;
  struct Strip {
    int x0, y0, x1, y1, ix0, iy0, ix1, iy1;
  };
  const int W = img.width, H = img.height;
  const Strip strips[] = {
      {0, 0, W, k, 0, k, W, 2 * k},                  // top
      {0, H - k, W, H, 0, H - 2 * k, W, H - k},      // bottom
      {0, 0, k, H, k, 0, 2 * k, H},                  // left
      {W - k, 0, W, H, W - 2 * k, 0, W - k, H},      // right
  };
  for (const auto& s : strips) {
    const auto outer = band(img, s.x0, s.y0, s.x1, s.y1);
    bool uniform = true;
    for (int c = 0; c < 3; ++c) uniform = uniform && (outer.hi[c] - outer.lo[c]) <= cfg.strip_uniform_range;
    if (!uniform) continue;
    const auto inner = band(img, s.ix0, s.iy0, s.ix1, s.iy1);
    for (int c = 0; c < 3; ++c)
      if (std::abs(inner.mean[c] - outer.mean[c]) >= cfg.strip_contrast) return true;
  }
  return false;
}

inline GateReport quality_gate(const RgbImage& img, const GateConfig& cfg = {}) {
  GateReport r;
  r.width = img.width;
  r.height = img.height;
  if (img.width < cfg.min_width || img.height < cfg.min_height) r.findings.push_back("below_min_resolution");
  if (has_uniform_margin(img, cfg)) r.findings.push_back("suspected_watermark_margin");
  const double aspect = static_cast<double>(std::max(img.width, img.height)) / std::max(1, std::min(img.width, img.height));
  if (aspect > cfg.max_aspect) r.findings.push_back("aspect_extreme");
  return r;
}

inline GateReport quality_gate(const ImagePayload& image, const GateConfig& cfg = {}) {
  return quality_gate(decode_image(*image.bytes), cfg);
}

// ---------------------------------------------------------------------------
// Prompt synthesis

struct PromptDraft {
  std::string prompt;
  std::vector<TransformationClass> axes;
  bool needs_review = false;
};

inline constexpr std::size_t kMinDraftAxes = 5;
inline constexpr std::size_t kMaxDraftAxes = 6;

inline std::string build_synth_prompt(const KnowledgeBase& kb, const TemplateSet& t, int n) {
  std::string classes;
  for (const auto& c : kb.taxonomy.transformation_classes) {
    if (!classes.empty()) classes += "\n";
    classes += "- " + c.id + ": " + c.display_name;
    if (!c.description.empty()) classes += ". " + c.description;
  }
  return t.render("synth", {{"n", std::to_string(n)},
                            {"classes", classes},
                            {"min_axes", std::to_string(kMinDraftAxes)},
                            {"max_axes", std::to_string(kMaxDraftAxes)}});
}

/// Parses `{"prompts": [{"prompt": ..., "axes": [...]}]}`, tolerating code
/// fences or chatter around the outermost object.
inline std::vector<PromptDraft> parse_synth_reply(std::string_view reply, int n) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open)
    throw SynthParseError("reply holds no JSON object");
  json doc;
  try {
    doc = json::parse(reply.substr(open, close - open + 1));
  } catch (const json::parse_error& e) {
    throw SynthParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("prompts") || !doc.at("prompts").is_array())
    throw SynthParseError("expected an object with a 'prompts' array");
  std::vector<PromptDraft> drafts;
  for (const auto& item : doc.at("prompts")) {
    if (!item.is_object() || !item.contains("prompt") || !item.at("prompt").is_string() || !item.contains("axes") ||
        !item.at("axes").is_array())
      throw SynthParseError("each draft needs a 'prompt' string and an 'axes' array");
    PromptDraft d;
    d.prompt = std::string(text::trim(item.at("prompt").get<std::string>()));
    if (d.prompt.empty()) throw SynthParseError("empty prompt text");
    for (const auto& a : item.at("axes")) {
      if (!a.is_string()) throw SynthParseError("axes must be strings");
      const auto cls = try_from_token<TransformationClass>(a.get<std::string>());
      if (!cls) throw SynthParseError("unknown axis '" + a.get<std::string>().substr(0, 60) + "'");
      if (std::find(d.axes.begin(), d.axes.end(), *cls) == d.axes.end()) d.axes.push_back(*cls);
    }
    std::sort(d.axes.begin(), d.axes.end());
    d.needs_review = d.axes.size() < kMinDraftAxes;
    drafts.push_back(std::move(d));
  }
  if (static_cast<int>(drafts.size()) != n)
    throw SynthParseError("asked for " + std::to_string(n) + " drafts, got " + std::to_string(drafts.size()));
  return drafts;
}

inline std::vector<PromptDraft> synth_prompts(const ImagePayload& image, int n, const PipelineContext& ctx) {
  if (n < 1) throw ContractViolation("synth_prompts needs n >= 1");
  VlmRequest req;
  req.stage = stage::synth;
  req.prompt = build_synth_prompt(ctx.kb, ctx.templates, n);
  req.images = {image};
  req.max_tokens = std::max(ctx.max_tokens, 256 * n);
  req.temperature = ctx.temperature;
  return parse_synth_reply(ctx.backend.complete(req).text, n);
}

inline json to_json(const PromptDraft& d) {
  json axes = json::array();
  for (auto a : d.axes) axes.push_back(to_token(a));
  return {{"prompt", d.prompt}, {"transformation_axes", axes}, {"needs_review", d.needs_review}};
}

}  // namespace charis
