// SPDX-License-Identifier: Apache-2.0
#pragma once

// Hierarchical decomposition of one image: (type, style) -> visible
// attributes -> visible features, each stage a constrained VLM prompt built
// from the knowledge base.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "charis/ekb.hpp"
#include "charis/error.hpp"
#include "charis/templates.hpp"
#include "charis/vlm_client.hpp"

namespace charis {

/// Everything a pipeline stage needs besides its inputs. Holds references;
/// all referents must outlive the context and are only read.
struct PipelineContext {
  const KnowledgeBase& kb;
  VlmBackend& backend;
  const TemplateSet& templates;
  int max_tokens = 512;
  double temperature = 0.0;
};

struct StageRecord {
  std::string stage;
  std::string prompt;
  std::string reply;

  friend bool operator==(const StageRecord&, const StageRecord&) = default;
};

struct Hierarchy {
  SubjectType subject_type{};
  Style style{};
  std::vector<std::string> visible_attribute_ids;
  std::vector<std::string> visible_feature_ids;
  std::vector<StageRecord> stage_transcripts;

  friend bool operator==(const Hierarchy&, const Hierarchy&) = default;
};

class DecompositionFailed : public Error {
 public:
  DecompositionFailed(std::string stage, std::string cause, const std::string& message,
                      std::vector<StageRecord> transcript = {})
      : Error("decomposition_failed", "stage " + stage + ": " + message),
        stage_(std::move(stage)),
        cause_(std::move(cause)),
        transcript_(std::move(transcript)) {}

  const std::string& stage() const noexcept { return stage_; }
  /// Code of the underlying failure, e.g. "parse_miss" or "mock_miss".
  const std::string& cause() const noexcept { return cause_; }
  const std::vector<StageRecord>& transcript() const noexcept { return transcript_; }

 private:
  std::string stage_;
  std::string cause_;
  std::vector<StageRecord> transcript_;
};

// ---------------------------------------------------------------------------
// Checklist replies

namespace checklist_detail {

inline std::string normalize_id(std::string_view raw) {
  std::string s(text::trim(raw));
  const std::string strip = "`'\"*";
  while (!s.empty() && strip.find(s.front()) != std::string::npos) s.erase(s.begin());
  while (!s.empty() && strip.find(s.back()) != std::string::npos) s.pop_back();
  s = text::lower(text::trim(s));
  for (auto& c : s)
    if (c == ' ' || c == '-') c = '_';
  return s;
}

/// Splits "<id> [:|=|-] yes|no" into (id, verdict); std::nullopt if the line
/// does not end with a yes/no word.
inline std::optional<std::pair<std::string, bool>> split_verdict(std::string_view line) {
  std::string l = text::lower(text::trim(line));
  while (!l.empty() && (l.back() == '.' || l.back() == '!')) l.pop_back();
  static const std::pair<const char*, bool> kWords[] = {{"yes", true}, {"true", true}, {"no", false}, {"false", false}};
  for (const auto& [word, verdict] : kWords) {
    const std::string w(word);
    if (l.size() <= w.size() || l.compare(l.size() - w.size(), w.size(), w) != 0) continue;
    std::string head = l.substr(0, l.size() - w.size());
    const char before = head.back();
    if (std::isalnum(static_cast<unsigned char>(before)) || before == '_') continue;
    while (!head.empty() && (head.back() == ' ' || head.back() == ':' || head.back() == '=' || head.back() == '-' ||
                             head.back() == '\t'))
      head.pop_back();
    if (head.empty()) return std::nullopt;
    return std::make_pair(normalize_id(head), verdict);
  }
  return std::nullopt;
}

inline std::string strip_bullet(std::string_view line) {
  auto l = text::trim(line);
  if (l.size() >= 2 && (l[0] == '-' || l[0] == '*') && l[1] == ' ') l.remove_prefix(2);
  return std::string(text::trim(l));
}

inline std::string strip_label(std::string s) {
  static const char* kLabels[] = {"visible attributes", "visible features", "visible", "attributes", "features",
                                  "present", "answer"};
  const std::string lowered = text::lower(s);
  for (const char* label : kLabels) {
    const std::string lab(label);
    if (lowered.rfind(lab, 0) != 0) continue;
    auto rest = std::string_view(s).substr(lab.size());
    rest = text::trim(rest);
    if (!rest.empty() && rest.front() == ':') return std::string(text::trim(rest.substr(1)));
  }
  return s;
}

}  // namespace checklist_detail

/// Parses a checklist reply into the affirmed subset of `candidates`, in
/// candidate order. Accepted forms: one `<id>: yes|no` line per candidate,
/// or a single comma-separated list of affirmed ids (optionally labelled,
/// e.g. "visible: a, c"); the lone word "none" means the empty set. Any id
/// outside `candidates` is a parse failure.
inline std::vector<std::string> parse_checklist(std::string_view reply, const std::vector<std::string>& candidates) {
  using namespace checklist_detail;
  std::vector<std::string> content;
  for (const auto& raw : text::lines(reply)) {
    const auto l = strip_bullet(raw);
    if (l.empty() || l.rfind("```", 0) == 0) continue;
    content.push_back(l);
  }
  if (content.empty()) throw ChecklistParseError("empty reply");

  const std::set<std::string> allowed(candidates.begin(), candidates.end());
  std::set<std::string> affirmed;

  if (split_verdict(content.front())) {
    std::map<std::string, bool> verdicts;
    for (const auto& l : content) {
      auto v = split_verdict(l);
      if (!v) throw ChecklistParseError("line is not '<id>: yes|no': " + l.substr(0, 80));
      if (!allowed.count(v->first)) throw ChecklistParseError("unknown id '" + v->first.substr(0, 80) + "'");
      auto [it, inserted] = verdicts.emplace(v->first, v->second);
      if (!inserted && it->second != v->second) throw ChecklistParseError("conflicting answers for '" + v->first + "'");
      if (v->second) affirmed.insert(v->first);
    }
  } else {
    const std::string joined = strip_label(text::join(content, ","));
    std::vector<std::string> items;
    for (const auto& part : text::split(joined, ',')) {
      std::string item = normalize_id(part);
      while (!item.empty() && item.back() == '.') item.pop_back();
      if (!item.empty()) items.push_back(item);
    }
    if (items.size() == 1 && items.front() == "none") return {};
    if (items.empty()) throw ChecklistParseError("no ids in reply");
    for (const auto& item : items) {
      if (!allowed.count(item)) throw ChecklistParseError("unknown id '" + item.substr(0, 80) + "'");
      affirmed.insert(item);
    }
  }

  std::vector<std::string> out;
  for (const auto& c : candidates)
    if (affirmed.count(c)) out.push_back(c);
  return out;
}

// ---------------------------------------------------------------------------
// Prompt construction

namespace decomposition_detail {

inline std::string option_list(const std::vector<TaxonomyEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (!out.empty()) out += "\n";
    out += "- " + e.id + ": " + e.display_name;
    if (!e.description.empty()) out += ". " + e.description;
  }
  return out;
}

inline std::string id_list(const std::vector<TaxonomyEntry>& entries) {
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.id);
  return text::join(ids, ", ");
}

/// Display names and declared aliases, mapped onto their ids.
inline std::map<std::string, std::string> aliases_of(const std::vector<TaxonomyEntry>& entries) {
  std::map<std::string, std::string> out;
  for (const auto& e : entries) {
    out[e.display_name] = e.id;
    for (const auto& a : e.aliases) out[a] = e.id;
  }
  return out;
}

inline const std::string& display_name_of(const std::vector<TaxonomyEntry>& entries, std::string_view id) {
  const auto* e = find_taxonomy_entry(entries, id);
  if (!e) throw SchemaError("taxonomy has no entry for '" + std::string(id) + "'");
  return e->display_name;
}

template <typename Spec>
std::string checklist(const std::vector<Spec>& specs) {
  std::string out;
  for (const auto& s : specs) {
    if (!out.empty()) out += "\n";
    out += "- " + s.id + ": " + s.display_name;
    if (!s.prompt_hint.empty()) out += ". " + s.prompt_hint;
  }
  return out;
}

template <typename Spec>
std::vector<std::string> ids_of(const std::vector<Spec>& specs) {
  std::vector<std::string> out;
  for (const auto& s : specs) out.push_back(s.id);
  return out;
}

}  // namespace decomposition_detail

inline std::string build_type_prompt(const KnowledgeBase& kb, const TemplateSet& t) {
  using namespace decomposition_detail;
  return t.render("type", {{"options", option_list(kb.taxonomy.subject_types)},
                           {"option_ids", id_list(kb.taxonomy.subject_types)}});
}

inline std::string build_style_prompt(const KnowledgeBase& kb, const TemplateSet& t) {
  using namespace decomposition_detail;
  return t.render("style",
                  {{"options", option_list(kb.taxonomy.styles)}, {"option_ids", id_list(kb.taxonomy.styles)}});
}

inline std::string build_attributes_prompt(const KnowledgeBase& kb, const TemplateSet& t, SubjectType type,
                                           Style style) {
  using namespace decomposition_detail;
  const auto candidates = attributes_for(kb, type, style);
  return t.render("attributes",
                  {{"subject_type", display_name_of(kb.taxonomy.subject_types, to_token(type))},
                   {"style", display_name_of(kb.taxonomy.styles, to_token(style))},
                   {"checklist", checklist(candidates)},
                   {"candidate_ids", text::join(ids_of(candidates), ", ")}});
}

inline std::string build_features_prompt(const KnowledgeBase& kb, const TemplateSet& t,
                                         const std::vector<std::string>& attr_ids) {
  using namespace decomposition_detail;
  const auto candidates = features_for(kb, attr_ids);
  std::vector<std::string> names;
  for (const auto& id : attr_ids) names.push_back(kb.find_attribute(id)->display_name);
  return t.render("features", {{"attributes", text::join(names, ", ")},
                               {"checklist", checklist(candidates)},
                               {"candidate_ids", text::join(ids_of(candidates), ", ")}});
}

// ---------------------------------------------------------------------------
// Stages

namespace decomposition_detail {

inline std::string ask(const PipelineContext& ctx, const char* stage_tag, const std::string& prompt,
                       const ImagePayload& image, std::vector<std::string> constraints,
                       std::vector<StageRecord>* transcript) {
  VlmRequest req;
  req.stage = stage_tag;
  req.prompt = prompt;
  req.images = {image};
  req.constraints = std::move(constraints);
  req.max_tokens = ctx.max_tokens;
  req.temperature = ctx.temperature;
  auto resp = ctx.backend.complete(req);
  if (transcript) transcript->push_back({stage_tag, prompt, resp.text});
  return resp.text;
}

template <typename E>
E choose(const PipelineContext& ctx, const char* stage_tag, const std::string& prompt,
         const std::vector<TaxonomyEntry>& entries, const ImagePayload& image, std::vector<StageRecord>* transcript) {
  const auto ids = all_tokens<E>();
  const auto reply = ask(ctx, stage_tag, prompt, image, ids, transcript);
  try {
    return from_token<E>(parse_choice(reply, ids, aliases_of(entries)));
  } catch (const Error& e) {
    throw DecompositionFailed(stage_tag, e.code(), e.what(), transcript ? *transcript : std::vector<StageRecord>{});
  }
}

inline std::vector<std::string> pick(const PipelineContext& ctx, const char* stage_tag, const std::string& prompt,
                                     const std::vector<std::string>& candidates, const ImagePayload& image,
                                     std::vector<StageRecord>* transcript) {
  const auto reply = ask(ctx, stage_tag, prompt, image, candidates, transcript);
  const auto keep = [&] { return transcript ? *transcript : std::vector<StageRecord>{}; };
  std::vector<std::string> chosen;
  try {
    chosen = parse_checklist(reply, candidates);
  } catch (const Error& e) {
    throw DecompositionFailed(stage_tag, e.code(), e.what(), keep());
  }
  if (chosen.empty()) throw DecompositionFailed(stage_tag, "empty_selection", "no candidate affirmed", keep());
  return chosen;
}

}  // namespace decomposition_detail

inline SubjectType identify_type(const ImagePayload& image, const PipelineContext& ctx,
                                 std::vector<StageRecord>* transcript = nullptr) {
  return decomposition_detail::choose<SubjectType>(ctx, stage::type, build_type_prompt(ctx.kb, ctx.templates),
                                                   ctx.kb.taxonomy.subject_types, image, transcript);
}

inline Style identify_style(const ImagePayload& image, const PipelineContext& ctx,
                            std::vector<StageRecord>* transcript = nullptr) {
  return decomposition_detail::choose<Style>(ctx, stage::style, build_style_prompt(ctx.kb, ctx.templates),
                                             ctx.kb.taxonomy.styles, image, transcript);
}

inline std::vector<std::string> detect_attributes(const ImagePayload& image, const PipelineContext& ctx,
                                                  SubjectType type, Style style,
                                                  std::vector<StageRecord>* transcript = nullptr) {
  const auto candidates = decomposition_detail::ids_of(attributes_for(ctx.kb, type, style));
  return decomposition_detail::pick(ctx, stage::attributes, build_attributes_prompt(ctx.kb, ctx.templates, type, style),
                                    candidates, image, transcript);
}

inline std::vector<std::string> identify_features(const ImagePayload& image, const PipelineContext& ctx,
                                                  const std::vector<std::string>& attr_ids,
                                                  std::vector<StageRecord>* transcript = nullptr) {
  const auto candidates = decomposition_detail::ids_of(features_for(ctx.kb, attr_ids));
  return decomposition_detail::pick(ctx, stage::features, build_features_prompt(ctx.kb, ctx.templates, attr_ids),
                                    candidates, image, transcript);
}

/// Runs type, style, attributes and features in order. The first failing
/// stage aborts with DecompositionFailed carrying the transcript so far.
inline Hierarchy decompose(const ImagePayload& image, const PipelineContext& ctx) {
  Hierarchy h;
  auto* tx = &h.stage_transcripts;
  std::string current = stage::type;
  try {
    h.subject_type = identify_type(image, ctx, tx);
    current = stage::style;
    h.style = identify_style(image, ctx, tx);
    current = stage::attributes;
    h.visible_attribute_ids = detect_attributes(image, ctx, h.subject_type, h.style, tx);
    current = stage::features;
    h.visible_feature_ids = identify_features(image, ctx, h.visible_attribute_ids, tx);
  } catch (const DecompositionFailed&) {
    throw;
  } catch (const Error& e) {
    throw DecompositionFailed(current, e.code(), e.what(), h.stage_transcripts);
  }
  return h;
}

inline json to_json(const Hierarchy& h, bool with_transcripts = true) {
  json j = {{"subject_type", to_token(h.subject_type)},
            {"style", to_token(h.style)},
            {"visible_attribute_ids", h.visible_attribute_ids},
            {"visible_feature_ids", h.visible_feature_ids}};
  if (with_transcripts) {
    json tx = json::array();
    for (const auto& r : h.stage_transcripts) tx.push_back({{"stage", r.stage}, {"prompt", r.prompt}, {"reply", r.reply}});
    j["stage_transcripts"] = tx;
  }
  return j;
}

}  // namespace charis
