// SPDX-License-Identifier: Apache-2.0
#pragma once

// End-to-end evaluation of a manifest: decomposition of both images,
// per-feature transformation analysis, aggregation and report emission.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "charis/aggregation.hpp"
#include "charis/benchmark.hpp"
#include "charis/decomposition.hpp"
#include "charis/ekb.hpp"
#include "charis/templates.hpp"
#include "charis/transform_analysis.hpp"
#include "charis/vlm_client.hpp"

namespace charis::harness {

struct EvalOptions {
  std::size_t jobs = 1;
  AggregationMode mode = AggregationMode::rules;
  std::string default_model = "unspecified";  // when an entry carries no model tag
  bool diagnostics = false;                   // emit timing and cache counters
  int max_tokens = 512;
  double temperature = 0.0;
  ScoreMap scores;
};

struct EvalError {
  std::string code;
  std::string stage;
  std::string message;
};

struct StageTiming {
  double decompose_ref_ms = 0, decompose_gen_ms = 0, analysis_ms = 0, categorization_ms = 0;
};

struct EvaluationRecord {
  BenchmarkEntry entry;
  std::string model;
  std::string reference_digest, generated_digest;
  std::optional<Hierarchy> hierarchy_ref, hierarchy_gen;
  std::optional<EvalError> hierarchy_gen_error;  // soft: recorded, not fatal
  std::vector<FeatureAnalysis> features;
  std::optional<CategorizationResult> result;
  std::optional<EvalError> error;  // hard failure; no category
  StageTiming timing;
  CacheStats cache;
  std::string template_digest;
  std::string ekb_version;

  bool ok() const { return result.has_value(); }
  bool partial() const {
    return std::any_of(features.begin(), features.end(), [](const FeatureAnalysis& f) { return !f.ok(); });
  }
};

namespace eval_detail {

/// Per-pair view of the backend that applies the shared cache and counts
/// this pair's hits and misses.
class PairBackend : public VlmBackend {
 public:
  PairBackend(VlmBackend& inner, const ResponseCache* cache) : inner_(inner), cache_(cache) {}

  VlmResponse complete(const VlmRequest& req) override {
    if (!cache_) return inner_.complete(req);
    CacheStats local;
    auto resp = cached_complete(*cache_, inner_, req, &local);
    std::lock_guard lock(mu_);
    stats_.hits += local.hits;
    stats_.misses += local.misses;
    stats_.corrupt += local.corrupt;
    return resp;
  }
  std::string kind() const override { return inner_.kind(); }
  std::string model_name() const override { return inner_.model_name(); }

  CacheStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  VlmBackend& inner_;
  const ResponseCache* cache_;
  mutable std::mutex mu_;
  CacheStats stats_;
};

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace eval_detail

/// Evaluates one pair. Never throws for per-pair failures; they land in
/// `record.error` with a stable code.
inline EvaluationRecord evaluate_entry(const BenchmarkEntry& entry, const std::filesystem::path& base_dir,
                                       const KnowledgeBase& kb, const TemplateSet& templates, VlmBackend& backend,
                                       const ResponseCache* cache, const EvalOptions& opts,
                                       std::size_t feature_workers = 1) {
  using clock = std::chrono::steady_clock;
  EvaluationRecord rec;
  rec.entry = entry;
  rec.model = entry.model.value_or(opts.default_model);
  rec.template_digest = templates.digest();
  rec.ekb_version = kb.version;

  eval_detail::PairBackend pair_backend(backend, cache);
  PipelineContext ctx{kb, pair_backend, templates, opts.max_tokens, opts.temperature};
  std::string stage = "load";
  try {
    if (!entry.generated_image) {
      rec.error = EvalError{"missing_generated_image", "load", "entry has no generated_image"};
      return rec;
    }
    const auto ref = load_image(resolve_path(base_dir, entry.reference_image));
    const auto gen = load_image(resolve_path(base_dir, *entry.generated_image));
    rec.reference_digest = ref.digest;
    rec.generated_digest = gen.digest;

    stage = "decompose_ref";
    auto t0 = clock::now();
    rec.hierarchy_ref = decompose(ref, ctx);
    rec.timing.decompose_ref_ms = eval_detail::ms_since(t0);

    t0 = clock::now();
    try {
      rec.hierarchy_gen = decompose(gen, ctx);
    } catch (const DecompositionFailed& e) {
      rec.hierarchy_gen_error = EvalError{e.cause(), e.stage(), e.what()};
    }
    rec.timing.decompose_gen_ms = eval_detail::ms_since(t0);

    stage = "analysis";
    t0 = clock::now();
    rec.features = analyze_all(*rec.hierarchy_ref, ref, gen, ctx, feature_workers).features;
    rec.timing.analysis_ms = eval_detail::ms_since(t0);

    stage = "categorization";
    t0 = clock::now();
    ReportMap reports;
    for (const auto& f : rec.features)
      if (f.report) reports.emplace(f.feature_id, *f.report);
    rec.result = opts.mode == AggregationMode::rules ? categorize_rules(reports, kb)
                                                     : categorize_vlm(reports, ref, gen, ctx);
    rec.timing.categorization_ms = eval_detail::ms_since(t0);
  } catch (const DecompositionFailed& e) {
    rec.error = EvalError{e.code(), e.stage(), std::string(e.what()) + " [" + e.cause() + "]"};
    rec.hierarchy_ref.reset();
  } catch (const Error& e) {
    rec.error = EvalError{e.code(), stage, e.what()};
  } catch (const std::exception& e) {
    rec.error = EvalError{"internal_error", stage, e.what()};
  }
  rec.cache = pair_backend.stats();
  return rec;
}

/// Evaluates every entry with at most `opts.jobs` pairs in flight. Records
/// come back sorted by entry_id whatever the schedule.
inline std::vector<EvaluationRecord> run_eval(const std::vector<BenchmarkEntry>& entries,
                                              const std::filesystem::path& base_dir, const KnowledgeBase& kb,
                                              const TemplateSet& templates, VlmBackend& backend,
                                              const ResponseCache* cache, const EvalOptions& opts) {
  std::vector<EvaluationRecord> records(entries.size());
  const std::size_t jobs = std::max<std::size_t>(1, opts.jobs);
  const std::size_t pair_workers = std::min(jobs, std::max<std::size_t>(1, entries.size()));
  const std::size_t feature_workers = std::max<std::size_t>(1, jobs / pair_workers);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++)
      records[i] = evaluate_entry(entries[i], base_dir, kb, templates, backend, cache, opts, feature_workers);
  };
  if (pair_workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < pair_workers; ++w) pool.emplace_back(worker);
  }
  std::sort(records.begin(), records.end(),
            [](const EvaluationRecord& a, const EvaluationRecord& b) { return a.entry.entry_id < b.entry.entry_id; });
  return records;
}

// ---------------------------------------------------------------------------
// Report

inline json to_json(const EvalError& e) { return {{"code", e.code}, {"stage", e.stage}, {"message", e.message}}; }

inline json to_json(const EvaluationRecord& r, const EvalOptions& opts) {
  const auto& e = r.entry;
  json axes = json::array();
  for (auto a : e.transformation_axes) axes.push_back(to_token(a));
  json j = {{"entry_id", e.entry_id},
            {"model", r.model},
            {"subject_id", e.subject_id},
            {"declared_type", to_token(e.declared_type)},
            {"declared_style", to_token(e.declared_style)},
            {"prompt", e.prompt},
            {"transformation_axes", axes},
            {"reference_image", e.reference_image},
            {"generated_image", e.generated_image ? json(*e.generated_image) : json(nullptr)},
            {"reference_digest", r.reference_digest},
            {"generated_digest", r.generated_digest},
            {"ekb_version", r.ekb_version},
            {"template_digest", r.template_digest}};
  j["hierarchy_ref"] = r.hierarchy_ref ? to_json(*r.hierarchy_ref) : json(nullptr);
  j["hierarchy_gen"] = r.hierarchy_gen ? to_json(*r.hierarchy_gen) : json(nullptr);
  if (r.hierarchy_gen_error) j["hierarchy_gen_error"] = to_json(*r.hierarchy_gen_error);
  if (r.hierarchy_ref)
    j["declared_matches_identified"] =
        r.hierarchy_ref->subject_type == e.declared_type && r.hierarchy_ref->style == e.declared_style;
  json features = json::array();
  for (const auto& f : r.features) features.push_back(to_json(f));
  j["features"] = features;
  j["partial"] = r.partial();
  if (r.result) {
    j["result"] = to_json(*r.result);
    j["category"] = to_token(r.result->category);
    j["score"] = normalize(r.result->category, opts.scores);
    j["score_exact"] = normalized_rational(r.result->category, opts.scores).str();
  } else {
    j["result"] = nullptr;
    j["category"] = nullptr;
    j["score"] = nullptr;
  }
  j["error"] = r.error ? to_json(*r.error) : json(nullptr);
  if (opts.diagnostics) {
    j["timing"] = {{"decompose_ref_ms", r.timing.decompose_ref_ms},
                   {"decompose_gen_ms", r.timing.decompose_gen_ms},
                   {"analysis_ms", r.timing.analysis_ms},
                   {"categorization_ms", r.timing.categorization_ms}};
    j["cache"] = {{"hits", r.cache.hits}, {"misses", r.cache.misses}, {"corrupt", r.cache.corrupt}};
  }
  return j;
}

inline std::string render_report(const std::vector<EvaluationRecord>& records, const EvalOptions& opts) {
  std::string out;
  for (const auto& r : records) out += to_json(r, opts).dump() + "\n";
  return out;
}

inline json summarize(const std::vector<EvaluationRecord>& records, const EvalOptions& opts,
                      const VlmBackend& backend) {
  json categories = json::object();
  for (const auto& c : all_tokens<ConsistencyCategory>()) categories[c] = 0;
  std::map<std::string, int> errors;
  std::map<std::string, std::vector<Rational>> by_model;
  std::size_t ok = 0, partial = 0;
  for (const auto& r : records) {
    if (r.partial()) ++partial;
    if (r.ok()) {
      ++ok;
      categories[std::string(to_token(r.result->category))] = categories[std::string(to_token(r.result->category))].get<int>() + 1;
      by_model[r.model].push_back(normalized_rational(r.result->category, opts.scores));
    } else if (r.error) {
      ++errors[r.error->code];
    }
  }
  json models = json::object();
  for (const auto& [model, scores] : by_model) {
    Rational sum;
    for (const auto& s : scores) sum = sum + s;
    const auto mean = sum / static_cast<std::int64_t>(scores.size());
    models[model] = {{"n", scores.size()}, {"mean_score", mean.to_double()}, {"mean_score_exact", mean.str()}};
  }
  return {{"records", records.size()},
          {"succeeded", ok},
          {"failed", records.size() - ok},
          {"partial", partial},
          {"categories", categories},
          {"errors", errors},
          {"models", models},
          {"mode", to_token(opts.mode)},
          {"backend", {{"kind", backend.kind()}, {"model_name", backend.model_name()}}},
          {"ekb_version", records.empty() ? json(nullptr) : json(records.front().ekb_version)},
          {"template_digest", records.empty() ? json(nullptr) : json(records.front().template_digest)}};
}

inline std::filesystem::path summary_path(const std::filesystem::path& report) {
  auto p = report;
  return p.replace_extension(".summary.json");
}

}  // namespace charis::harness
