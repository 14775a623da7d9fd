// SPDX-License-Identifier: Apache-2.0
// charis: command-line front end for evaluation, statistics, EKB validation,
// single-image decomposition, prompt synthesis and the annotation service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "charis/aggregation.hpp"
#include "charis/benchmark.hpp"
#include "charis/decomposition.hpp"
#include "charis/ekb.hpp"
#include "charis/harness/eval.hpp"
#include "charis/harness/labels.hpp"
#include "charis/harness/service.hpp"
#include "charis/harness/stats.hpp"
#include "charis/statistics.hpp"
#include "charis/templates.hpp"
#include "charis/vlm_client.hpp"

#ifndef CHARIS_DATA_DIR
#define CHARIS_DATA_DIR "."
#endif

namespace fs = std::filesystem;
using namespace charis;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

const fs::path kDataDir = CHARIS_DATA_DIR;

struct Common {
  std::string ekb = (kDataDir / "data/ekb/default.json").string();
  std::string templates = (kDataDir / "templates").string();
  std::string backend;
  std::string cache_dir;
};

void add_ekb(CLI::App* cmd, Common& c) {
  cmd->add_option("--ekb", c.ekb, "Knowledge base JSON")->capture_default_str();
}

void add_backend(CLI::App* cmd, Common& c) {
  add_ekb(cmd, c);
  cmd->add_option("--templates", c.templates, "Prompt template directory")->capture_default_str();
  cmd->add_option("--backend", c.backend, "Backend config JSON")->required();
  cmd->add_option("--cache-dir", c.cache_dir, "Response cache directory");
}

KnowledgeBase load_kb(const std::string& path) {
  try {
    return load_ekb(path);
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("EKB invalid: ") + e.what());
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("EKB: ") + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

/// Backend stack shared by the commands that talk to a VLM.
struct BackendStack {
  std::shared_ptr<VlmBackend> base;
  std::shared_ptr<RecordingBackend> recorder;
  std::optional<ResponseCache> cache;

  VlmBackend& top() { return recorder ? static_cast<VlmBackend&>(*recorder) : *base; }
};

BackendStack make_stack(const Common& c, bool record) {
  BackendStack s;
  try {
    s.base = make_backend(load_backend_config(c.backend));
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  } catch (const SchemaError& e) {
    throw ConfigError(std::string("mock transcript: ") + e.what());
  } catch (const AuthError& e) {
    throw ConfigError(e.what());
  }
  if (record) {
    s.recorder = std::make_shared<RecordingBackend>(s.base);
  }
  if (!c.cache_dir.empty()) {
    try {
      s.cache.emplace(c.cache_dir);
    } catch (const IoError& e) {
      throw ConfigError(e.what());
    }
  }
  return s;
}

TemplateSet load_templates(const std::string& dir) {
  try {
    return TemplateSet::load(dir);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

std::vector<BenchmarkEntry> load_manifest_or_config_error(const std::string& path) {
  try {
    return load_manifest(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

void write_or_print(const std::string& out, const std::string& content) {
  if (out.empty())
    std::cout << content;
  else
    fs_util::write_file_atomic(out, content);
}

// ---------------------------------------------------------------------------

int cmd_validate(const Common& c) {
  KnowledgeBase kb;
  try {
    kb = parse_ekb(json::parse(fs_util::read_file(c.ekb)));
  } catch (const json::parse_error& e) {
    std::cout << "invalid: " << e.what() << "\n";
    return kExitFailure;
  } catch (const SchemaError& e) {
    std::cout << "invalid: " << e.what() << "\n";
    return kExitFailure;
  }
  const auto report = validate_ekb(kb);
  if (!report.ok()) {
    std::cout << "invalid, " << report.findings.size() << " finding(s)\n";
    for (const auto& f : report.findings)
      std::cout << "  " << f.code << (f.subject.empty() ? "" : " [" + f.subject + "]") << ": " << f.message << "\n";
    return kExitFailure;
  }
  std::size_t populated = 0, unsupported = 0;
  for (const auto& ts : all_type_styles()) {
    if (kb.is_declared_unsupported(ts))
      ++unsupported;
    else
      ++populated;
  }
  std::cout << "valid, " << populated + unsupported << " combinations (" << populated << " populated + "
            << unsupported << " declared unsupported)\n";
  return kExitOk;
}

int cmd_decompose(const Common& c, const std::string& image_path, const std::string& out) {
  const auto kb = load_kb(c.ekb);
  const auto templates = load_templates(c.templates);
  auto stack = make_stack(c, false);
  ImagePayload image;
  try {
    image = load_image(image_path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  std::unique_ptr<VlmBackend> cached;
  VlmBackend* backend = &stack.top();
  if (stack.cache) {
    cached = std::make_unique<CachedBackend>(stack.base, stack.cache->dir());
    backend = cached.get();
  }
  PipelineContext ctx{kb, *backend, templates};
  try {
    const auto h = decompose(image, ctx);
    write_or_print(out, to_json(h).dump(2) + "\n");
    return kExitOk;
  } catch (const DecompositionFailed& e) {
    spdlog::error("{} [{}]", e.what(), e.cause());
    return kExitFailure;
  }
}

struct EvalArgs {
  std::string manifest;
  std::string out;
  std::size_t jobs = 1;
  std::string mode = "rules";
  std::string model = "unspecified";
  std::string record_transcript;
  bool diagnostics = false;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  harness::EvalOptions opts;
  if (a.mode == "rules")
    opts.mode = AggregationMode::rules;
  else if (a.mode == "vlm")
    opts.mode = AggregationMode::vlm;
  else
    throw ConfigError("--mode must be rules or vlm");
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");
  opts.jobs = a.jobs;
  opts.default_model = a.model;
  opts.diagnostics = a.diagnostics;

  const auto kb = load_kb(c.ekb);
  const auto templates = load_templates(c.templates);
  const auto entries = load_manifest_or_config_error(a.manifest);
  if (entries.empty()) throw ConfigError("manifest has no entries");
  auto stack = make_stack(c, !a.record_transcript.empty());
  const auto cfg = load_backend_config(c.backend);
  opts.max_tokens = cfg.max_tokens;
  opts.temperature = cfg.temperature;

  const auto base_dir = fs::path(a.manifest).parent_path();
  const auto records = harness::run_eval(entries, base_dir, kb, templates, stack.top(),
                                         stack.cache ? &*stack.cache : nullptr, opts);
  const auto report = harness::render_report(records, opts);
  const auto summary = harness::summarize(records, opts, stack.top());
  if (a.out.empty()) {
    std::cout << report;
  } else {
    fs_util::write_file_atomic(a.out, report);
    fs_util::write_file_atomic(harness::summary_path(a.out), summary.dump(2) + "\n");
  }
  if (stack.recorder) stack.recorder->write(a.record_transcript);

  const auto failed = summary.at("failed").get<std::size_t>();
  spdlog::info("{} records, {} failed, {} partial", records.size(), failed, summary.at("partial").get<std::size_t>());
  return failed ? kExitFailure : kExitOk;
}

int cmd_stats(const std::vector<std::string>& ratings, const std::string& predictions, const std::string& baselines,
              const std::string& out) {
  StatsInput input;
  for (const auto& r : ratings) load_ratings(r, input);
  load_predictions(predictions, input);
  if (!baselines.empty()) load_baselines(baselines, input);
  const auto report = harness::build_stats_report(input);
  if (!out.empty()) {
    fs_util::write_file_atomic(out, report.doc.dump(2) + "\n");
    auto txt = fs::path(out);
    fs_util::write_file_atomic(txt.replace_extension(".txt"), report.text);
  }
  std::cout << report.text;
  return kExitOk;
}

int cmd_gen_prompts(const Common& c, const std::string& image_path, int n, const std::string& out) {
  if (n < 1) throw ConfigError("--n must be >= 1");
  const auto kb = load_kb(c.ekb);
  const auto templates = load_templates(c.templates);
  auto stack = make_stack(c, false);
  ImagePayload image;
  try {
    image = load_image(image_path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  std::unique_ptr<VlmBackend> cached;
  VlmBackend* backend = &stack.top();
  if (stack.cache) {
    cached = std::make_unique<CachedBackend>(stack.base, stack.cache->dir());
    backend = cached.get();
  }
  PipelineContext ctx{kb, *backend, templates};
  std::string lines;
  for (const auto& d : synth_prompts(image, n, ctx)) lines += to_json(d).dump() + "\n";
  write_or_print(out, lines);
  return kExitOk;
}

int cmd_manifest(const std::string& manifest, bool gate) {
  const auto entries = load_manifest_or_config_error(manifest);
  const auto stats = manifest_stats(entries);
  json doc = to_json(stats);
  if (gate) {
    const auto base_dir = fs::path(manifest).parent_path();
    json findings = json::object();
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (!seen.insert(e.reference_image).second) continue;
      try {
        const auto r = quality_gate(load_image(resolve_path(base_dir, e.reference_image)));
        if (!r.findings.empty()) findings[e.reference_image] = r.findings;
      } catch (const Error& err) {
        findings[e.reference_image] = json::array({err.code()});
      }
    }
    doc["quality_gate"] = findings;
  }
  std::cout << doc.dump(2) << "\n";
  return kExitOk;
}

struct ServeArgs {
  std::string manifest;
  std::string label_store;
  std::string static_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string model = "unspecified";
};

httplib::Server* g_server = nullptr;

int cmd_serve(const Common& c, const ServeArgs& a) {
  const auto kb = load_kb(c.ekb);
  const auto entries = load_manifest_or_config_error(a.manifest);
  std::unique_ptr<harness::LabelStore> store;
  try {
    store = std::make_unique<harness::LabelStore>(a.label_store);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  } catch (const fs::filesystem_error& e) {
    throw ConfigError(e.what());
  }
  harness::AnnotationService svc(entries, fs::path(a.manifest).parent_path(), kb, *store, a.model);
  httplib::Server server;
  harness::mount(server, svc, a.static_dir);
  if (!server.bind_to_port(a.host, a.port)) throw ConfigError("cannot bind " + a.host + ":" + std::to_string(a.port));
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  spdlog::info("serving {} pairs on http://{}:{}", entries.size(), a.host, a.port);
  server.listen_after_bind();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_default_logger(spdlog::stderr_color_mt("charis"));
  spdlog::set_pattern("%^%l%$: %v");

  CLI::App app{"charis: identity-preservation evaluation harness"};
  app.require_subcommand(1);
  Common common;

  auto* validate = app.add_subcommand("validate", "Validate a knowledge base");
  add_ekb(validate, common);

  std::string image, out;
  auto* decompose_cmd = app.add_subcommand("decompose", "Decompose one image into its feature hierarchy");
  add_backend(decompose_cmd, common);
  decompose_cmd->add_option("--image", image, "Image file")->required();
  decompose_cmd->add_option("--out", out, "Output file (default stdout)");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "Evaluate every pair of a manifest");
  add_backend(eval, common);
  eval->add_option("--manifest", eval_args.manifest, "Manifest JSONL")->required();
  eval->add_option("--out", eval_args.out, "Report JSONL (summary goes next to it)");
  eval->add_option("--jobs", eval_args.jobs, "Concurrent pairs")->capture_default_str();
  eval->add_option("--mode", eval_args.mode, "Aggregation: rules or vlm")->capture_default_str();
  eval->add_option("--model", eval_args.model, "Model tag for entries without one")->capture_default_str();
  eval->add_option("--record-transcript", eval_args.record_transcript, "Write backend exchanges as a mock transcript");
  eval->add_flag("--diagnostics", eval_args.diagnostics, "Include timing and cache counters in records");

  std::vector<std::string> ratings;
  std::string predictions, baselines, stats_out;
  auto* stats = app.add_subcommand("stats", "Correlation and mean-score tables");
  stats->add_option("--ratings", ratings, "Human ratings JSONL (repeatable)")->required();
  stats->add_option("--predictions", predictions, "Evaluation report JSONL")->required();
  stats->add_option("--baselines", baselines, "Precomputed baseline scores JSONL");
  stats->add_option("--out", stats_out, "JSON output (aligned text goes to the .txt sibling)");

  int n = 5;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-prompts", "Draft transformation-rich prompts for a reference image");
  add_backend(gen, common);
  gen->add_option("--image", image, "Reference image")->required();
  gen->add_option("--n", n, "Number of drafts")->capture_default_str();
  gen->add_option("--out", gen_out, "Output JSONL (default stdout)");

  std::string manifest_path;
  bool gate = false;
  auto* manifest = app.add_subcommand("manifest", "Manifest diversity statistics and reference quality gate");
  manifest->add_option("--manifest", manifest_path, "Manifest JSONL")->required();
  manifest->add_flag("--quality-gate", gate, "Decode reference images and report advisory findings");

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "Run the annotation service");
  add_ekb(serve, common);
  serve->add_option("--manifest", serve_args.manifest, "Manifest JSONL")->required();
  serve->add_option("--label-store", serve_args.label_store, "Append-only label log")->required();
  serve->add_option("--static-dir", serve_args.static_dir, "Static UI assets");
  serve->add_option("--host", serve_args.host)->capture_default_str();
  serve->add_option("--port", serve_args.port)->capture_default_str();
  serve->add_option("--model", serve_args.model, "Model tag for entries without one")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*validate) return cmd_validate(common);
    if (*decompose_cmd) return cmd_decompose(common, image, out);
    if (*eval) return cmd_eval(common, eval_args);
    if (*stats) return cmd_stats(ratings, predictions, baselines, stats_out);
    if (*gen) return cmd_gen_prompts(common, image, n, gen_out);
    if (*manifest) return cmd_manifest(manifest_path, gate);
    if (*serve) return cmd_serve(common, serve_args);
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const Error& e) {
    spdlog::error("{}: {}", e.code(), e.what());
    return kExitFailure;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitOk;
}
