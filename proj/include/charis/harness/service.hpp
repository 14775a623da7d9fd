// SPDX-License-Identifier: Apache-2.0
#pragma once

// Annotation service: serves image pairs to annotators, records labels in
// the append-only store and exposes export and live agreement endpoints.
// The request logic lives in AnnotationService so it can be exercised
// without sockets; mount() wires it onto an httplib server.

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>

#include "charis/aggregation.hpp"
#include "charis/benchmark.hpp"
#include "charis/digest.hpp"
#include "charis/ekb.hpp"
#include "charis/harness/labels.hpp"
#include "charis/statistics.hpp"

namespace charis::harness {

struct ApiResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class AnnotationService {
 public:
  AnnotationService(std::vector<BenchmarkEntry> entries, std::filesystem::path base_dir, const KnowledgeBase& kb,
                    LabelStore& store, std::string default_model = "unspecified")
      : base_dir_(std::move(base_dir)),
        guideline_(render_rules_prose(kb)),
        store_(store),
        default_model_(std::move(default_model)) {
    for (auto& e : entries)
      if (e.generated_image) tasks_.push_back(std::move(e));
  }

  /// Next pair in manifest order the annotator has no active label for.
  ApiResponse next_task(const std::string& annotator, const std::string& model = {}) {
    if (annotator.empty()) return error(400, "missing_parameter", "annotator is required");
    const auto done = labelled_by(annotator);
    std::size_t total = 0, position = 0;
    const BenchmarkEntry* next = nullptr;
    for (const auto& t : tasks_) {
      if (!model.empty() && model_of(t) != model) continue;
      ++total;
      if (!next && !done.count(t.entry_id)) {
        next = &t;
        position = total;
      }
    }
    if (!next) return error(404, "no_tasks", "no unlabelled pairs remain for " + annotator);
    json body = {{"entry_id", next->entry_id},
                 {"model", model_of(*next)},
                 {"prompt", next->prompt},
                 {"guideline", guideline_},
                 {"categories", all_tokens<ConsistencyCategory>()},
                 {"position", position},
                 {"total", total}};
    try {
      body["reference_image"] = image_json(next->reference_image);
      body["generated_image"] = image_json(*next->generated_image);
    } catch (const Error& e) {
      return error(500, e.code(), e.what());
    }
    return {200, body.dump()};
  }

  ApiResponse post_label(const std::string& request_body) {
    json req;
    try {
      req = json::parse(request_body);
    } catch (const json::parse_error&) {
      return error(400, "invalid_json", "request body is not JSON");
    }
    const auto entry = str_field(req, "entry_id");
    const auto annotator = str_field(req, "annotator_id");
    const auto category_token = str_field(req, "category");
    if (entry.empty() || annotator.empty() || category_token.empty())
      return error(400, "missing_field", "entry_id, annotator_id and category are required");
    const auto category = try_from_token<ConsistencyCategory>(category_token);
    if (!category) return error(400, "invalid_category", "unknown category '" + category_token + "'");
    if (!find_task(entry)) return error(404, "unknown_entry", "no pair with entry_id '" + entry + "'");
    try {
      const auto r = store_.add(entry, annotator, *category);
      return {201, label_json(r).dump()};
    } catch (const DuplicateLabel& e) {
      return error(409, e.code(), e.what());
    }
  }

  ApiResponse undo_label(const std::string& request_body) {
    json req;
    try {
      req = json::parse(request_body);
    } catch (const json::parse_error&) {
      return error(400, "invalid_json", "request body is not JSON");
    }
    const auto entry = str_field(req, "entry_id");
    const auto annotator = str_field(req, "annotator_id");
    if (entry.empty() || annotator.empty()) return error(400, "missing_field", "entry_id and annotator_id are required");
    try {
      return {200, label_json(store_.undo(entry, annotator)).dump()};
    } catch (const NoSuchLabel& e) {
      return error(404, e.code(), e.what());
    }
  }

  ApiResponse progress(const std::string& annotator) const {
    if (annotator.empty()) return error(400, "missing_parameter", "annotator is required");
    const auto done = labelled_by(annotator);
    std::size_t labelled = 0;
    for (const auto& t : tasks_)
      if (done.count(t.entry_id)) ++labelled;
    return {200, json{{"annotator", annotator},
                      {"labelled", labelled},
                      {"total", tasks_.size()},
                      {"remaining", tasks_.size() - labelled}}
                     .dump()};
  }

  /// Active labels as ratings JSONL, in submission order.
  ApiResponse export_ratings() const {
    std::string out;
    for (const auto& r : store_.active()) {
      const auto* t = find_task(r.entry_id);
      out += json{{"entry_id", r.entry_id},
                  {"rater_id", r.annotator_id},
                  {"category", to_token(r.category)},
                  {"model", t ? model_of(*t) : default_model_},
                  {"submitted_at", r.submitted_at}}
                 .dump() +
             "\n";
    }
    return {200, out, "application/x-ndjson"};
  }

  ApiResponse agreement_between(const std::string& a, const std::string& b) const {
    if (a.empty() || b.empty()) return error(400, "missing_parameter", "a and b are required");
    RatingSet ra{a, {}}, rb{b, {}};
    for (const auto& r : store_.active()) {
      if (r.annotator_id == a) ra.ratings[r.entry_id] = r.category;
      if (r.annotator_id == b) rb.ratings[r.entry_id] = r.category;
    }
    std::size_t shared = 0;
    for (const auto& [id, _] : ra.ratings) shared += rb.ratings.count(id);
    try {
      return {200, json{{"a", a}, {"b", b}, {"n", shared}, {"r", agreement(ra, rb)}}.dump()};
    } catch (const Error& e) {
      return error(422, e.code(), e.what());
    }
  }

  const std::string& guideline() const { return guideline_; }

 private:
  static ApiResponse error(int status, const std::string& code, const std::string& message) {
    return {status, json{{"error", code}, {"message", message}}.dump()};
  }

  static std::string str_field(const json& req, const char* key) {
    if (!req.is_object() || !req.contains(key) || !req.at(key).is_string()) return {};
    return req.at(key).get<std::string>();
  }

  static json label_json(const LabelRecord& r) {
    return {{"entry_id", r.entry_id},
            {"annotator_id", r.annotator_id},
            {"category", to_token(r.category)},
            {"submitted_at", r.submitted_at},
            {"revoked", r.revoked}};
  }

  std::set<std::string> labelled_by(const std::string& annotator) const {
    std::set<std::string> out;
    for (const auto& r : store_.active())
      if (r.annotator_id == annotator) out.insert(r.entry_id);
    return out;
  }

  const BenchmarkEntry* find_task(const std::string& entry_id) const {
    for (const auto& t : tasks_)
      if (t.entry_id == entry_id) return &t;
    return nullptr;
  }

  std::string model_of(const BenchmarkEntry& e) const { return e.model.value_or(default_model_); }

  json image_json(const std::string& rel) {
    std::lock_guard lock(image_mu_);
    auto it = image_cache_.find(rel);
    if (it == image_cache_.end()) {
      const auto img = load_image(resolve_path(base_dir_, rel));
      json j = {{"mime", img.mime},
                {"digest", img.digest},
                {"data_url", "data:" + img.mime + ";base64," + base64_encode(*img.bytes)}};
      it = image_cache_.emplace(rel, std::move(j)).first;
    }
    return it->second;
  }

  std::vector<BenchmarkEntry> tasks_;
  std::filesystem::path base_dir_;
  std::string guideline_;
  LabelStore& store_;
  std::string default_model_;
  std::mutex image_mu_;
  std::map<std::string, json> image_cache_;
};

/// Registers the /api routes (and the static UI, when given) on `server`.
inline void mount(httplib::Server& server, AnnotationService& svc, const std::filesystem::path& static_dir = {}) {
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type.c_str());
  };
  server.Get("/api/tasks/next", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.next_task(req.get_param_value("annotator"), req.get_param_value("model")));
  });
  server.Post("/api/labels", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.post_label(req.body));
  });
  server.Post("/api/labels/undo", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.undo_label(req.body));
  });
  server.Get("/api/progress", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.progress(req.get_param_value("annotator")));
  });
  server.Get("/api/export", [&svc, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, svc.export_ratings());
  });
  server.Get("/api/agreement", [&svc, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.agreement_between(req.get_param_value("a"), req.get_param_value("b")));
  });
  if (!static_dir.empty() && !server.set_mount_point("/", static_dir.string()))
    throw ConfigError("static directory not found: " + static_dir.string());
}

}  // namespace charis::harness
