// SPDX-License-Identifier: Apache-2.0
#pragma once

// Append-only label log. Each line is a `label` or `undo` event; the current
// state is a fold over the log, so nothing is ever rewritten.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "charis/error.hpp"
#include "charis/types.hpp"
#include "charis/util.hpp"

namespace charis::harness {

class DuplicateLabel : public Error {
 public:
  explicit DuplicateLabel(const std::string& message) : Error("duplicate_label", message) {}
};

class NoSuchLabel : public Error {
 public:
  explicit NoSuchLabel(const std::string& message) : Error("no_such_label", message) {}
};

struct LabelRecord {
  std::string entry_id;
  std::string annotator_id;
  ConsistencyCategory category{};
  std::string submitted_at;
  bool revoked = false;
};

inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class LabelStore {
 public:
  using Clock = std::function<std::string()>;

  explicit LabelStore(std::filesystem::path path, Clock clock = utc_now)
      : path_(std::move(path)), clock_(std::move(clock)) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    if (std::filesystem::exists(path_)) {
      fs_util::for_each_jsonl(path_, [&](std::size_t, const json& ev) { apply(ev); });
    }
    out_.open(path_, std::ios::app | std::ios::binary);
    if (!out_) throw IoError("label store not writable: " + path_.string());
  }

  LabelRecord add(const std::string& entry_id, const std::string& annotator_id, ConsistencyCategory category) {
    std::lock_guard lock(mu_);
    if (find_active(entry_id, annotator_id))
      throw DuplicateLabel(annotator_id + " already labelled " + entry_id);
    json ev = {{"event", "label"},
               {"entry_id", entry_id},
               {"annotator_id", annotator_id},
               {"category", to_token(category)},
               {"submitted_at", clock_()}};
    append(ev);
    apply(ev);
    return records_.back();
  }

  LabelRecord undo(const std::string& entry_id, const std::string& annotator_id) {
    std::lock_guard lock(mu_);
    if (!find_active(entry_id, annotator_id))
      throw NoSuchLabel(annotator_id + " has no active label for " + entry_id);
    json ev = {{"event", "undo"}, {"entry_id", entry_id}, {"annotator_id", annotator_id}, {"submitted_at", clock_()}};
    append(ev);
    return *apply(ev);
  }

  /// Every record, revoked ones included, in submission order.
  std::vector<LabelRecord> all() const {
    std::lock_guard lock(mu_);
    return records_;
  }

  std::vector<LabelRecord> active() const {
    std::lock_guard lock(mu_);
    std::vector<LabelRecord> out;
    for (const auto& r : records_)
      if (!r.revoked) out.push_back(r);
    return out;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  LabelRecord* find_active(const std::string& entry_id, const std::string& annotator_id) {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (!it->revoked && it->entry_id == entry_id && it->annotator_id == annotator_id) return &*it;
    return nullptr;
  }

  LabelRecord* apply(const json& ev) {
    const auto kind = ev.at("event").get<std::string>();
    const auto entry = ev.at("entry_id").get<std::string>();
    const auto annotator = ev.at("annotator_id").get<std::string>();
    if (kind == "label") {
      if (find_active(entry, annotator)) throw SchemaError("duplicate active label for " + annotator + "/" + entry);
      records_.push_back({entry, annotator, from_token<ConsistencyCategory>(ev.at("category").get<std::string>()),
                          ev.at("submitted_at").get<std::string>(), false});
      return &records_.back();
    }
    if (kind == "undo") {
      auto* r = find_active(entry, annotator);
      if (!r) throw SchemaError("undo without an active label for " + annotator + "/" + entry);
      r->revoked = true;
      return r;
    }
    throw SchemaError("unknown label event '" + kind + "'");
  }

  void append(const json& ev) {
    out_ << ev.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("append to label store failed: " + path_.string());
  }

  std::filesystem::path path_;
  Clock clock_;
  mutable std::mutex mu_;
  std::vector<LabelRecord> records_;
  std::ofstream out_;
};

}  // namespace charis::harness
