// SPDX-License-Identifier: Apache-2.0
#pragma once

// Uniform access to vision-language model backends: an OpenAI-compatible
// HTTP client, a transcript-replaying mock, an on-disk response cache and a
// transcript recorder. Every backend is safe for concurrent use.

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "charis/digest.hpp"
#include "charis/error.hpp"
#include "charis/util.hpp"

namespace charis {

// ---------------------------------------------------------------------------
// Requests and responses

struct ImagePayload {
  std::string digest;  // SHA-256 of the bytes
  std::shared_ptr<const std::string> bytes;
  std::string path;    // informational
  std::string mime = "application/octet-stream";
};

inline std::string sniff_mime(std::string_view bytes) {
  if (bytes.size() >= 8 && bytes.substr(0, 8) == std::string_view("\x89PNG\r\n\x1a\n", 8)) return "image/png";
  if (bytes.size() >= 3 && static_cast<unsigned char>(bytes[0]) == 0xFF &&
      static_cast<unsigned char>(bytes[1]) == 0xD8 && static_cast<unsigned char>(bytes[2]) == 0xFF)
    return "image/jpeg";
  if (bytes.size() >= 12 && bytes.substr(0, 4) == "RIFF" && bytes.substr(8, 4) == "WEBP") return "image/webp";
  return "application/octet-stream";
}

inline ImagePayload image_from_bytes(std::string bytes, std::string path = {}) {
  ImagePayload img;
  img.digest = sha256_hex(bytes);
  img.mime = sniff_mime(bytes);
  img.path = std::move(path);
  img.bytes = std::make_shared<const std::string>(std::move(bytes));
  return img;
}

inline ImagePayload load_image(const std::filesystem::path& path) {
  return image_from_bytes(fs_util::read_file(path), path.string());
}

/// Pipeline stage tags; they key mock transcripts.
namespace stage {
inline constexpr const char* type = "type";
inline constexpr const char* style = "style";
inline constexpr const char* attributes = "attributes";
inline constexpr const char* features = "features";
inline constexpr const char* transformation = "transformation";
inline constexpr const char* categorization = "categorization";
inline constexpr const char* synth = "synth";
}  // namespace stage

struct VlmRequest {
  std::string stage;
  std::string focus;  // e.g. the feature id under analysis; metadata only
  std::string prompt;
  std::vector<ImagePayload> images;
  std::optional<std::vector<std::string>> constraints;
  int max_tokens = 512;
  double temperature = 0.0;
};

struct VlmResponse {
  std::string text;
  std::string backend_id;
  bool cache_hit = false;
  std::int64_t latency_ms = 0;
};

inline std::string prompt_digest(std::string_view prompt) { return sha256_hex(prompt); }

inline void check_request(const VlmRequest& req) {
  if (req.images.empty()) throw ContractViolation("request for stage '" + req.stage + "' carries no image");
  if (req.max_tokens <= 0) throw ContractViolation("max_tokens must be positive");
  if (!(req.temperature >= 0.0)) throw ContractViolation("temperature must be non-negative");
}

// ---------------------------------------------------------------------------
// Configuration

struct RetryPolicy {
  int max_attempts = 3;
  int base_backoff_ms = 500;
};

struct BackendConfig {
  enum class Kind { http_openai_compatible, mock };
  Kind kind = Kind::mock;
  std::string endpoint;    // full URL of the chat-completions route
  std::string model_name = "mock";
  std::string auth_env;    // environment variable holding the API key
  RetryPolicy retry;
  std::string mock_transcript;
  int timeout_ms = 60000;
  int max_tokens = 512;
  double temperature = 0.0;

  std::string kind_token() const { return kind == Kind::mock ? "mock" : "http_openai_compatible"; }
};

inline void validate_backend_config(const BackendConfig& cfg) {
  if (cfg.retry.max_attempts < 1) throw ConfigError("retry.max_attempts must be >= 1");
  if (cfg.retry.base_backoff_ms < 0) throw ConfigError("retry.base_backoff_ms must be >= 0");
  if (cfg.max_tokens <= 0) throw ConfigError("max_tokens must be positive");
  if (!(cfg.temperature >= 0.0)) throw ConfigError("temperature must be non-negative");
  const bool http = cfg.kind == BackendConfig::Kind::http_openai_compatible;
  if (http && cfg.endpoint.empty()) throw ConfigError("endpoint is required for http backends");
  if (!http && !cfg.endpoint.empty()) throw ConfigError("endpoint is only valid for http backends");
  if (!http && cfg.mock_transcript.empty()) throw ConfigError("mock backends need mock_transcript");
}

/// Parses a backend config document. Relative transcript paths resolve
/// against `base_dir`.
inline BackendConfig parse_backend_config(const json& doc, const std::filesystem::path& base_dir = {}) {
  if (!doc.is_object()) throw ConfigError("backend config must be a JSON object");
  BackendConfig cfg;
  try {
    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "mock")
      cfg.kind = BackendConfig::Kind::mock;
    else if (kind == "http_openai_compatible")
      cfg.kind = BackendConfig::Kind::http_openai_compatible;
    else
      throw ConfigError("unknown backend kind '" + kind + "'");
    cfg.endpoint = doc.value("endpoint", "");
    cfg.model_name = doc.value("model_name", cfg.kind == BackendConfig::Kind::mock ? "mock" : "");
    cfg.auth_env = doc.value("auth_env", "");
    if (doc.contains("retry")) {
      cfg.retry.max_attempts = doc["retry"].value("max_attempts", 3);
      cfg.retry.base_backoff_ms = doc["retry"].value("base_backoff_ms", 500);
    }
    cfg.mock_transcript = doc.value("mock_transcript", "");
    if (!cfg.mock_transcript.empty() && std::filesystem::path(cfg.mock_transcript).is_relative() && !base_dir.empty())
      cfg.mock_transcript = (base_dir / cfg.mock_transcript).lexically_normal().string();
    cfg.timeout_ms = doc.value("timeout_ms", 60000);
    cfg.max_tokens = doc.value("max_tokens", 512);
    cfg.temperature = doc.value("temperature", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("backend config: ") + e.what());
  }
  if (cfg.model_name.empty()) throw ConfigError("model_name is required");
  validate_backend_config(cfg);
  return cfg;
}

inline BackendConfig load_backend_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(fs_util::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_backend_config(doc, path.parent_path());
}

// ---------------------------------------------------------------------------
// Backends

class VlmBackend {
 public:
  virtual ~VlmBackend() = default;
  virtual VlmResponse complete(const VlmRequest& req) = 0;
  virtual std::string kind() const = 0;
  virtual std::string model_name() const = 0;
};

struct TranscriptEntry {
  std::string stage;
  std::string prompt_digest;  // "*" matches any prompt
  std::vector<std::string> image_digests;
  std::string reply;
};

inline json to_json(const TranscriptEntry& e) {
  return {{"stage", e.stage}, {"prompt_digest", e.prompt_digest}, {"image_digests", e.image_digests}, {"reply", e.reply}};
}

/// Replays replies keyed by (stage, prompt digest, image digests). An exact
/// key wins over a wildcard-prompt entry for the same stage and images.
class MockBackend : public VlmBackend {
 public:
  MockBackend() = default;
  explicit MockBackend(const std::vector<TranscriptEntry>& entries) {
    for (const auto& e : entries) add(e);
  }

  static std::shared_ptr<MockBackend> from_file(const std::filesystem::path& path) {
    auto mock = std::make_shared<MockBackend>();
    fs_util::for_each_jsonl(path, [&](std::size_t, const json& obj) {
      TranscriptEntry e;
      e.stage = obj.at("stage").get<std::string>();
      e.prompt_digest = obj.at("prompt_digest").get<std::string>();
      e.image_digests = obj.at("image_digests").get<std::vector<std::string>>();
      e.reply = obj.at("reply").get<std::string>();
      mock->add(e);
    });
    return mock;
  }

  void add(const TranscriptEntry& e) { replies_[key(e.stage, e.prompt_digest, e.image_digests)] = e.reply; }

  VlmResponse complete(const VlmRequest& req) override {
    check_request(req);
    calls_.fetch_add(1);
    std::vector<std::string> digests;
    for (const auto& img : req.images) digests.push_back(img.digest);
    auto it = replies_.find(key(req.stage, prompt_digest(req.prompt), digests));
    if (it == replies_.end()) it = replies_.find(key(req.stage, "*", digests));
    if (it == replies_.end())
      throw MockMiss("no transcript entry for stage '" + req.stage + "'" +
                     (req.focus.empty() ? "" : " (" + req.focus + ")"));
    return {it->second, "mock", false, 0};
  }

  std::string kind() const override { return "mock"; }
  std::string model_name() const override { return "mock"; }
  std::size_t calls() const { return calls_.load(); }

 private:
  static std::string key(const std::string& stage, const std::string& digest, const std::vector<std::string>& imgs) {
    return stage + "|" + digest + "|" + text::join(imgs, ",");
  }

  std::map<std::string, std::string> replies_;  // immutable after construction
  std::atomic<std::size_t> calls_{0};
};

/// OpenAI-compatible chat-completions client with retry on 429/5xx and
/// transport failures.
class HttpBackend : public VlmBackend {
 public:
  explicit HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)) {
    validate_backend_config(cfg_);
    const auto scheme_end = cfg_.endpoint.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint must be an absolute URL");
    const auto path_start = cfg_.endpoint.find('/', scheme_end + 3);
    base_ = cfg_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : cfg_.endpoint.substr(path_start);
    if (!cfg_.auth_env.empty()) {
      const char* key = std::getenv(cfg_.auth_env.c_str());
      if (!key || !*key) throw ConfigError("environment variable " + cfg_.auth_env + " is not set");
      api_key_ = key;
    }
  }

  VlmResponse complete(const VlmRequest& req) override {
    check_request(req);
    const std::string body = request_body(req).dump();
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    const auto start = std::chrono::steady_clock::now();
    std::string last_problem;
    for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
      if (attempt > 1) backoff(attempt - 1);
      attempts_.fetch_add(1);
      httplib::Client cli(base_);
      cli.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
      cli.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
      cli.set_write_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
      auto res = cli.Post(path_, headers, body, "application/json");
      if (!res) {
        last_problem = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      const int status = res->status;
      if (status == 401 || status == 403) throw AuthError("backend rejected credentials (HTTP " + std::to_string(status) + ")");
      if (status == 429 || status >= 500) {
        last_problem = "HTTP " + std::to_string(status);
        continue;
      }
      if (status < 200 || status >= 300)
        throw BackendError("backend returned HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
      VlmResponse out;
      out.text = extract_text(res->body);
      out.backend_id = "http:" + cfg_.model_name;
      out.latency_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
      return out;
    }
    throw BackendUnavailable("giving up after " + std::to_string(cfg_.retry.max_attempts) + " attempts (" +
                             last_problem + ")");
  }

  std::string kind() const override { return cfg_.kind_token(); }
  std::string model_name() const override { return cfg_.model_name; }
  std::size_t attempts() const { return attempts_.load(); }

  json request_body(const VlmRequest& req) const {
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", req.prompt}});
    for (const auto& img : req.images)
      content.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:" + img.mime + ";base64," + base64_encode(*img.bytes)}}}});
    return {{"model", cfg_.model_name},
            {"messages", json::array({{{"role", "user"}, {"content", content}}})},
            {"max_tokens", req.max_tokens},
            {"temperature", req.temperature}};
  }

 private:
  static std::string extract_text(const std::string& body) {
    std::string text;
    try {
      const auto doc = json::parse(body);
      const auto& content = doc.at("choices").at(0).at("message").at("content");
      if (content.is_string()) {
        text = content.get<std::string>();
      } else if (content.is_array()) {
        for (const auto& part : content)
          if (part.value("type", "") == "text") text += part.value("text", "");
      }
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed completion payload: ") + e.what());
    }
    if (text::trim(text).empty()) throw BackendError("backend returned an empty completion");
    return text;
  }

  // Full jitter: uniform in [0, base * 2^(retry-1)].
  void backoff(int retry) {
    const double cap = static_cast<double>(cfg_.retry.base_backoff_ms) * static_cast<double>(1u << std::min(retry - 1, 16));
    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::uniform_real_distribution<double> dist(0.0, cap);
    std::this_thread::sleep_for(std::chrono::microseconds(static_cast<std::int64_t>(dist(rng) * 1000.0)));
  }

  BackendConfig cfg_;
  std::string base_;
  std::string path_;
  std::string api_key_;
  std::atomic<std::size_t> attempts_{0};
};

inline std::shared_ptr<VlmBackend> make_backend(const BackendConfig& cfg) {
  validate_backend_config(cfg);
  if (cfg.kind == BackendConfig::Kind::mock) return MockBackend::from_file(cfg.mock_transcript);
  return std::make_shared<HttpBackend>(cfg);
}

/// One-shot call through a freshly constructed backend.
inline VlmResponse complete(const BackendConfig& cfg, const VlmRequest& req) { return make_backend(cfg)->complete(req); }

// ---------------------------------------------------------------------------
// Response cache

inline json cache_key_fields(const std::string& backend_kind, const std::string& model_name, const VlmRequest& req) {
  std::vector<std::string> digests;
  for (const auto& img : req.images) digests.push_back(img.digest);
  json constraints = req.constraints ? json(*req.constraints) : json(nullptr);
  return {{"backend_kind", backend_kind}, {"model_name", model_name},   {"prompt", req.prompt},
          {"image_digests", digests},     {"constraints", constraints}, {"temperature", req.temperature},
          {"max_tokens", req.max_tokens}};
}

inline std::string cache_key(const json& key_fields) { return sha256_hex(key_fields.dump()); }

struct CacheStats {
  std::size_t hits = 0;
  std::size_t misses = 0;
  std::size_t corrupt = 0;
};

/// One JSON file per key: {key, key_fields, text, created_at}.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) throw IoError("cache directory not writable: " + dir_.string());
  }

  std::filesystem::path entry_path(const std::string& key) const { return dir_ / (key + ".json"); }

  /// Returns the cached text, std::nullopt on a miss; throws CacheCorrupt
  /// when an entry exists but fails its integrity check.
  std::optional<std::string> lookup(const std::string& key) const {
    const auto path = entry_path(key);
    if (!std::filesystem::exists(path)) return std::nullopt;
    std::string content;
    try {
      content = fs_util::read_file(path);
    } catch (const IoError& e) {
      throw CacheCorrupt(e.what());
    }
    try {
      const auto doc = json::parse(content);
      const auto& text = doc.at("text");
      if (doc.at("key").get<std::string>() != key || cache_key(doc.at("key_fields")) != key || !text.is_string() ||
          text.get<std::string>().empty())
        throw CacheCorrupt("cache entry " + path.string() + " fails integrity check");
      return text.get<std::string>();
    } catch (const json::exception&) {
      throw CacheCorrupt("cache entry " + path.string() + " is not valid JSON");
    }
  }

  void store(const std::string& key, const json& key_fields, const std::string& text) const {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    json doc = {{"key", key}, {"key_fields", key_fields}, {"text", text}, {"created_at", stamp}};
    fs_util::write_file_atomic(entry_path(key), doc.dump(2));
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
};

/// Consults the cache before the backend; persists misses atomically.
inline VlmResponse cached_complete(const ResponseCache& cache, VlmBackend& backend, const VlmRequest& req,
                                   CacheStats* stats = nullptr) {
  check_request(req);
  const auto fields = cache_key_fields(backend.kind(), backend.model_name(), req);
  const auto key = cache_key(fields);
  try {
    if (auto hit = cache.lookup(key)) {
      if (stats) ++stats->hits;
      return {*hit, backend.kind() + ":" + backend.model_name(), true, 0};
    }
  } catch (const CacheCorrupt& e) {
    spdlog::warn("{}; refetching", e.what());
    if (stats) ++stats->corrupt;
  }
  if (stats) ++stats->misses;
  auto resp = backend.complete(req);
  cache.store(key, fields, resp.text);
  resp.cache_hit = false;
  return resp;
}

inline VlmResponse cached_complete(const std::filesystem::path& cache_dir, VlmBackend& backend, const VlmRequest& req) {
  return cached_complete(ResponseCache(cache_dir), backend, req);
}

/// Backend decorator applying the response cache; counters are cumulative.
class CachedBackend : public VlmBackend {
 public:
  CachedBackend(std::shared_ptr<VlmBackend> inner, std::filesystem::path dir)
      : inner_(std::move(inner)), cache_(std::move(dir)) {}

  VlmResponse complete(const VlmRequest& req) override {
    CacheStats local;
    auto resp = cached_complete(cache_, *inner_, req, &local);
    hits_ += local.hits;
    misses_ += local.misses;
    corrupt_ += local.corrupt;
    return resp;
  }
  std::string kind() const override { return inner_->kind(); }
  std::string model_name() const override { return inner_->model_name(); }

  CacheStats stats() const { return {hits_.load(), misses_.load(), corrupt_.load()}; }

 private:
  std::shared_ptr<VlmBackend> inner_;
  ResponseCache cache_;
  std::atomic<std::size_t> hits_{0}, misses_{0}, corrupt_{0};
};

/// Captures every successful exchange so a live run can be replayed offline
/// through MockBackend.
class RecordingBackend : public VlmBackend {
 public:
  explicit RecordingBackend(std::shared_ptr<VlmBackend> inner) : inner_(std::move(inner)) {}

  VlmResponse complete(const VlmRequest& req) override {
    auto resp = inner_->complete(req);
    TranscriptEntry e;
    e.stage = req.stage;
    e.prompt_digest = prompt_digest(req.prompt);
    for (const auto& img : req.images) e.image_digests.push_back(img.digest);
    e.reply = resp.text;
    std::lock_guard lock(mu_);
    entries_[to_json(e).dump()] = e;
    return resp;
  }
  std::string kind() const override { return inner_->kind(); }
  std::string model_name() const override { return inner_->model_name(); }

  /// Entries in a canonical order independent of call scheduling.
  std::vector<TranscriptEntry> entries() const {
    std::lock_guard lock(mu_);
    std::vector<TranscriptEntry> out;
    for (const auto& [_, e] : entries_) out.push_back(e);
    return out;
  }

  void write(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& e : entries()) out += to_json(e).dump() + "\n";
    fs_util::write_file_atomic(path, out);
  }

 private:
  std::shared_ptr<VlmBackend> inner_;
  mutable std::mutex mu_;
  std::map<std::string, TranscriptEntry> entries_;
};

// ---------------------------------------------------------------------------
// Closed-set answer parsing

namespace choice_detail {

inline std::vector<std::string> words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) && c < 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace choice_detail

/// Finds the single allowed token mentioned in a free-form reply. Matching is
/// case-insensitive and word-aligned; underscores, spaces and hyphens are
/// interchangeable, and `aliases` maps extra phrases onto allowed tokens. A
/// mention nested inside a longer mention of a different token (e.g. "exact"
/// inside "near exact") does not count.
inline std::string parse_choice(std::string_view text, const std::vector<std::string>& allowed,
                                const std::map<std::string, std::string>& aliases = {}) {
  using choice_detail::words;
  if (allowed.empty()) throw ContractViolation("parse_choice needs a non-empty allowed set");

  struct Phrase {
    std::vector<std::string> words;
    std::size_t token;
  };
  std::vector<Phrase> phrases;
  for (std::size_t i = 0; i < allowed.size(); ++i) phrases.push_back({words(allowed[i]), i});
  for (const auto& [alias, target] : aliases) {
    const auto it = std::find(allowed.begin(), allowed.end(), target);
    if (it != allowed.end()) phrases.push_back({words(alias), static_cast<std::size_t>(it - allowed.begin())});
  }

  const auto reply = words(text);
  struct Hit {
    std::size_t begin, end, token;
  };
  std::vector<Hit> hits;
  for (const auto& p : phrases) {
    if (p.words.empty() || p.words.size() > reply.size()) continue;
    for (std::size_t i = 0; i + p.words.size() <= reply.size(); ++i)
      if (std::equal(p.words.begin(), p.words.end(), reply.begin() + static_cast<std::ptrdiff_t>(i)))
        hits.push_back({i, i + p.words.size(), p.token});
  }

  std::vector<std::size_t> found;
  for (const auto& h : hits) {
    const bool nested = std::any_of(hits.begin(), hits.end(), [&](const Hit& o) {
      return o.token != h.token && o.begin <= h.begin && h.end <= o.end && (o.end - o.begin) > (h.end - h.begin);
    });
    if (!nested && std::find(found.begin(), found.end(), h.token) == found.end()) found.push_back(h.token);
  }
  if (found.empty()) throw ParseMiss("reply names none of: " + text::join(allowed, ", "));
  if (found.size() > 1) {
    std::vector<std::string> names;
    for (auto t : found) names.push_back(allowed[t]);
    throw ParseAmbiguous("reply names several options: " + text::join(names, ", "));
  }
  return allowed[found.front()];
}

}  // namespace charis
