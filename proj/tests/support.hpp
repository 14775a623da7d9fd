// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shared helpers for the unit and acceptance tests.

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "charis/ekb.hpp"
#include "charis/image.hpp"
#include "charis/templates.hpp"
#include "charis/util.hpp"
#include "charis/vlm_client.hpp"

namespace charis::testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return CHARIS_SOURCE_DIR; }
inline fs::path default_ekb_path() { return source_dir() / "data/ekb/default.json"; }
inline fs::path templates_dir() { return source_dir() / "templates"; }
inline fs::path fixture_dir() { return source_dir() / "data/fixtures/synthetic50"; }
inline std::string cli() { return CHARIS_CLI; }

inline const KnowledgeBase& default_kb() {
  static const KnowledgeBase kb = load_ekb(default_ekb_path());
  return kb;
}

inline const TemplateSet& default_templates() {
  static const TemplateSet t = TemplateSet::load(templates_dir());
  return t;
}

inline json default_ekb_json() { return json::parse(fs_util::read_file(default_ekb_path())); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("charis_test_" + std::to_string(rd()) + "_" + std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline RgbImage solid_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  RgbImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
    img.pixels[i] = r;
    img.pixels[i + 1] = g;
    img.pixels[i + 2] = b;
  }
  return img;
}

inline RgbImage noise_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  RgbImage img = solid_image(w, h, 0, 0, 0);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng());
  return img;
}

/// A distinct small PNG payload per seed.
inline ImagePayload png_payload(std::uint64_t seed, int size = 8) {
  return image_from_bytes(encode_png(noise_image(size, size, seed)), "seed" + std::to_string(seed) + ".png");
}

/// Textbook Pearson in extended precision from raw sums; deliberately a
/// different formulation from the library's.
inline long double oracle_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double a = x[i], b = y[i];
    sx += a;
    sy += b;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  return (n * sxy - sx * sy) / (std::sqrt(n * sxx - sx * sx) * std::sqrt(n * syy - sy * sy));
}

/// Runs a shell command, returning its exit status; stdout goes to `out`.
inline int run(const std::string& command, std::string* out = nullptr) {
  FILE* pipe = popen((command + (out ? "" : " >/dev/null")).c_str(), "r");
  if (!pipe) return -1;
  std::string buf;
  char chunk[4096];
  std::size_t n;
  while ((n = fread(chunk, 1, sizeof chunk, pipe)) > 0) buf.append(chunk, n);
  const int status = pclose(pipe);
  if (out) *out = buf;
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

inline std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

/// Knowledge base where (animal, cartoon) has exactly three attributes with
/// 3 + 3 + 2 features, and every other combination shares one attribute.
inline KnowledgeBase small_kb() {
  json doc = default_ekb_json();
  doc["taxonomy"]["unsupported"] = json::array();
  json others = json::array();
  for (const auto& ts : all_type_styles())
    if (!(ts.type == SubjectType::animal && ts.style == Style::cartoon))
      others.push_back({{"type", to_token(ts.type)}, {"style", to_token(ts.style)}});
  const json animal_cartoon = json::array({{{"type", "animal"}, {"style", "cartoon"}}});
  doc["attributes"] = json::array({
      {{"id", "species_specific_element"}, {"display_name", "Species-specific element"}, {"applicability", animal_cartoon},
       {"feature_ids", {"ear_shape", "muzzle_shape", "tail_shape"}}, {"prompt_hint", "ears, muzzle, tail"}},
      {{"id", "coat"}, {"display_name", "Coat"}, {"applicability", animal_cartoon},
       {"feature_ids", {"coat_color", "coat_pattern", "coat_texture"}}, {"prompt_hint", "fur"}},
      {{"id", "cartoon_style"}, {"display_name", "Cartoon style"}, {"applicability", animal_cartoon},
       {"feature_ids", {"line_art", "color_palette"}}, {"prompt_hint", "drawing style"}},
      {{"id", "body"}, {"display_name", "Body"}, {"applicability", others},
       {"feature_ids", {"body_shape", "head_to_body_ratio"}}, {"prompt_hint", "overall build"}},
  });
  auto feat = [](const char* id, const char* attr, const char* tier) {
    return json{{"id", id}, {"display_name", id}, {"attribute_id", attr}, {"tier", tier}, {"prompt_hint", ""}};
  };
  doc["features"] = json::array({feat("ear_shape", "species_specific_element", "critical"),
                                 feat("muzzle_shape", "species_specific_element", "critical"),
                                 feat("tail_shape", "species_specific_element", "major"),
                                 feat("coat_color", "coat", "critical"), feat("coat_pattern", "coat", "critical"),
                                 feat("coat_texture", "coat", "major"), feat("line_art", "cartoon_style", "major"),
                                 feat("color_palette", "cartoon_style", "major"), feat("body_shape", "body", "major"),
                                 feat("head_to_body_ratio", "body", "minor")});
  KnowledgeBase kb = parse_ekb(doc);
  const auto report = validate_ekb(kb);
  if (!report.ok()) throw ValidationError(report);
  return kb;
}

/// Wildcard-prompt transcript entry for a single-image stage.
inline TranscriptEntry wildcard(const std::string& stage, const std::vector<ImagePayload>& images,
                                const std::string& reply) {
  TranscriptEntry e{stage, "*", {}, reply};
  for (const auto& i : images) e.image_digests.push_back(i.digest);
  return e;
}

}  // namespace charis::testing
