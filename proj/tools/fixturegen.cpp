// SPDX-License-Identifier: Apache-2.0
// fixturegen: regenerates the synthetic evaluation fixture (manifest, images,
// mock transcript, backend config and golden report). A seeded scripted VLM
// answers every pipeline request; the exchanges are recorded into the mock
// transcript, so replaying it reproduces the golden report exactly.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "charis/benchmark.hpp"
#include "charis/digest.hpp"
#include "charis/ekb.hpp"
#include "charis/harness/eval.hpp"
#include "charis/image.hpp"
#include "charis/templates.hpp"
#include "charis/vlm_client.hpp"

#ifndef CHARIS_DATA_DIR
#define CHARIS_DATA_DIR "."
#endif

namespace fs = std::filesystem;
using namespace charis;

namespace {

std::uint64_t seed_of(const std::string& s) {
  const auto h = sha256_hex(s);
  return std::stoull(h.substr(0, 16), nullptr, 16);
}

struct Truth {
  SubjectType type;
  Style style;
};

/// Deterministic stand-in for a VLM. Answers depend only on the request
/// (stage, focus, image digests, constraints), never on call order.
class ScriptedBackend : public VlmBackend {
 public:
  explicit ScriptedBackend(std::map<std::string, Truth> truth) : truth_(std::move(truth)) {}

  VlmResponse complete(const VlmRequest& req) override {
    std::string key = req.stage + "|" + req.focus;
    for (const auto& img : req.images) key += "|" + img.digest;
    std::mt19937_64 rng(seed_of(key));
    const auto& t = truth_.at(req.images.front().digest);
    return {reply(req, t, rng), "scripted", false, 0};
  }
  std::string kind() const override { return "scripted"; }
  std::string model_name() const override { return "scripted"; }

 private:
  static std::string reply(const VlmRequest& req, const Truth& t, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pct(0, 99);
    if (req.stage == stage::type) {
      const std::string id(to_token(t.type));
      switch (pct(rng) % 3) {
        case 0: return id;
        case 1: return "The subject is best described as " + id + ".";
        default: return "Answer: " + id;
      }
    }
    if (req.stage == stage::style) {
      const std::string id(to_token(t.style));
      return pct(rng) % 2 ? id : "Style: " + id + ".";
    }
    if (req.stage == stage::attributes || req.stage == stage::features) {
      const auto& candidates = *req.constraints;
      std::vector<std::string> keep;
      for (const auto& c : candidates)
        if (pct(rng) < 80) keep.push_back(c);
      if (keep.empty()) keep.push_back(candidates.front());
      if (pct(rng) < 50) return "visible: " + text::join(keep, ", ");
      std::string out;
      for (const auto& c : candidates) {
        const bool yes = std::find(keep.begin(), keep.end(), c) != keep.end();
        out += c + ": " + (yes ? "yes" : "no") + "\n";
      }
      return out;
    }
    if (req.stage == stage::transformation) {
      // Per-pair drift so the fixture spans every category.
      static const int kUnchanged[] = {75, 50, 30, 8};
      const int drift = static_cast<int>(seed_of(req.images.back().digest) % 4);
      const int roll = pct(rng);
      if (roll < 3) return "I am not sure what changed here.";
      if (roll < kUnchanged[drift]) return std::string(kNoChange);
      const auto classes = all_values<TransformationClass>();
      const auto mags = all_values<Magnitude>();
      const auto provs = all_values<Provenance>();
      const int steps = 1 + pct(rng) % 2;
      std::string out;
      for (int i = 0; i < steps; ++i) {
        const auto cls = classes[static_cast<std::size_t>(pct(rng)) % classes.size()];
        const auto mag = mags[1 + static_cast<std::size_t>(pct(rng) < 25 + 15 * drift)];
        const auto prov = provs[static_cast<std::size_t>(pct(rng)) % provs.size()];
        out += std::string(to_token(cls)) + " | " + std::string(to_token(mag)) + " | " +
               std::string(to_token(prov)) + " | " + req.focus + " shows a " + std::string(to_token(mag)) + " " +
               std::string(to_token(cls)) + " change\n";
      }
      return out;
    }
    if (req.stage == stage::categorization) {
      const auto cats = all_tokens<ConsistencyCategory>();
      return cats[static_cast<std::size_t>(pct(rng)) % cats.size()];
    }
    throw MockMiss("scripted backend has no answer for stage " + req.stage);
  }

  std::map<std::string, Truth> truth_;
};

RgbImage make_image(std::uint64_t seed, int w, int h) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte(0, 255);
  RgbImage img;
  img.width = w;
  img.height = h;
  img.pixels.resize(static_cast<std::size_t>(w * h * 3));
  const int r0 = byte(rng), g0 = byte(rng), b0 = byte(rng);
  const int cx = w / 4 + byte(rng) % (w / 2), cy = h / 4 + byte(rng) % (h / 2), rad = h / 6 + byte(rng) % (h / 5);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto* p = img.at(x, y);
      const bool blob = (x - cx) * (x - cx) + (y - cy) * (y - cy) < rad * rad;
      p[0] = static_cast<std::uint8_t>(blob ? 255 - r0 : (r0 + x * 2) % 256);
      p[1] = static_cast<std::uint8_t>(blob ? 255 - g0 : (g0 + y * 2) % 256);
      p[2] = static_cast<std::uint8_t>(blob ? 255 - b0 : (b0 + x + y) % 256);
    }
  return img;
}

const char* kModels[] = {"anystory", "dsd", "omnigen", "uno"};

const char* kSubjectNoun(SubjectType t) {
  switch (t) {
    case SubjectType::humanoid: return "young explorer";
    case SubjectType::animal: return "red fox";
    case SubjectType::anthropomorphic: return "rabbit in a waistcoat";
    case SubjectType::animated_inanimate: return "smiling teapot";
  }
  return "subject";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regenerates the synthetic evaluation fixture"};
  std::string out = (fs::path(CHARIS_DATA_DIR) / "data/fixtures/synthetic50").string();
  std::string ekb_path = (fs::path(CHARIS_DATA_DIR) / "data/ekb/default.json").string();
  std::string templates_dir = (fs::path(CHARIS_DATA_DIR) / "templates").string();
  int entries_n = 50;
  app.add_option("--out", out)->capture_default_str();
  app.add_option("--ekb", ekb_path)->capture_default_str();
  app.add_option("--templates", templates_dir)->capture_default_str();
  app.add_option("--entries", entries_n)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  const auto kb = load_ekb(ekb_path);
  const auto templates = TemplateSet::load(templates_dir);
  const fs::path dir(out);
  fs::remove_all(dir / "images");
  fs::create_directories(dir / "images");

  std::vector<TypeStyle> combos;
  for (const auto& ts : all_type_styles())
    if (!kb.is_declared_unsupported(ts)) combos.push_back(ts);

  std::mt19937_64 rng(20241016);
  std::map<std::string, Truth> truth;
  std::vector<BenchmarkEntry> entries;
  const int subjects = 14;
  const auto classes = all_values<TransformationClass>();
  for (int i = 0; i < entries_n; ++i) {
    const int s = i % subjects;
    const auto ts = combos[static_cast<std::size_t>(s) % combos.size()];
    char sid[16], eid[16];
    std::snprintf(sid, sizeof sid, "s%02d", s + 1);
    std::snprintf(eid, sizeof eid, "e%03d", i + 1);

    const auto ref_rel = "images/ref_" + std::string(sid) + ".png";
    const auto gen_rel = "images/gen_" + std::string(eid) + ".png";
    const auto ref_bytes = encode_png(make_image(seed_of(sid), 48, 48));
    const auto gen_bytes = encode_png(make_image(seed_of(eid), 48, 48));
    if (!fs::exists(dir / ref_rel)) fs_util::write_file_atomic(dir / ref_rel, ref_bytes);
    fs_util::write_file_atomic(dir / gen_rel, gen_bytes);
    truth[sha256_hex(ref_bytes)] = {ts.type, ts.style};
    truth[sha256_hex(gen_bytes)] = {ts.type, ts.style};

    BenchmarkEntry e;
    e.entry_id = eid;
    e.subject_id = sid;
    e.reference_image = ref_rel;
    e.generated_image = gen_rel;
    e.declared_type = ts.type;
    e.declared_style = ts.style;
    e.model = kModels[i % 4];
    std::vector<TransformationClass> pool(classes.begin(), classes.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    const std::size_t k = 4 + rng() % 3;
    e.transformation_axes.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(e.transformation_axes.begin(), e.transformation_axes.end());
    e.prompt = "The " + std::string(kSubjectNoun(ts.type)) + " turning to wave from a rainy street at dusk, " +
               "seen from a low angle";
    entries.push_back(std::move(e));
  }
  fs_util::write_file_atomic(dir / "manifest.jsonl", serialize_manifest(entries));

  auto scripted = std::make_shared<ScriptedBackend>(truth);
  RecordingBackend recorder(scripted);
  harness::EvalOptions opts;
  opts.jobs = 1;
  // Record both aggregation modes so either can be replayed.
  harness::run_eval(entries, dir, kb, templates, recorder, nullptr, opts);
  opts.mode = AggregationMode::vlm;
  harness::run_eval(entries, dir, kb, templates, recorder, nullptr, opts);
  recorder.write(dir / "transcript.jsonl");
  fs_util::write_file_atomic(dir / "backend.json",
                             json{{"kind", "mock"}, {"mock_transcript", "transcript.jsonl"}}.dump(2) + "\n");

  // Golden report: replay through the mock exactly as `charis eval` does.
  auto mock = MockBackend::from_file(dir / "transcript.jsonl");
  opts.mode = AggregationMode::rules;
  const auto records = harness::run_eval(entries, dir, kb, templates, *mock, nullptr, opts);
  fs_util::write_file_atomic(dir / "golden_report.jsonl", harness::render_report(records, opts));
  fs_util::write_file_atomic(dir / "golden_report.summary.json", harness::summarize(records, opts, *mock).dump(2) + "\n");
  std::cout << "wrote " << entries.size() << " entries, " << recorder.entries().size() << " transcript lines to "
            << dir.string() << "\n";
  return 0;
}
