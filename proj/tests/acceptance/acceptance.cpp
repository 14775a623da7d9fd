// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <chrono>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "charis/aggregation.hpp"
#include "charis/benchmark.hpp"
#include "charis/decomposition.hpp"
#include "charis/ekb.hpp"
#include "charis/statistics.hpp"
#include "charis/transform_analysis.hpp"
#include "charis/vlm_client.hpp"
#include "../support.hpp"

using namespace charis;
using namespace charis::testing;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
};

// ---------------------------------------------------------------------------
// 1. End-to-end determinism

Outcome ac1_determinism() {
  Outcome o;
  TempDir dir;
  const auto manifest = quote(fixture_dir() / "manifest.jsonl");
  const auto backend = quote(fixture_dir() / "backend.json");
  std::vector<std::string> reports;
  double worst_s = 0;
  auto eval = [&](int jobs, int idx) {
    const auto out = dir / ("r" + std::to_string(idx) + ".jsonl");
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run(cli() + " eval --manifest " + manifest + " --backend " + backend + " --jobs " +
                       std::to_string(jobs) + " --out " + quote(out) + " 2>/dev/null");
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    worst_s = std::max(worst_s, s);
    if (rc != 0) o.fail("eval exited " + std::to_string(rc) + " with jobs=" + std::to_string(jobs));
    if (s >= 10.0) o.fail("eval took " + std::to_string(s) + " s with jobs=" + std::to_string(jobs));
    reports.push_back(fs_util::read_file(out) + "\n--\n" + fs_util::read_file(dir / ("r" + std::to_string(idx) + ".summary.json")));
  };
  int idx = 0;
  for (int rerun = 0; rerun < 5; ++rerun) eval(1, idx++);
  for (int jobs : {4, 8}) eval(jobs, idx++);
  for (std::size_t i = 1; i < reports.size(); ++i)
    if (reports[i] != reports[0]) o.fail("run " + std::to_string(i) + " differs from run 0");
  const auto golden = fs_util::read_file(fixture_dir() / "golden_report.jsonl");
  if (reports[0].rfind(golden, 0) != 0) o.fail("report differs from the checked-in golden report");
  if (o.pass) {
    std::ostringstream ss;
    ss << "7 runs (5x jobs=1, jobs=4, jobs=8) byte-identical, slowest " << worst_s << " s";
    o.detail = ss.str();
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. Pearson oracle equivalence

Outcome ac2_pearson() {
  Outcome o;
  std::mt19937 rng(20260101);
  std::uniform_int_distribution<std::size_t> len(3, 100);
  std::uniform_real_distribution<double> u(-100.0, 100.0), w(-2.0, 2.0);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    std::vector<double> x(n), y(n);
    const double slope = w(rng);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = u(rng);
      y[i] = slope * x[i] + u(rng);
    }
    const double got = pearson(x, y);
    const double want = static_cast<double>(oracle_pearson(x, y));
    worst = std::max(worst, std::abs(got - want));
  }
  if (worst > 1e-12) o.fail("max deviation " + std::to_string(worst));

  std::vector<double> x(17), neg(17);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = u(rng);
    neg[i] = -x[i];
  }
  if (std::abs(pearson(x, x) - 1.0) > 1e-12) o.fail("(x,x) != 1");
  if (std::abs(pearson(x, neg) + 1.0) > 1e-12) o.fail("(x,-x) != -1");
  if (std::abs(pearson({1, 2, 3, 4}, {1, 3, 2, 4}) - 0.8) > 1e-12) o.fail("fixed case != 0.8");
  if (o.pass) {
    std::ostringstream ss;
    ss << "1000 random pairs, max |r - oracle| = " << worst << " (tol 1e-12); fixed cases hold";
    o.detail = ss.str();
  }
  return o;
}

// ---------------------------------------------------------------------------
// 3. Rule-engine monotonicity

/// Every single-step upgrade of `m`: one magnitude notch up, or provenance
/// switched to intrinsic.
std::vector<ReportMap> upgrades(const ReportMap& m) {
  std::vector<ReportMap> out;
  for (const auto& [fid, rep] : m)
    for (std::size_t i = 0; i < rep.steps.size(); ++i) {
      const auto& s = rep.steps[i];
      if (s.magnitude != Magnitude::major) {
        auto copy = m;
        copy[fid].steps[i].magnitude = static_cast<Magnitude>(static_cast<int>(s.magnitude) + 1);
        out.push_back(std::move(copy));
      }
      if (s.provenance != Provenance::intrinsic) {
        auto copy = m;
        copy[fid].steps[i].provenance = Provenance::intrinsic;
        out.push_back(std::move(copy));
      }
    }
  return out;
}

Outcome ac3_monotonicity() {
  Outcome o;
  const auto& kb = default_kb();
  std::size_t checks = 0, violations = 0;
  auto check = [&](const ReportMap& m) {
    const auto before = categorize_rules(m, kb).category;
    for (const auto& up : upgrades(m)) {
      ++checks;
      if (categorize_rules(up, kb).category > before) ++violations;
    }
  };

  // Exhaustive single-step sweep on one feature of every tier.
  std::set<Tier> tiers_done;
  std::size_t combos = 0;
  for (const auto& f : kb.features) {
    if (!tiers_done.insert(f.tier).second) continue;
    for (auto c : all_values<TransformationClass>())
      for (auto mag : all_values<Magnitude>())
        for (auto p : all_values<Provenance>()) {
          ReportMap m;
          m[f.id] = {f.id, {{c, mag, p, "sweep"}}, ""};
          check(m);
          ++combos;
        }
  }

  std::mt19937 rng(777);
  for (int trial = 0; trial < 10000; ++trial) {
    ReportMap m;
    const int nfeat = 1 + static_cast<int>(rng() % 3);
    for (int i = 0; i < nfeat; ++i) {
      const auto& f = kb.features[rng() % kb.features.size()];
      auto& rep = m[f.id];
      rep.feature_id = f.id;
      const int nsteps = static_cast<int>(rng() % 3);
      for (int k = 0; k < nsteps; ++k)
        rep.steps.push_back({static_cast<TransformationClass>(rng() % 7), static_cast<Magnitude>(rng() % 3),
                             static_cast<Provenance>(rng() % 3), "random"});
    }
    check(m);
  }
  if (violations) o.fail(std::to_string(violations) + " of " + std::to_string(checks) + " upgrades improved the category");
  if (o.pass)
    o.detail = std::to_string(combos) + " exhaustive cases over " + std::to_string(tiers_done.size()) +
               " tiers + 10000 random trials, " + std::to_string(checks) + " upgrades, 0 improvements";
  return o;
}

// ---------------------------------------------------------------------------
// 4. Context invariance

Outcome ac4_context() {
  Outcome o;
  const auto& kb = default_kb();
  std::mt19937 rng(4242);
  const auto& ctx_classes = kb.rules.context_classes;
  for (int trial = 0; trial < 1000; ++trial) {
    ReportMap m;
    const int nfeat = static_cast<int>(rng() % 6);
    for (int i = 0; i < nfeat; ++i) {
      const auto& f = kb.features[rng() % kb.features.size()];
      auto& rep = m[f.id];
      rep.feature_id = f.id;
      const int nsteps = 1 + static_cast<int>(rng() % 4);
      for (int k = 0; k < nsteps; ++k) {
        TransformationStep s;
        s.magnitude = static_cast<Magnitude>(rng() % 3);
        s.description = "exempt";
        if (rng() % 2) {
          s.cls = ctx_classes[rng() % ctx_classes.size()];
          s.provenance = static_cast<Provenance>(rng() % 3);
        } else {
          s.cls = static_cast<TransformationClass>(rng() % 7);
          s.provenance = rng() % 2 ? Provenance::pose_induced : Provenance::style_induced;
        }
        rep.steps.push_back(s);
      }
    }
    const auto r = categorize_rules(m, kb);
    if (r.category != ConsistencyCategory::exact || normalize(r.category) != 1.0 || r.total_points != 0) {
      o.fail("trial " + std::to_string(trial) + " scored " + std::string(to_token(r.category)));
      break;
    }
  }
  if (o.pass) o.detail = "1000 exempt-only report sets all exact, score 1.0";
  return o;
}

// ---------------------------------------------------------------------------
// 5. EKB integrity

Outcome ac5_ekb() {
  Outcome o;
  KnowledgeBase kb;
  try {
    kb = load_ekb(default_ekb_path());
  } catch (const Error& e) {
    o.fail(e.what());
    return o;
  }
  std::size_t populated = 0, declared = 0;
  for (auto ts : all_type_styles()) {
    if (kb.is_declared_unsupported(ts)) {
      ++declared;
      continue;
    }
    const auto attrs = attributes_for(kb, ts.type, ts.style);
    std::vector<std::string> ids;
    for (const auto& a : attrs) ids.push_back(a.id);
    const auto feats = features_for(kb, ids);
    if (attrs.size() < 2) o.fail(ts.str() + " has " + std::to_string(attrs.size()) + " attributes");
    if (feats.size() < 3) o.fail(ts.str() + " has " + std::to_string(feats.size()) + " features");
    ++populated;
  }
  if (populated != 11 || declared != 1)
    o.fail(std::to_string(populated) + " populated, " + std::to_string(declared) + " declared unsupported");
  if (o.pass) o.detail = "valid; 11 populated combinations each >=2 attributes and >=3 features; 1 declared unsupported";
  return o;
}

// ---------------------------------------------------------------------------
// 6. Table-shape reproduction

struct Sampled {
  std::string model, entry;
  SubjectType type;
  Style style;
  int h1, h2, g;  // category indices, rater ids r_a < r_b
  std::map<std::string, double> baselines;
};

const char* kModels[] = {"anystory", "dsd", "omnigen", "uno"};
const char* kMetrics[] = {"clip_i", "dino"};

std::vector<Sampled> sample_fixture(std::uint32_t seed, bool all_agree) {
  std::mt19937 rng(seed);
  std::vector<TypeStyle> combos;
  for (auto ts : all_type_styles())
    if (!default_kb().is_declared_unsupported(ts)) combos.push_back(ts);
  std::vector<Sampled> out;
  for (const char* model : kModels)
    for (int e = 0; e < 30; ++e) {
      Sampled s;
      s.model = model;
      char id[16];
      std::snprintf(id, sizeof id, "p%03d", e);
      s.entry = id;
      const auto ts = combos[static_cast<std::size_t>(e) % combos.size()];
      s.type = ts.type;
      s.style = ts.style;
      if (all_agree) {
        s.h1 = s.h2 = s.g = e % 4;
      } else {
        const int truth = static_cast<int>(rng() % 4);
        auto noisy = [&] { return std::clamp(truth + static_cast<int>(rng() % 3) - 1, 0, 3); };
        s.h1 = noisy();
        s.h2 = noisy();
        s.g = noisy();
      }
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (const char* m : kMetrics) s.baselines[m] = std::round(u(rng) * 1e6) / 1e6;
      out.push_back(s);
    }
  return out;
}

void write_fixture(const std::vector<Sampled>& rows, const TempDir& dir) {
  const auto cats = all_tokens<ConsistencyCategory>();
  std::string preds, ratings, baselines;
  for (const auto& r : rows) {
    preds += json{{"entry_id", r.entry},
                  {"model", r.model},
                  {"declared_type", to_token(r.type)},
                  {"declared_style", to_token(r.style)},
                  {"category", cats[static_cast<std::size_t>(r.g)]}}
                 .dump() +
             "\n";
    ratings += json{{"entry_id", r.entry}, {"rater_id", r.model + "_r_b"}, {"model", r.model}, {"category", cats[static_cast<std::size_t>(r.h2)]}}.dump() + "\n";
    ratings += json{{"entry_id", r.entry}, {"rater_id", r.model + "_r_a"}, {"model", r.model}, {"category", cats[static_cast<std::size_t>(r.h1)]}}.dump() + "\n";
    for (const auto& [m, v] : r.baselines)
      baselines += json{{"entry_id", r.entry}, {"model", r.model}, {"metric", m}, {"score", v}}.dump() + "\n";
  }
  fs_util::write_file_atomic(dir / "predictions.jsonl", preds);
  fs_util::write_file_atomic(dir / "ratings.jsonl", ratings);
  fs_util::write_file_atomic(dir / "baselines.jsonl", baselines);
}

/// Independent recomputation of one correlation cell: {r or NaN, status}.
std::pair<double, std::string> oracle_cell(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 3) return {std::nan(""), "insufficient"};
  auto constant = [](const std::vector<double>& v) {
    for (double a : v)
      if (a != v.front()) return false;
    return true;
  };
  if (constant(x) || constant(y)) return {std::nan(""), "undefined"};
  return {static_cast<double>(oracle_pearson(x, y)), "ok"};
}

void check_table(const json& table, const std::vector<std::string>& key_columns,
                 const std::map<std::vector<std::string>, std::vector<const Sampled*>>& groups, Outcome& o,
                 double* worst) {
  const std::vector<std::string> want_cols = {"H-H", "G-H", "clip_i-H", "dino-H"};
  if (table["key_columns"].get<std::vector<std::string>>() != key_columns) o.fail("key columns differ");
  if (table["columns"].get<std::vector<std::string>>() != want_cols) o.fail("columns differ: " + table["columns"].dump());
  if (table["rows"].size() != groups.size()) {
    o.fail("row count " + std::to_string(table["rows"].size()) + " != " + std::to_string(groups.size()));
    return;
  }
  std::size_t i = 0;
  for (const auto& [key, recs] : groups) {
    const auto& row = table["rows"][i++];
    for (std::size_t k = 0; k < key_columns.size(); ++k)
      if (row[key_columns[k]] != key[k]) o.fail("row key mismatch at " + row.dump().substr(0, 80));
    std::vector<double> h1, h2, hm, g;
    std::map<std::string, std::vector<double>> metric;
    for (const auto* r : recs) {
      h1.push_back(r->h1 / 3.0);
      h2.push_back(r->h2 / 3.0);
      hm.push_back((r->h1 + r->h2) / 6.0);
      g.push_back(r->g / 3.0);
      for (const auto& [m, v] : r->baselines) metric[m].push_back(v);
    }
    std::map<std::string, std::pair<double, std::string>> want = {
        {"H-H", oracle_cell(h1, h2)}, {"G-H", oracle_cell(g, hm)}, {"clip_i-H", oracle_cell(metric["clip_i"], hm)},
        {"dino-H", oracle_cell(metric["dino"], hm)}};
    for (const auto& [col, expect] : want) {
      const auto& cell = row[col];
      if (cell["status"] != expect.second) {
        o.fail(col + " status " + cell["status"].get<std::string>() + " != " + expect.second);
        continue;
      }
      if (expect.second != "ok") continue;
      const double d = std::abs(cell["r"].get<double>() - expect.first);
      *worst = std::max(*worst, d);
      if (d > 1e-9) o.fail(col + " deviates by " + std::to_string(d));
    }
  }
}

Outcome ac6_tables() {
  Outcome o;
  double worst = 0;
  {
    TempDir dir;
    const auto rows = sample_fixture(6, false);
    write_fixture(rows, dir);
    const int rc = run(cli() + " stats --ratings " + quote(dir / "ratings.jsonl") + " --predictions " +
                       quote(dir / "predictions.jsonl") + " --baselines " + quote(dir / "baselines.jsonl") +
                       " --out " + quote(dir / "stats.json") + " 2>/dev/null");
    if (rc != 0) {
      o.fail("charis stats exited " + std::to_string(rc));
      return o;
    }
    const auto doc = json::parse(fs_util::read_file(dir / "stats.json"));
    if (!std::filesystem::exists(dir / "stats.txt")) o.fail("no text rendering written");

    std::map<std::vector<std::string>, std::vector<const Sampled*>> by_model, by_cs;
    for (const auto& r : rows) {
      by_model[{r.model}].push_back(&r);
      by_cs[{std::string(to_token(r.type)), std::string(to_token(r.style))}].push_back(&r);
    }
    check_table(doc["by_model"], {"model"}, by_model, o, &worst);
    check_table(doc["by_category_style"], {"type", "style"}, by_cs, o, &worst);

    const auto& means = doc["mean_scores"];
    const std::vector<std::string> mean_cols = {"h_bar", "g_bar", "clip_i_bar", "dino_bar"};
    if (means["columns"].get<std::vector<std::string>>() != mean_cols) o.fail("mean columns differ");
    if (means["rows"].size() != 4) o.fail("mean table needs 4 rows");
    std::size_t i = 0;
    for (const auto& [key, recs] : by_model) {
      const auto& row = means["rows"][i++];
      long double h = 0, g = 0, c = 0, d = 0;
      for (const auto* r : recs) {
        h += (r->h1 + r->h2) / 6.0L;
        g += r->g / 3.0L;
        c += r->baselines.at("clip_i");
        d += r->baselines.at("dino");
      }
      const long double n = static_cast<long double>(recs.size());
      const std::pair<const char*, long double> want[] = {{"h_bar", h / n}, {"g_bar", g / n}, {"clip_i_bar", c / n}, {"dino_bar", d / n}};
      for (const auto& [col, v] : want) {
        const double dev = std::abs(row[col].get<double>() - static_cast<double>(v));
        worst = std::max(worst, dev);
        if (dev > 1e-9) o.fail(std::string(col) + " deviates for " + key[0]);
      }
    }
  }
  {
    TempDir dir;
    write_fixture(sample_fixture(6, true), dir);
    const int rc = run(cli() + " stats --ratings " + quote(dir / "ratings.jsonl") + " --predictions " +
                       quote(dir / "predictions.jsonl") + " --out " + quote(dir / "stats.json") + " 2>/dev/null");
    if (rc != 0) {
      o.fail("all-agree stats exited " + std::to_string(rc));
      return o;
    }
    const auto doc = json::parse(fs_util::read_file(dir / "stats.json"));
    for (const char* table : {"by_model", "by_category_style"})
      for (const auto& row : doc[table]["rows"])
        for (const char* col : {"H-H", "G-H"})
          if (row[col]["status"] != "ok" || row[col]["r"].get<double>() != 1.0)
            o.fail(std::string("all-agree ") + table + " " + col + " = " + row[col].dump());
  }
  if (o.pass) {
    std::ostringstream ss;
    ss << "4x30x2 fixture: 3 tables with expected rows/columns, max |value - oracle| = " << worst
       << " (tol 1e-9); all-agree H-H = G-H = 1.0";
    o.detail = ss.str();
  }
  return o;
}

// ---------------------------------------------------------------------------
// 7. Parse robustness

struct Fuzzer {
  std::mt19937 rng{70707};

  std::string pick(const std::vector<std::string>& v) { return v[rng() % v.size()]; }

  std::string random_text() {
    std::string s;
    const std::size_t n = rng() % 200;
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = rng() % 100;
      if (r < 70)
        s.push_back(static_cast<char>(32 + rng() % 95));
      else if (r < 80)
        s.push_back('\n');
      else if (r < 90)
        s.push_back('|');
      else
        s.push_back(static_cast<char>(rng() % 256));
    }
    return s;
  }

  std::string soup(const std::vector<std::string>& vocab) {
    static const std::vector<std::string> seps = {" ", ", ", "\n", " | ", ": ", "-", "_", ".", " or ", " yes", " no"};
    std::string s;
    const std::size_t n = 1 + rng() % 8;
    for (std::size_t i = 0; i < n; ++i) s += pick(vocab) + pick(seps);
    return s;
  }

  std::string truncate(std::string s) {
    if (s.empty()) return s;
    s.resize(rng() % s.size());
    return s;
  }

  std::string reply(const std::vector<std::string>& vocab, const std::vector<std::string>& valid) {
    switch (rng() % 4) {
      case 0: return random_text();
      case 1: return soup(vocab);
      case 2: return truncate(pick(valid));
      default: return pick(valid) + "\n" + pick(valid);
    }
  }
};

template <typename Fn>
bool typed(Fn&& fn, std::string* unexpected) {
  try {
    fn();
    return true;
  } catch (const ParseMiss&) {
  } catch (const ParseAmbiguous&) {
  } catch (const ChecklistParseError&) {
  } catch (const AnalysisParseError&) {
  } catch (const CategorizationParseError&) {
  } catch (const std::exception& e) {
    *unexpected = e.what();
  } catch (...) {
    *unexpected = "non-standard exception";
  }
  return false;
}

Outcome ac7_parsing() {
  Outcome o;
  Fuzzer fz;
  const auto types = all_tokens<SubjectType>();
  const auto cats = all_tokens<ConsistencyCategory>();
  const std::vector<std::string> candidates = {"ear_shape", "muzzle_shape", "tail_shape", "coat_color"};
  std::vector<std::string> vocab = types;
  vocab.insert(vocab.end(), cats.begin(), cats.end());
  vocab.insert(vocab.end(), candidates.begin(), candidates.end());
  for (const auto& t : all_tokens<TransformationClass>()) vocab.push_back(t);
  for (const auto& t : all_tokens<Magnitude>()) vocab.push_back(t);
  for (const auto& t : all_tokens<Provenance>()) vocab.push_back(t);
  const std::vector<std::string> oov = {"dragon", "huge", "ear_size", "teleportation", "magical", "fin_shape", "superb"};
  vocab.insert(vocab.end(), oov.begin(), oov.end());
  vocab.insert(vocab.end(), {"NO_CHANGE", "visible", "none", "near", "match", "Category"});
  const std::vector<std::string> valid = {"humanoid",
                                          "Type: animal",
                                          "visible: ear_shape, tail_shape",
                                          "ear_shape: yes\nmuzzle_shape: no\ntail_shape: yes\ncoat_color: no",
                                          "pose_variation | minor | pose_induced | head turned",
                                          "occlusion_pattern | major | intrinsic | ear hidden\nlighting_condition | minor | intrinsic | warmer",
                                          "NO_CHANGE",
                                          "Category: Partial Match",
                                          "near_exact"};

  std::size_t accepted = 0, rejected = 0, oov_checks = 0;
  std::string unexpected;
  const std::set<std::string> cand_set(candidates.begin(), candidates.end());
  for (int i = 0; i < 10000 && unexpected.empty(); ++i) {
    const std::string r = fz.reply(vocab, valid);
    auto count = [&](bool ok) { ok ? ++accepted : ++rejected; };
    count(typed([&] {
      const auto got = parse_choice(r, types);
      if (std::find(types.begin(), types.end(), got) == types.end()) o.fail("parse_choice returned '" + got + "'");
    }, &unexpected));
    count(typed([&] {
      for (const auto& id : parse_checklist(r, candidates))
        if (!cand_set.count(id)) o.fail("checklist accepted '" + id + "'");
    }, &unexpected));
    count(typed([&] {
      for (const auto& s : parse_transformation_reply(r)) {
        if (s.description.empty()) o.fail("empty description accepted");
        if (static_cast<std::size_t>(s.cls) >= enum_count<TransformationClass>()) o.fail("bad class value");
      }
    }, &unexpected));
    count(typed([&] { parse_category(r); }, &unexpected));

    // Poisoned variants: an out-of-vocabulary token in a structural slot
    // must always be rejected.
    const auto bad = fz.pick(oov);
    const bool c1 = typed([&] { parse_checklist("visible: ear_shape, " + bad, candidates); }, &unexpected);
    const bool c2 = typed([&] { parse_checklist("ear_shape: yes\n" + bad + ": yes", candidates); }, &unexpected);
    const bool c3 = typed([&] { parse_transformation_reply(bad + " | minor | intrinsic | x"); }, &unexpected);
    const bool c4 = typed([&] { parse_transformation_reply("pose_variation | " + bad + " | intrinsic | x"); }, &unexpected);
    const bool c5 = typed([&] { parse_choice("the answer is " + bad, types); }, &unexpected);
    oov_checks += 5;
    if (c1 || c2 || c3 || c4 || c5) o.fail("out-of-vocabulary token '" + bad + "' accepted");
  }
  if (!unexpected.empty()) o.fail("untyped exception: " + unexpected);
  if (o.pass)
    o.detail = "10000 fuzzed replies x 4 parsers: " + std::to_string(accepted) + " valid, " + std::to_string(rejected) +
               " typed errors, 0 crashes; " + std::to_string(oov_checks) + " poisoned replies all rejected";
  return o;
}

// ---------------------------------------------------------------------------
// 8. Cache correctness

class CountingBackend : public VlmBackend {
 public:
  VlmResponse complete(const VlmRequest& req) override {
    ++calls;
    return {"answer for " + sha256_hex(req.prompt).substr(0, 8), "count", false, 0};
  }
  std::string kind() const override { return "counting"; }
  std::string model_name() const override { return "m"; }
  int calls = 0;
};

Outcome ac8_cache() {
  Outcome o;
  TempDir dir;
  ResponseCache cache(dir / "cache");
  CountingBackend backend;
  std::vector<VlmRequest> distinct;
  for (int i = 0; i < 20; ++i) {
    VlmRequest r;
    r.stage = "type";
    r.prompt = "prompt " + std::to_string(i % 5);
    r.images = {png_payload(static_cast<std::uint64_t>(i / 5))};
    distinct.push_back(r);
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < distinct.size(); ++i)
    for (int rep = 0; rep < 5; ++rep) order.push_back(i);
  std::shuffle(order.begin(), order.end(), std::mt19937(8));
  std::map<std::size_t, std::string> first_text;
  for (auto i : order) {
    const auto resp = cached_complete(cache, backend, distinct[i]);
    auto [it, inserted] = first_text.emplace(i, resp.text);
    if (!inserted && it->second != resp.text) o.fail("cached text changed for key " + std::to_string(i));
  }
  if (backend.calls != 20) o.fail(std::to_string(backend.calls) + " backend calls for 20 distinct keys");

  // Corrupt entries four different ways; each must refetch exactly once.
  const std::vector<std::function<void(const std::filesystem::path&)>> corruptions = {
      [](const auto& p) { fs_util::write_file_atomic(p, ""); },
      [](const auto& p) {
        auto s = fs_util::read_file(p);
        fs_util::write_file_atomic(p, s.substr(0, s.size() / 3));
      },
      [](const auto& p) { fs_util::write_file_atomic(p, "\x01\x02 binary garbage"); },
      [](const auto& p) {
        auto doc = json::parse(fs_util::read_file(p));
        doc["text"] = "";
        fs_util::write_file_atomic(p, doc.dump());
      },
  };
  for (std::size_t k = 0; k < corruptions.size(); ++k) {
    const auto& req = distinct[k];
    const auto key = cache_key(cache_key_fields(backend.kind(), backend.model_name(), req));
    corruptions[k](cache.entry_path(key));
    const int before = backend.calls;
    try {
      CacheStats stats;
      const auto resp = cached_complete(cache, backend, req, &stats);
      if (backend.calls != before + 1 || stats.corrupt != 1 || resp.text != first_text[k])
        o.fail("corruption " + std::to_string(k) + " not refetched cleanly");
      const auto again = cached_complete(cache, backend, req);
      if (!again.cache_hit || backend.calls != before + 1) o.fail("refetched entry not cached again");
    } catch (const std::exception& e) {
      o.fail(std::string("corrupt entry raised: ") + e.what());
    }
  }
  if (o.pass)
    o.detail = "100 calls over 20 keys -> 20 backend calls; 4 corruption kinds each refetched once and re-cached";
  return o;
}

// ---------------------------------------------------------------------------
// 9. Manifest statistics

Outcome ac9_manifest() {
  Outcome o;
  TempDir dir;
  const auto classes = all_tokens<TransformationClass>();
  std::vector<TypeStyle> combos;
  for (auto ts : all_type_styles())
    if (!default_kb().is_declared_unsupported(ts)) combos.push_back(ts);
  std::string big;
  std::mt19937 rng(1078);
  for (int i = 0; i < 1078; ++i) {
    const int subject = i % 154;
    const auto ts = combos[static_cast<std::size_t>(subject) % combos.size()];
    std::vector<std::string> axes(classes.begin(), classes.end());
    std::shuffle(axes.begin(), axes.end(), rng);
    axes.resize(1 + rng() % axes.size());
    big += json{{"entry_id", "e" + std::to_string(i)},
                {"subject_id", "s" + std::to_string(subject)},
                {"reference_image", "refs/s" + std::to_string(subject) + ".png"},
                {"prompt", "p"},
                {"declared_type", to_token(ts.type)},
                {"declared_style", to_token(ts.style)},
                {"transformation_axes", axes}}
               .dump() +
           "\n";
  }
  fs_util::write_file_atomic(dir / "big.jsonl", big);
  const auto stats = manifest_stats(load_manifest(dir / "big.jsonl"));
  if (stats.entry_count != 1078 || stats.subject_count != 154)
    o.fail(std::to_string(stats.entry_count) + " entries / " + std::to_string(stats.subject_count) + " subjects");

  std::string out;
  if (run(cli() + " manifest --manifest " + quote(dir / "big.jsonl") + " 2>/dev/null", &out) != 0) {
    o.fail("charis manifest failed");
  } else {
    const auto doc = json::parse(out);
    if (doc["entry_count"] != 1078 || doc["subject_count"] != 154) o.fail("CLI counts differ");
  }

  // Axis multiset {5,5,5,6,6}: mean 27/5.
  std::string crafted;
  const int counts[] = {5, 5, 5, 6, 6};
  for (int i = 0; i < 5; ++i)
    crafted += json{{"entry_id", "c" + std::to_string(i)},
                    {"subject_id", "s"},
                    {"reference_image", "r.png"},
                    {"prompt", "p"},
                    {"declared_type", "animal"},
                    {"declared_style", "cartoon"},
                    {"transformation_axes", std::vector<std::string>(classes.begin(), classes.begin() + counts[i])}}
                   .dump() +
               "\n";
  fs_util::write_file_atomic(dir / "crafted.jsonl", crafted);
  const auto mean = manifest_stats(load_manifest(dir / "crafted.jsonl")).mean_axes;
  if (!(mean == Rational(27, 5)) || mean.str() != "27/5") o.fail("mean axes " + mean.str() + " != 27/5");
  if (o.pass) o.detail = "1078 entries / 154 subjects; crafted fixture mean axes = 27/5 exactly";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"end-to-end determinism", ac1_determinism},  {"pearson oracle equivalence", ac2_pearson},
      {"rule-engine monotonicity", ac3_monotonicity}, {"context invariance", ac4_context},
      {"EKB integrity", ac5_ekb},                   {"table-shape reproduction", ac6_tables},
      {"parse robustness", ac7_parsing},            {"cache correctness", ac8_cache},
      {"manifest statistics", ac9_manifest},
  };
  spdlog::set_level(spdlog::level::err);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.fail(std::string("threw: ") + e.what());
    }
    if (!o.pass) ++failed;
    std::cout << "AC" << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
