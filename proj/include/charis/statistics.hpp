// SPDX-License-Identifier: Apache-2.0
#pragma once

// Rating normalization, Pearson correlation, inter-annotator agreement and
// the per-model / per-(type, style) correlation and mean-score tables.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <tuple>
#include <string>
#include <vector>

#include "charis/aggregation.hpp"
#include "charis/error.hpp"
#include "charis/types.hpp"
#include "charis/util.hpp"

namespace charis {

inline constexpr std::size_t kMinCellSize = 3;

/// Product-moment correlation, computed from mean-centred sums.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw LengthMismatch("pearson: lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  if (x.size() < 2) throw LengthMismatch("pearson needs at least two points");
  const auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) throw DegenerateInput("pearson: constant vector has zero variance");

  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw DegenerateInput("pearson: zero variance after centring");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Ratings

struct RatingSet {
  std::string rater_id;
  std::map<std::string, ConsistencyCategory> ratings;  // entry_id -> category
};

inline std::map<std::string, double> normalize_ratings(const RatingSet& rs, const ScoreMap& map = {}) {
  std::map<std::string, double> out;
  for (const auto& [id, c] : rs.ratings) out.emplace(id, normalize(c, map));
  return out;
}

/// Pearson over the normalized scores of the entries both raters labelled.
inline double agreement(const RatingSet& a, const RatingSet& b, const ScoreMap& map = {}) {
  std::vector<double> xa, xb;
  for (const auto& [id, c] : a.ratings) {
    const auto it = b.ratings.find(id);
    if (it == b.ratings.end()) continue;
    xa.push_back(normalize(c, map));
    xb.push_back(normalize(it->second, map));
  }
  if (xa.size() < kMinCellSize)
    throw InsufficientOverlap(a.rater_id + " and " + b.rater_id + " share " + std::to_string(xa.size()) +
                              " entries; need " + std::to_string(kMinCellSize));
  return pearson(xa, xb);
}

/// Method output for one (model, entry) pair.
struct Prediction {
  std::string entry_id;
  std::string model;
  SubjectType declared_type{};
  Style declared_style{};
  ConsistencyCategory category{};
};

struct BaselineScore {
  std::string entry_id;
  std::optional<std::string> model;  // absent: applies to every model
  std::string metric;
  double score = 0;
};

struct StatsInput {
  std::vector<Prediction> predictions;
  std::map<std::string, std::vector<RatingSet>> raters_by_model;
  std::vector<BaselineScore> baselines;
};

// ---------------------------------------------------------------------------
// Loaders

namespace stats_detail {

inline std::string req_str(const json& obj, const char* key) {
  if (!obj.contains(key) || !obj.at(key).is_string() || obj.at(key).get<std::string>().empty())
    throw SchemaError(std::string("field '") + key + "' must be a non-empty string");
  return obj.at(key).get<std::string>();
}

}  // namespace stats_detail

/// Ratings JSONL: {entry_id, rater_id, category, model}. Adds to `input`.
inline void load_ratings(const std::filesystem::path& path, StatsInput& input) {
  using stats_detail::req_str;
  fs_util::for_each_jsonl(path, [&](std::size_t line_no, const json& obj) {
    const auto entry = req_str(obj, "entry_id");
    const auto rater = req_str(obj, "rater_id");
    const auto model = req_str(obj, "model");
    const auto category = from_token<ConsistencyCategory>(req_str(obj, "category"));
    auto& sets = input.raters_by_model[model];
    auto it = std::find_if(sets.begin(), sets.end(), [&](const RatingSet& r) { return r.rater_id == rater; });
    if (it == sets.end()) {
      sets.push_back({rater, {}});
      it = std::prev(sets.end());
    }
    if (!it->ratings.emplace(entry, category).second)
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": rater '" + rater + "' rated '" + entry +
                        "' twice for model '" + model + "'");
  });
}

/// Predictions JSONL as written by `charis eval`. Records without a category
/// (hard failures) are skipped.
inline void load_predictions(const std::filesystem::path& path, StatsInput& input) {
  using stats_detail::req_str;
  std::set<std::pair<std::string, std::string>> seen;
  fs_util::for_each_jsonl(path, [&](std::size_t line_no, const json& obj) {
    if (!obj.contains("category") || obj.at("category").is_null()) return;
    Prediction p;
    p.entry_id = req_str(obj, "entry_id");
    p.model = req_str(obj, "model");
    p.declared_type = from_token<SubjectType>(req_str(obj, "declared_type"));
    p.declared_style = from_token<Style>(req_str(obj, "declared_style"));
    p.category = from_token<ConsistencyCategory>(req_str(obj, "category"));
    if (!seen.emplace(p.model, p.entry_id).second)
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": duplicate prediction for (" + p.model +
                        ", " + p.entry_id + ")");
    input.predictions.push_back(std::move(p));
  });
}

/// Baselines JSONL: {entry_id, metric, score, model?} with score in [0,1].
inline void load_baselines(const std::filesystem::path& path, StatsInput& input) {
  using stats_detail::req_str;
  fs_util::for_each_jsonl(path, [&](std::size_t, const json& obj) {
    BaselineScore b;
    b.entry_id = req_str(obj, "entry_id");
    b.metric = req_str(obj, "metric");
    if (!text::is_token(b.metric)) throw SchemaError("metric '" + b.metric + "' must be a lower_snake_case token");
    if (obj.contains("model") && !obj.at("model").is_null()) b.model = req_str(obj, "model");
    if (!obj.contains("score") || !obj.at("score").is_number()) throw SchemaError("field 'score' must be a number");
    b.score = obj.at("score").get<double>();
    if (!(b.score >= 0.0 && b.score <= 1.0)) throw SchemaError("baseline score must lie in [0, 1]");
    input.baselines.push_back(std::move(b));
  });
}

// ---------------------------------------------------------------------------
// Joining

/// One (model, entry) pair with both human ratings and the method rating.
struct JoinedRecord {
  std::string model;
  std::string entry_id;
  SubjectType type{};
  Style style{};
  ConsistencyCategory h1{}, h2{};  // raters in rater_id order
  ConsistencyCategory g{};
  std::map<std::string, double> baselines;  // metric -> score

  Rational human_mean(const ScoreMap& map = {}) const {
    return (normalized_rational(h1, map) + normalized_rational(h2, map)) / 2;
  }
};

struct JoinedData {
  std::vector<JoinedRecord> records;  // sorted by (model, entry_id)
  std::vector<std::string> metrics;   // sorted
};

/// Joins predictions with both raters of their model. Pairs not rated by both
/// raters are left out. Every model with predictions needs exactly two raters.
inline JoinedData join(const StatsInput& in) {
  JoinedData out;
  std::set<std::string> metrics;
  for (const auto& b : in.baselines) metrics.insert(b.metric);
  out.metrics.assign(metrics.begin(), metrics.end());

  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> scoped;  // (model, entry)
  std::map<std::string, std::map<std::string, double>> unscoped;                      // entry
  for (const auto& b : in.baselines) {
    auto& slot = b.model ? scoped[{*b.model, b.entry_id}] : unscoped[b.entry_id];
    if (!slot.emplace(b.metric, b.score).second)
      throw SchemaError("duplicate baseline '" + b.metric + "' for entry '" + b.entry_id + "'");
  }

  for (const auto& p : in.predictions) {
    const auto it = in.raters_by_model.find(p.model);
    const std::size_t raters = it == in.raters_by_model.end() ? 0 : it->second.size();
    if (raters < 2)
      throw MissingRater("model '" + p.model + "' has " + std::to_string(raters) + " rater(s); two are required");
    if (raters > 2)
      throw SchemaError("model '" + p.model + "' has " + std::to_string(raters) + " raters; exactly two are expected");
    std::vector<const RatingSet*> sets{&it->second[0], &it->second[1]};
    std::sort(sets.begin(), sets.end(), [](auto* a, auto* b) { return a->rater_id < b->rater_id; });
    const auto r1 = sets[0]->ratings.find(p.entry_id);
    const auto r2 = sets[1]->ratings.find(p.entry_id);
    if (r1 == sets[0]->ratings.end() || r2 == sets[1]->ratings.end()) continue;

    JoinedRecord r{p.model, p.entry_id, p.declared_type, p.declared_style, r1->second, r2->second, p.category, {}};
    if (auto u = unscoped.find(p.entry_id); u != unscoped.end()) r.baselines = u->second;
    if (auto s = scoped.find({p.model, p.entry_id}); s != scoped.end())
      for (const auto& [m, v] : s->second) r.baselines[m] = v;
    out.records.push_back(std::move(r));
  }
  std::sort(out.records.begin(), out.records.end(), [](const JoinedRecord& a, const JoinedRecord& b) {
    return std::tie(a.model, a.entry_id) < std::tie(b.model, b.entry_id);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Tables

struct CorrelationCell {
  std::optional<double> r;
  std::size_t n = 0;
  std::string status;  // "ok", "insufficient" (n < 3) or "undefined" (constant input)
};

struct CorrelationRow {
  std::vector<std::string> key;
  std::size_t n = 0;
  std::map<std::string, CorrelationCell> cells;
};

struct CorrelationTable {
  std::string grouping;  // "by_model" or "by_category_style"
  std::vector<std::string> key_columns;
  std::vector<std::string> columns;
  std::vector<CorrelationRow> rows;
};

struct MeanRow {
  std::string model;
  std::size_t n = 0;
  std::map<std::string, std::optional<double>> values;
};

struct MeanTable {
  std::vector<std::string> columns;
  std::vector<MeanRow> rows;
};

inline const char* kHumanHuman = "H-H";
inline const char* kMethodHuman = "G-H";

inline std::string baseline_column(const std::string& metric) { return metric + "-H"; }
inline std::string mean_column(const std::string& metric) { return metric + "_bar"; }

inline CorrelationCell correlate(const std::vector<double>& x, const std::vector<double>& y) {
  CorrelationCell c;
  c.n = x.size();
  if (c.n < kMinCellSize) {
    c.status = "insufficient";
    return c;
  }
  try {
    c.r = pearson(x, y);
    c.status = "ok";
  } catch (const DegenerateInput&) {
    c.status = "undefined";
  }
  return c;
}

namespace stats_detail {

template <typename KeyFn>
CorrelationTable correlation_table(const JoinedData& data, std::string grouping, std::vector<std::string> key_columns,
                                   KeyFn key_of, const ScoreMap& map) {
  CorrelationTable t;
  t.grouping = std::move(grouping);
  t.key_columns = std::move(key_columns);
  t.columns = {kHumanHuman, kMethodHuman};
  for (const auto& m : data.metrics) t.columns.push_back(baseline_column(m));

  std::map<std::vector<std::string>, std::vector<const JoinedRecord*>> groups;
  for (const auto& r : data.records) groups[key_of(r)].push_back(&r);

  for (const auto& [key, recs] : groups) {
    CorrelationRow row;
    row.key = key;
    row.n = recs.size();
    std::vector<double> h1, h2, hm, g;
    for (const auto* r : recs) {
      h1.push_back(normalize(r->h1, map));
      h2.push_back(normalize(r->h2, map));
      hm.push_back(r->human_mean(map).to_double());
      g.push_back(normalize(r->g, map));
    }
    row.cells[kHumanHuman] = correlate(h1, h2);
    row.cells[kMethodHuman] = correlate(g, hm);
    for (const auto& m : data.metrics) {
      std::vector<double> xs, hs;
      for (const auto* r : recs)
        if (auto it = r->baselines.find(m); it != r->baselines.end()) {
          xs.push_back(it->second);
          hs.push_back(r->human_mean(map).to_double());
        }
      row.cells[baseline_column(m)] = correlate(xs, hs);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace stats_detail

inline CorrelationTable aggregate_by_model(const JoinedData& data, const ScoreMap& map = {}) {
  return stats_detail::correlation_table(
      data, "by_model", {"model"}, [](const JoinedRecord& r) { return std::vector<std::string>{r.model}; }, map);
}

inline CorrelationTable aggregate_by_category_style(const JoinedData& data, const ScoreMap& map = {}) {
  return stats_detail::correlation_table(
      data, "by_category_style", {"type", "style"},
      [](const JoinedRecord& r) {
        return std::vector<std::string>{std::string(to_token(r.type)), std::string(to_token(r.style))};
      },
      map);
}

/// Category means are exact rationals until the final conversion.
inline MeanTable mean_scores_by_model(const JoinedData& data, const ScoreMap& map = {}) {
  MeanTable t;
  t.columns = {"h_bar", "g_bar"};
  for (const auto& m : data.metrics) t.columns.push_back(mean_column(m));
  std::map<std::string, std::vector<const JoinedRecord*>> groups;
  for (const auto& r : data.records) groups[r.model].push_back(&r);
  for (const auto& [model, recs] : groups) {
    MeanRow row;
    row.model = model;
    row.n = recs.size();
    Rational h, g;
    for (const auto* r : recs) {
      h = h + r->human_mean(map);
      g = g + normalized_rational(r->g, map);
    }
    const auto n = static_cast<std::int64_t>(recs.size());
    row.values["h_bar"] = (h / n).to_double();
    row.values["g_bar"] = (g / n).to_double();
    for (const auto& m : data.metrics) {
      double sum = 0;
      std::size_t k = 0;
      for (const auto* r : recs)
        if (auto it = r->baselines.find(m); it != r->baselines.end()) {
          sum += it->second;
          ++k;
        }
      row.values[mean_column(m)] = k ? std::optional<double>(sum / static_cast<double>(k)) : std::nullopt;
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Rendering

inline json to_json(const CorrelationTable& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json j;
    for (std::size_t i = 0; i < t.key_columns.size(); ++i) j[t.key_columns[i]] = row.key[i];
    j["n"] = row.n;
    for (const auto& col : t.columns) {
      const auto& c = row.cells.at(col);
      j[col] = {{"r", c.r ? json(*c.r) : json(nullptr)}, {"n", c.n}, {"status", c.status}};
    }
    rows.push_back(std::move(j));
  }
  return {{"grouping", t.grouping}, {"key_columns", t.key_columns}, {"columns", t.columns}, {"rows", rows}};
}

inline json to_json(const MeanTable& t) {
  json rows = json::array();
  for (const auto& row : t.rows) {
    json j = {{"model", row.model}, {"n", row.n}};
    for (const auto& col : t.columns) {
      const auto& v = row.values.at(col);
      j[col] = v ? json(*v) : json(nullptr);
    }
    rows.push_back(std::move(j));
  }
  return {{"key_columns", {"model"}}, {"columns", t.columns}, {"rows", rows}};
}

namespace stats_detail {

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::string render_grid(const std::vector<std::vector<std::string>>& grid) {
  std::vector<std::size_t> width;
  for (const auto& row : grid)
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], row[i].size());
    }
  std::string out;
  for (const auto& row : grid) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) line += "  ";
      line += row[i] + std::string(width[i] - row[i].size(), ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

}  // namespace stats_detail

/// Aligned text; insufficient cells print "n<3", undefined ones "undef".
inline std::string render_text(const CorrelationTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header = t.key_columns;
  header.insert(header.end(), t.columns.begin(), t.columns.end());
  header.push_back("n");
  grid.push_back(header);
  for (const auto& row : t.rows) {
    std::vector<std::string> line = row.key;
    for (const auto& col : t.columns) {
      const auto& c = row.cells.at(col);
      line.push_back(c.r ? stats_detail::fmt3(*c.r) : (c.status == "insufficient" ? "n<3" : "undef"));
    }
    line.push_back(std::to_string(row.n));
    grid.push_back(std::move(line));
  }
  return stats_detail::render_grid(grid);
}

inline std::string render_text(const MeanTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"model"};
  header.insert(header.end(), t.columns.begin(), t.columns.end());
  header.push_back("n");
  grid.push_back(header);
  for (const auto& row : t.rows) {
    std::vector<std::string> line{row.model};
    for (const auto& col : t.columns) {
      const auto& v = row.values.at(col);
      line.push_back(v ? stats_detail::fmt3(*v) : "-");
    }
    line.push_back(std::to_string(row.n));
    grid.push_back(std::move(line));
  }
  return stats_detail::render_grid(grid);
}

}  // namespace charis
