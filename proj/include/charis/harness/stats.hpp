// SPDX-License-Identifier: Apache-2.0
#pragma once

// The three statistics tables as one JSON document plus aligned text.

#include <string>

#include "charis/statistics.hpp"

namespace charis::harness {

struct StatsReport {
  json doc;
  std::string text;
};

inline StatsReport build_stats_report(const StatsInput& input, const ScoreMap& scores = {}) {
  const auto data = join(input);
  if (data.records.empty()) throw SchemaError("no (model, entry) pair has both human ratings and a prediction");
  const auto by_model = aggregate_by_model(data, scores);
  const auto by_cs = aggregate_by_category_style(data, scores);
  const auto means = mean_scores_by_model(data, scores);
  StatsReport r;
  r.doc = {{"records", data.records.size()},
           {"metrics", data.metrics},
           {"by_model", to_json(by_model)},
           {"by_category_style", to_json(by_cs)},
           {"mean_scores", to_json(means)}};
  r.text = "Correlations by model\n" + render_text(by_model) + "\nCorrelations by category and style\n" +
           render_text(by_cs) + "\nMean normalized scores by model\n" + render_text(means);
  return r;
}

}  // namespace charis::harness
