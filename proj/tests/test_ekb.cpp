// SPDX-License-Identifier: Apache-2.0
#include <set>

#include <gtest/gtest.h>

#include "charis/ekb.hpp"
#include "support.hpp"

using namespace charis;
using charis::testing::default_ekb_json;
using charis::testing::default_kb;
using charis::testing::TempDir;

namespace {

ValidationReport validate_doc(const json& doc) { return validate_ekb(parse_ekb(doc)); }

std::vector<std::string> ids(const std::vector<AttributeSpec>& v) {
  std::vector<std::string> out;
  for (const auto& a : v) out.push_back(a.id);
  return out;
}

}  // namespace

TEST(Ekb, DefaultIsValid) {
  const auto report = validate_ekb(default_kb());
  EXPECT_TRUE(report.ok()) << ValidationError(report).what();
  EXPECT_FALSE(default_kb().version.empty());
}

TEST(Ekb, EmptyFileIsSchemaError) {
  TempDir dir;
  fs_util::write_file_atomic(dir / "empty.json", "  \n");
  EXPECT_THROW(load_ekb(dir / "empty.json"), SchemaError);
  fs_util::write_file_atomic(dir / "bad.json", "{");
  EXPECT_THROW(load_ekb(dir / "bad.json"), SchemaError);
  EXPECT_THROW(parse_ekb(json::array()), SchemaError);
}

TEST(Ekb, MissingFeatureReferenceIsNamed) {
  auto doc = default_ekb_json();
  doc["attributes"][0]["feature_ids"].push_back("f_missing");
  TempDir dir;
  fs_util::write_file_atomic(dir / "kb.json", doc.dump());
  try {
    load_ekb(dir / "kb.json");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_TRUE(e.report().has("unknown_feature_reference"));
    EXPECT_NE(std::string(e.what()).find("f_missing"), std::string::npos);
  }
}

TEST(Ekb, NonAscendingThresholds) {
  auto doc = default_ekb_json();
  doc["rules"]["thresholds"] = {5, 3, 8};
  EXPECT_TRUE(validate_doc(doc).has("thresholds_not_ascending"));
  doc["rules"]["thresholds"] = {0, 3, 8};
  EXPECT_TRUE(validate_doc(doc).has("thresholds_first_nonpositive"));
}

TEST(Ekb, PenaltyShape) {
  auto doc = default_ekb_json();
  doc["rules"]["penalty"]["major"] = {{"minor", 5}, {"major", 2}};
  EXPECT_TRUE(validate_doc(doc).has("penalty_not_monotone"));
  doc["rules"]["penalty"]["major"] = {{"minor", 1}, {"major", 2.5}};
  EXPECT_THROW(parse_ekb(doc), SchemaError);
  auto kb = default_kb();
  kb.rules.penalty[static_cast<std::size_t>(Tier::minor)][0] = 1;
  EXPECT_TRUE(validate_ekb(kb).has("penalty_none_nonzero"));
}

TEST(Ekb, UncoveredVersusDeclaredUnsupported) {
  auto doc = default_ekb_json();
  ASSERT_EQ(doc["taxonomy"]["unsupported"].size(), 1u);
  doc["taxonomy"]["unsupported"] = json::array();
  const auto report = validate_doc(doc);
  ASSERT_TRUE(report.has("uncovered_type_style"));
  // Declaring a covered combination unsupported is also an error.
  doc = default_ekb_json();
  doc["taxonomy"]["unsupported"].push_back({{"type", "animal"}, {"style", "cartoon"}});
  EXPECT_TRUE(validate_doc(doc).has("unsupported_but_covered"));
}

TEST(Ekb, StructuralFindings) {
  auto doc = default_ekb_json();
  doc["features"].push_back(doc["features"][0]);
  EXPECT_TRUE(validate_doc(doc).has("duplicate_feature_id"));

  doc = default_ekb_json();
  doc["features"][0]["attribute_id"] = "nowhere";
  EXPECT_TRUE(validate_doc(doc).has("unknown_attribute_reference"));

  doc = default_ekb_json();
  doc["attributes"][0]["id"] = "Bad Id";
  EXPECT_TRUE(validate_doc(doc).has("invalid_token"));

  doc = default_ekb_json();
  doc["taxonomy"]["styles"].erase(0);
  EXPECT_TRUE(validate_doc(doc).has("taxonomy_incomplete"));
}

TEST(Ekb, AnimalCartoonAttributes) {
  const auto attrs = ids(attributes_for(default_kb(), SubjectType::animal, Style::cartoon));
  const std::set<std::string> set(attrs.begin(), attrs.end());
  EXPECT_TRUE(set.count("species_specific_element"));
  EXPECT_TRUE(set.count("cartoon_style"));
}

TEST(Ekb, DeclaredUnsupportedQueryThrows) {
  const auto& kb = default_kb();
  ASSERT_FALSE(kb.taxonomy.unsupported.empty());
  const auto ts = kb.taxonomy.unsupported.front();
  EXPECT_THROW(attributes_for(kb, ts.type, ts.style), UnsupportedCombination);
}

TEST(Ekb, SingletonAttributeFromCustomKb) {
  auto doc = default_ekb_json();
  // Keep only one attribute applicable to humanoid/vector.
  for (auto& a : doc["attributes"]) {
    auto& app = a["applicability"];
    json kept = json::array();
    for (const auto& ts : app)
      if (!(ts["type"] == "humanoid" && ts["style"] == "vector")) kept.push_back(ts);
    app = kept;
  }
  doc["attributes"][0]["applicability"].push_back({{"type", "humanoid"}, {"style", "vector"}});
  const auto kb = parse_ekb(doc);
  const auto attrs = attributes_for(kb, SubjectType::humanoid, Style::vector);
  ASSERT_EQ(attrs.size(), 1u);
  EXPECT_EQ(attrs[0].id, doc["attributes"][0]["id"].get<std::string>());
}

TEST(Ekb, FeaturesForOrderingAndErrors) {
  const auto kb = charis::testing::small_kb();
  const auto f = features_for(kb, {"cartoon_style", "species_specific_element"});
  std::vector<std::string> got;
  for (const auto& x : f) got.push_back(x.id);
  EXPECT_EQ(got, (std::vector<std::string>{"line_art", "color_palette", "ear_shape", "muzzle_shape", "tail_shape"}));
  EXPECT_TRUE(features_for(kb, {}).empty());
  EXPECT_THROW(features_for(kb, {"nope"}), UnknownAttribute);
  // Repeating an attribute does not repeat its features.
  EXPECT_EQ(features_for(kb, {"coat", "coat"}).size(), 3u);
}

TEST(Ekb, SerializeRoundTrip) {
  const auto& kb = default_kb();
  const auto again = parse_ekb(json::parse(serialize_ekb(kb)));
  EXPECT_EQ(again, kb);
  EXPECT_EQ(serialize_ekb(again), serialize_ekb(kb));
}

TEST(Ekb, EnumerationProperties) {
  const auto& kb = default_kb();
  for (auto ts : all_type_styles()) {
    if (kb.is_declared_unsupported(ts)) continue;
    const auto attrs = attributes_for(kb, ts.type, ts.style);
    EXPECT_FALSE(attrs.empty()) << ts.str();
    std::set<std::string> seen;
    for (const auto& a : attrs) {
      EXPECT_TRUE(seen.insert(a.id).second) << "duplicate " << a.id;
      EXPECT_TRUE(a.applies_to(ts));
    }
    std::vector<std::string> attr_ids(seen.begin(), seen.end());
    for (const auto& f : features_for(kb, attr_ids)) {
      EXPECT_TRUE(seen.count(f.attribute_id)) << f.id << " escapes its attributes";
      EXPECT_NE(kb.find_feature(f.id), nullptr);
    }
  }
}

TEST(Ekb, ContextClassesSortedAndRulesDefaults) {
  const auto& r = default_kb().rules;
  EXPECT_TRUE(std::is_sorted(r.context_classes.begin(), r.context_classes.end()));
  EXPECT_EQ(r.critical_override, ConsistencyCategory::partial);
  EXPECT_EQ(r.thresholds, (std::array<int, 3>{1, 3, 7}));
}
