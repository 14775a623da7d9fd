// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "charis/error.hpp"

namespace charis {

// Closed vocabularies shared by every module. Each enum has a token table
// in declaration order; the order of ConsistencyCategory is significant.

enum class SubjectType : std::uint8_t { humanoid, animal, anthropomorphic, animated_inanimate };
enum class Style : std::uint8_t { photo_realistic, vector, cartoon };
enum class TransformationClass : std::uint8_t {
  pose_variation,
  facial_expression,
  viewpoint_change,
  occlusion_pattern,
  lighting_condition,
  background_context,
  stylistic_interpretation,
};
enum class Tier : std::uint8_t { critical, major, minor };
enum class Magnitude : std::uint8_t { none, minor, major };
enum class Provenance : std::uint8_t { pose_induced, style_induced, intrinsic };

/// Ordered worst to best: mismatch < partial < near_exact < exact.
enum class ConsistencyCategory : std::uint8_t { mismatch, partial, near_exact, exact };

template <typename E>
struct EnumTokens;

template <>
struct EnumTokens<SubjectType> {
  static constexpr std::string_view kind = "subject type";
  static constexpr std::array<std::string_view, 4> tokens = {"humanoid", "animal", "anthropomorphic",
                                                            "animated_inanimate"};
};
template <>
struct EnumTokens<Style> {
  static constexpr std::string_view kind = "style";
  static constexpr std::array<std::string_view, 3> tokens = {"photo_realistic", "vector", "cartoon"};
};
template <>
struct EnumTokens<TransformationClass> {
  static constexpr std::string_view kind = "transformation class";
  static constexpr std::array<std::string_view, 7> tokens = {
      "pose_variation",     "facial_expression",  "viewpoint_change",        "occlusion_pattern",
      "lighting_condition", "background_context", "stylistic_interpretation"};
};
template <>
struct EnumTokens<Tier> {
  static constexpr std::string_view kind = "tier";
  static constexpr std::array<std::string_view, 3> tokens = {"critical", "major", "minor"};
};
template <>
struct EnumTokens<Magnitude> {
  static constexpr std::string_view kind = "magnitude";
  static constexpr std::array<std::string_view, 3> tokens = {"none", "minor", "major"};
};
template <>
struct EnumTokens<Provenance> {
  static constexpr std::string_view kind = "provenance";
  static constexpr std::array<std::string_view, 3> tokens = {"pose_induced", "style_induced", "intrinsic"};
};
template <>
struct EnumTokens<ConsistencyCategory> {
  static constexpr std::string_view kind = "consistency category";
  static constexpr std::array<std::string_view, 4> tokens = {"mismatch", "partial", "near_exact", "exact"};
};

template <typename E>
constexpr std::size_t enum_count() {
  return EnumTokens<E>::tokens.size();
}

template <typename E>
constexpr std::array<E, EnumTokens<E>::tokens.size()> all_values() {
  std::array<E, EnumTokens<E>::tokens.size()> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<E>(i);
  return out;
}

template <typename E>
constexpr std::string_view to_token(E value) {
  return EnumTokens<E>::tokens.at(static_cast<std::size_t>(value));
}

template <typename E>
constexpr std::optional<E> try_from_token(std::string_view token) {
  for (std::size_t i = 0; i < EnumTokens<E>::tokens.size(); ++i)
    if (EnumTokens<E>::tokens[i] == token) return static_cast<E>(i);
  return std::nullopt;
}

/// Strict parse: anything outside the closed vocabulary is a SchemaError.
template <typename E>
E from_token(std::string_view token) {
  if (auto v = try_from_token<E>(token)) return *v;
  throw SchemaError("unknown " + std::string(EnumTokens<E>::kind) + " token '" + std::string(token) + "'");
}

template <typename E>
std::vector<std::string> all_tokens() {
  return {EnumTokens<E>::tokens.begin(), EnumTokens<E>::tokens.end()};
}

/// (SubjectType, Style) cell of the 4x3 combination grid.
struct TypeStyle {
  SubjectType type{};
  Style style{};

  friend bool operator==(const TypeStyle&, const TypeStyle&) = default;
  friend auto operator<=>(const TypeStyle&, const TypeStyle&) = default;

  std::string str() const { return std::string(to_token(type)) + "/" + std::string(to_token(style)); }
};

inline std::vector<TypeStyle> all_type_styles() {
  std::vector<TypeStyle> out;
  for (auto t : all_values<SubjectType>())
    for (auto s : all_values<Style>()) out.push_back({t, s});
  return out;
}

}  // namespace charis
