// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace charis {

/// Base of every error raised by the library. `code()` is a stable
/// lower_snake_case identifier suitable for reports and HTTP payloads.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define CHARIS_DEFINE_ERROR(Name, code_str)                               \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& message) : Error(code_str, message) {} \
  };

// io / documents
CHARIS_DEFINE_ERROR(IoError, "io_error")
CHARIS_DEFINE_ERROR(SchemaError, "schema_error")
CHARIS_DEFINE_ERROR(TemplateError, "template_error")
CHARIS_DEFINE_ERROR(ConfigError, "config_error")
CHARIS_DEFINE_ERROR(ContractViolation, "contract_violation")

// knowledge base queries
CHARIS_DEFINE_ERROR(UnsupportedCombination, "unsupported_combination")
CHARIS_DEFINE_ERROR(UnknownAttribute, "unknown_attribute")
CHARIS_DEFINE_ERROR(UnknownFeature, "unknown_feature")

// backends
CHARIS_DEFINE_ERROR(BackendUnavailable, "backend_unavailable")
CHARIS_DEFINE_ERROR(BackendError, "backend_error")
CHARIS_DEFINE_ERROR(AuthError, "auth_error")
CHARIS_DEFINE_ERROR(MockMiss, "mock_miss")
CHARIS_DEFINE_ERROR(CacheCorrupt, "cache_corrupt")

// reply parsing
CHARIS_DEFINE_ERROR(ParseAmbiguous, "parse_ambiguous")
CHARIS_DEFINE_ERROR(ParseMiss, "parse_miss")
CHARIS_DEFINE_ERROR(ChecklistParseError, "checklist_parse_error")
CHARIS_DEFINE_ERROR(AnalysisParseError, "analysis_parse_error")
CHARIS_DEFINE_ERROR(CategorizationParseError, "categorization_parse_error")
CHARIS_DEFINE_ERROR(SynthParseError, "synth_parse_error")

// pipeline
CHARIS_DEFINE_ERROR(AllFeaturesFailed, "all_features_failed")

// benchmark
CHARIS_DEFINE_ERROR(DuplicateEntryId, "duplicate_entry_id")
CHARIS_DEFINE_ERROR(EmptyManifest, "empty_manifest")
CHARIS_DEFINE_ERROR(DecodeError, "decode_error")

// statistics
CHARIS_DEFINE_ERROR(LengthMismatch, "length_mismatch")
CHARIS_DEFINE_ERROR(DegenerateInput, "degenerate_input")
CHARIS_DEFINE_ERROR(InsufficientOverlap, "insufficient_overlap")
CHARIS_DEFINE_ERROR(MissingRater, "missing_rater")

#undef CHARIS_DEFINE_ERROR

}  // namespace charis
