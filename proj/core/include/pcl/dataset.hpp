#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pcl/diff.hpp"
#include "pcl/losses.hpp"
#include "pcl/prefix.hpp"
#include "pcl/tokenizer.hpp"

namespace pcl {

enum class DiffSide { kRemoved, kAdded };

struct SidedLineRange {
  DiffSide side;
  LineRange range;
};

// One security fix extracted from a commit: the version before the fix is
// the insecure program, the version after is the secure one.
struct CodePairRecord {
  std::string pair_id;  // derived from content when the input omits it
  std::string insecure_source;
  std::string secure_source;
  std::string cwe;       // "CWE-<digits>"
  std::string language;  // "python" | "c_cpp"
  std::optional<std::vector<SidedLineRange>> commit_line_diff;
  bool approved = true;

  void validate() const;
};

// The unit consumed by the losses: token sequence, aligned binary mask, and
// the property label. Every pair_id appears exactly twice in a dataset, once
// per property.
struct TrainingExample {
  std::string pair_id;
  Property property = Property::kSec;
  TokenSequence tokens;
  MaskVector mask;
  std::string cwe;
  std::string language;
  std::string provenance;  // build notes: truncation, fallback line diff, ...
};

enum class MaskStrategy { kProgram, kLine, kChar, kMix };

const char* to_string(MaskStrategy s);
MaskStrategy mask_strategy_from_string(std::string_view name);

// Mask bit is 1 iff the token's character interval overlaps any character of
// a changed line on the requested side. Falls back to an internally computed
// line diff when the record carries no metadata (noted via *used_fallback).
MaskVector line_mask(std::string_view source, const CodePairRecord& record,
                     DiffSide side, const Tokenizer& tokenizer,
                     bool* used_fallback = nullptr);

// Mask bit is 1 iff the token's character interval intersects any span.
MaskVector char_mask(std::string_view source, const CharSpanSet& spans,
                     const Tokenizer& tokenizer);

struct BuildOptions {
  std::size_t max_tokens = 1024;
  bool strict = false;  // skip over-length records instead of truncating
};

// Builds the (secure, insecure) example pair under the given strategy:
//   program  all-ones masks on both sides
//   line     changed-line masks per side
//   char     changed-character masks per side (an insertion-only fix leaves
//            the insecure mask all zero)
//   mix      char mask for the secure example, line mask for the insecure one
// Returns nullopt when the record is skipped (unapproved, or over-length
// under strict mode).
std::optional<std::pair<TrainingExample, TrainingExample>> build_pair(
    const CodePairRecord& record, const Tokenizer& tokenizer, MaskStrategy strategy,
    const BuildOptions& options = {});

struct SplitResult {
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> validation;
};

// Deterministic pair-atomic split: both versions of a pair land on the same
// side. `ratio` is the training fraction, applied to whole pairs with
// round-half-up.
SplitResult split_dataset(const std::vector<TrainingExample>& examples,
                          double ratio, std::uint64_t seed);

// JSONL IO. Records: one CodePairRecord object per line. Examples: objects
// with pair_id, property, tokenizer_id, tokens, mask, cwe, language.
std::vector<CodePairRecord> read_pair_records(const std::filesystem::path& file);
void write_pair_records(const std::vector<CodePairRecord>& records,
                        const std::filesystem::path& file);
void write_examples(const std::vector<TrainingExample>& examples,
                    const std::string& tokenizer_id,
                    const std::filesystem::path& file);
std::vector<TrainingExample> read_examples(const std::filesystem::path& file,
                                           std::string* tokenizer_id = nullptr);

}  // namespace pcl
