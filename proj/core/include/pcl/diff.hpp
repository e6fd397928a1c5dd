#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

namespace pcl {

// Half-open character interval [begin, end) into one source text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Sorted, non-overlapping spans.
struct CharSpanSet {
  std::vector<CharSpan> spans;

  bool empty() const { return spans.empty(); }
  std::size_t total_chars() const;
  bool intersects(std::size_t begin, std::size_t end) const;
  void validate(std::size_t text_size) const;

  // The text with the spanned characters removed.
  std::string residual(std::string_view text) const;
};

struct CharDiff {
  CharSpanSet before;  // characters only present in the old text
  CharSpanSet after;   // characters only present in the new text
};

struct CharDiffOptions {
  // Texts whose differing middles exceed this run through a line-anchored
  // approximation instead of the exact quadratic subsequence match. The
  // residual-equality postcondition holds on both paths.
  std::size_t exact_limit = 5000;
};

// Character-level diff. Postcondition: removing the before-spans from
// `before` and the after-spans from `after` yields the same string.
CharDiff char_diff(std::string_view before, std::string_view after,
                   const CharDiffOptions& options = {});

// 1-based inclusive line range.
struct LineRange {
  std::size_t first = 0;
  std::size_t last = 0;
};

// Character interval covered by the given lines (terminating newlines
// included). Lines beyond the text clamp to its end.
CharSpanSet line_range_chars(std::string_view text,
                             const std::vector<LineRange>& ranges);

// Line-level diff computed internally (used when commit metadata is absent):
// returns the changed line numbers on each side.
struct LineDiff {
  std::vector<LineRange> before;
  std::vector<LineRange> after;
};

LineDiff line_diff(std::string_view before, std::string_view after);

}  // namespace pcl
