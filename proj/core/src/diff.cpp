#include "pcl/diff.hpp"

#include <algorithm>
#include <string>

#include "pcl/errors.hpp"

namespace pcl {

std::size_t CharSpanSet::total_chars() const {
  std::size_t n = 0;
  for (const CharSpan& s : spans) n += s.end - s.begin;
  return n;
}

bool CharSpanSet::intersects(std::size_t begin, std::size_t end) const {
  for (const CharSpan& s : spans) {
    if (s.begin >= end) break;
    if (s.end > begin && s.begin < end) return true;
  }
  return false;
}

void CharSpanSet::validate(std::size_t text_size) const {
  std::size_t prev_end = 0;
  bool first = true;
  for (const CharSpan& s : spans) {
    if (s.begin >= s.end) throw ContractError("char span must be non-empty");
    if (s.end > text_size) throw ContractError("char span exceeds text bounds");
    if (!first && s.begin < prev_end) {
      throw ContractError("char spans must be sorted and non-overlapping");
    }
    prev_end = s.end;
    first = false;
  }
}

std::string CharSpanSet::residual(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  for (const CharSpan& s : spans) {
    out.append(text.substr(pos, s.begin - pos));
    pos = s.end;
  }
  out.append(text.substr(pos));
  return out;
}

namespace {

enum class Op { kKeep, kDel, kIns };

struct Hunk {
  Op op;
  std::string text;
};

// Forward LCS score row for a against b (Needleman-Wunsch style, match-only
// scoring). Returns row of size b.size() + 1.
template <typename Seq>
std::vector<std::size_t> lcs_scores(const Seq& a, std::size_t a_lo, std::size_t a_hi,
                                    const Seq& b, std::size_t b_lo, std::size_t b_hi,
                                    bool reversed) {
  const std::size_t bn = b_hi - b_lo;
  std::vector<std::size_t> prev(bn + 1, 0), cur(bn + 1, 0);
  const std::size_t an = a_hi - a_lo;
  for (std::size_t i = 1; i <= an; ++i) {
    cur[0] = 0;
    const auto& ai = reversed ? a[a_hi - i] : a[a_lo + i - 1];
    for (std::size_t j = 1; j <= bn; ++j) {
      const auto& bj = reversed ? b[b_hi - j] : b[b_lo + j - 1];
      if (ai == bj) {
        cur[j] = prev[j - 1] + 1;
      } else {
        cur[j] = std::max(prev[j], cur[j - 1]);
      }
    }
    std::swap(prev, cur);
  }
  return prev;
}

// Hirschberg recursion collecting matched index pairs (i into a, j into b),
// strictly increasing in both. Linear space, deterministic split choice.
template <typename Seq>
void hirschberg(const Seq& a, std::size_t a_lo, std::size_t a_hi, const Seq& b,
                std::size_t b_lo, std::size_t b_hi,
                std::vector<std::pair<std::size_t, std::size_t>>& out) {
  if (a_lo >= a_hi || b_lo >= b_hi) return;
  if (a_hi - a_lo == 1) {
    for (std::size_t j = b_lo; j < b_hi; ++j) {
      if (b[j] == a[a_lo]) {
        out.emplace_back(a_lo, j);
        return;
      }
    }
    return;
  }
  const std::size_t mid = a_lo + (a_hi - a_lo) / 2;
  const auto left = lcs_scores(a, a_lo, mid, b, b_lo, b_hi, false);
  const auto right = lcs_scores(a, mid, a_hi, b, b_lo, b_hi, true);
  const std::size_t bn = b_hi - b_lo;
  std::size_t best_k = 0;
  std::size_t best = 0;
  for (std::size_t k = 0; k <= bn; ++k) {
    const std::size_t score = left[k] + right[bn - k];
    if (score > best) {
      best = score;
      best_k = k;
    }
  }
  hirschberg(a, a_lo, mid, b, b_lo, b_lo + best_k, out);
  hirschberg(a, mid, a_hi, b, b_lo + best_k, b_hi, out);
}

// Builds the hunk script from matched pairs over [0, n) x [0, m).
std::vector<Hunk> script_from_matches(
    std::string_view before, std::string_view after,
    const std::vector<std::pair<std::size_t, std::size_t>>& matches) {
  std::vector<Hunk> script;
  auto push = [&script](Op op, std::string_view text) {
    if (text.empty()) return;
    if (!script.empty() && script.back().op == op) {
      script.back().text.append(text);
    } else {
      script.push_back({op, std::string(text)});
    }
  };
  std::size_t i = 0, j = 0;
  for (const auto& [mi, mj] : matches) {
    push(Op::kDel, before.substr(i, mi - i));
    push(Op::kIns, after.substr(j, mj - j));
    push(Op::kKeep, before.substr(mi, 1));
    i = mi + 1;
    j = mj + 1;
  }
  push(Op::kDel, before.substr(i));
  push(Op::kIns, after.substr(j));
  return script;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

// Canonicalizes hunk boundaries the way diff-match-patch's merge cleanup
// does: single edits surrounded by equal runs slide sideways when the
// boundary characters allow, absorbing the equal run and letting adjacent
// edits of the same kind merge. Keeps the matched subsequence property
// intact; only re-labels which equal characters count as matched.
void cleanup_merge(std::vector<Hunk>& script) {
  bool changed = true;
  while (changed) {
    changed = false;
    // Merge adjacent same-op hunks and drop empties.
    std::vector<Hunk> merged;
    for (Hunk& h : script) {
      if (h.text.empty()) continue;
      if (!merged.empty() && merged.back().op == h.op) {
        merged.back().text.append(h.text);
      } else {
        merged.push_back(std::move(h));
      }
    }
    script = std::move(merged);

    for (std::size_t idx = 1; idx + 1 < script.size(); ++idx) {
      Hunk& prev = script[idx - 1];
      Hunk& edit = script[idx];
      Hunk& next = script[idx + 1];
      if (edit.op == Op::kKeep || prev.op != Op::kKeep || next.op != Op::kKeep) {
        continue;
      }
      if (prev.text.empty() || next.text.empty()) continue;
      if (ends_with(edit.text, prev.text)) {
        // Shift left over the preceding equality.
        edit.text = prev.text + edit.text.substr(0, edit.text.size() - prev.text.size());
        next.text = prev.text + next.text;
        prev.text.clear();
        changed = true;
      } else if (starts_with(edit.text, next.text)) {
        // Shift right over the following equality.
        prev.text += next.text;
        edit.text = edit.text.substr(next.text.size()) + next.text;
        next.text.clear();
        changed = true;
      }
    }
  }
}

void spans_from_script(const std::vector<Hunk>& script, std::size_t before_offset,
                       std::size_t after_offset, CharSpanSet& before_spans,
                       CharSpanSet& after_spans) {
  std::size_t bi = before_offset;
  std::size_t ai = after_offset;
  auto append = [](CharSpanSet& set, std::size_t begin, std::size_t end) {
    if (begin == end) return;
    if (!set.spans.empty() && set.spans.back().end == begin) {
      set.spans.back().end = end;
    } else {
      set.spans.push_back({begin, end});
    }
  };
  for (const Hunk& h : script) {
    switch (h.op) {
      case Op::kKeep:
        bi += h.text.size();
        ai += h.text.size();
        break;
      case Op::kDel:
        append(before_spans, bi, bi + h.text.size());
        bi += h.text.size();
        break;
      case Op::kIns:
        append(after_spans, ai, ai + h.text.size());
        ai += h.text.size();
        break;
    }
  }
}

// Exact path: subsequence match + boundary cleanup.
void diff_exact(std::string_view before, std::string_view after,
                std::size_t before_offset, std::size_t after_offset,
                CharSpanSet& before_spans, CharSpanSet& after_spans) {
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  hirschberg(before, 0, before.size(), after, 0, after.size(), matches);
  auto script = script_from_matches(before, after, matches);
  cleanup_merge(script);
  spans_from_script(script, before_offset, after_offset, before_spans, after_spans);
}

std::size_t common_prefix(std::string_view a, std::string_view b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::size_t i = 0;
  while (i < n && a[i] == b[i]) ++i;
  return i;
}

std::size_t common_suffix(std::string_view a, std::string_view b) {
  const std::size_t n = std::min(a.size(), b.size());
  std::size_t i = 0;
  while (i < n && a[a.size() - 1 - i] == b[b.size() - 1 - i]) ++i;
  return i;
}

struct Line {
  std::size_t begin;
  std::size_t end;  // includes the newline when present
  std::size_t hash;

  bool operator==(const Line& other) const {
    return hash == other.hash && (end - begin) == (other.end - other.begin);
  }
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') {
      lines.push_back({start, i + 1, 0});
      start = i + 1;
    }
  }
  if (start < text.size()) lines.push_back({start, text.size(), 0});
  for (Line& l : lines) {
    std::size_t h = 1469598103934665603ULL;
    for (std::size_t i = l.begin; i < l.end; ++i) {
      h ^= static_cast<unsigned char>(text[i]);
      h *= 1099511628211ULL;
    }
    l.hash = h;
  }
  return lines;
}

// Large-text path: anchor on unchanged lines, then refine each changed block
// exactly when small enough, otherwise strip common boundary characters and
// mark the remainder changed on both sides.
void diff_anchored(std::string_view before, std::string_view after,
                   std::size_t before_offset, std::size_t after_offset,
                   std::size_t exact_limit, CharSpanSet& before_spans,
                   CharSpanSet& after_spans) {
  const auto b_lines = split_lines(before);
  const auto a_lines = split_lines(after);
  std::vector<std::pair<std::size_t, std::size_t>> line_matches;
  hirschberg(b_lines, 0, b_lines.size(), a_lines, 0, a_lines.size(), line_matches);

  auto refine_block = [&](std::size_t b_lo, std::size_t b_hi, std::size_t a_lo,
                          std::size_t a_hi) {
    std::string_view bmid = before.substr(b_lo, b_hi - b_lo);
    std::string_view amid = after.substr(a_lo, a_hi - a_lo);
    const std::size_t p = common_prefix(bmid, amid);
    bmid.remove_prefix(p);
    amid.remove_prefix(p);
    const std::size_t s = common_suffix(bmid, amid);
    bmid.remove_suffix(s);
    amid.remove_suffix(s);
    const std::size_t bo = before_offset + b_lo + p;
    const std::size_t ao = after_offset + a_lo + p;
    if (bmid.empty() && amid.empty()) return;
    if (std::max(bmid.size(), amid.size()) <= exact_limit) {
      diff_exact(bmid, amid, bo, ao, before_spans, after_spans);
    } else {
      if (!bmid.empty()) before_spans.spans.push_back({bo, bo + bmid.size()});
      if (!amid.empty()) after_spans.spans.push_back({ao, ao + amid.size()});
    }
  };

  std::size_t bi = 0, ai = 0;  // char offsets of the unprocessed region
  for (const auto& [mb, ma] : line_matches) {
    refine_block(bi, b_lines[mb].begin, ai, a_lines[ma].begin);
    bi = b_lines[mb].end;
    ai = a_lines[ma].end;
  }
  refine_block(bi, before.size(), ai, after.size());
}

}  // namespace

CharDiff char_diff(std::string_view before, std::string_view after,
                   const CharDiffOptions& options) {
  CharDiff diff;
  const std::size_t p = common_prefix(before, after);
  std::string_view bmid = before.substr(p);
  std::string_view amid = after.substr(p);
  const std::size_t s = common_suffix(bmid, amid);
  bmid.remove_suffix(s);
  amid.remove_suffix(s);
  if (bmid.empty() && amid.empty()) return diff;

  if (bmid.empty()) {
    diff.after.spans.push_back({p, p + amid.size()});
  } else if (amid.empty()) {
    diff.before.spans.push_back({p, p + bmid.size()});
  } else if (std::max(bmid.size(), amid.size()) <= options.exact_limit) {
    diff_exact(bmid, amid, p, p, diff.before, diff.after);
  } else {
    diff_anchored(bmid, amid, p, p, options.exact_limit, diff.before, diff.after);
  }
  diff.before.validate(before.size());
  diff.after.validate(after.size());
  return diff;
}

CharSpanSet line_range_chars(std::string_view text,
                             const std::vector<LineRange>& ranges) {
  const auto lines = split_lines(text);
  CharSpanSet set;
  std::vector<CharSpan> raw;
  for (const LineRange& r : ranges) {
    if (r.first == 0 || r.last < r.first) {
      throw ContractError("line ranges are 1-based and inclusive");
    }
    if (r.first > lines.size()) continue;
    const std::size_t lo = lines[r.first - 1].begin;
    const std::size_t hi = lines[std::min(r.last, lines.size()) - 1].end;
    if (lo < hi) raw.push_back({lo, hi});
  }
  std::sort(raw.begin(), raw.end(),
            [](const CharSpan& a, const CharSpan& b) { return a.begin < b.begin; });
  for (const CharSpan& s : raw) {
    if (!set.spans.empty() && s.begin <= set.spans.back().end) {
      set.spans.back().end = std::max(set.spans.back().end, s.end);
    } else {
      set.spans.push_back(s);
    }
  }
  set.validate(text.size());
  return set;
}

LineDiff line_diff(std::string_view before, std::string_view after) {
  const auto b_lines = split_lines(before);
  const auto a_lines = split_lines(after);
  std::vector<std::pair<std::size_t, std::size_t>> matches;
  hirschberg(b_lines, 0, b_lines.size(), a_lines, 0, a_lines.size(), matches);

  std::vector<bool> b_matched(b_lines.size(), false), a_matched(a_lines.size(), false);
  for (const auto& [mb, ma] : matches) {
    b_matched[mb] = true;
    a_matched[ma] = true;
  }
  auto collect = [](const std::vector<bool>& matched) {
    std::vector<LineRange> out;
    for (std::size_t i = 0; i < matched.size(); ++i) {
      if (matched[i]) continue;
      if (!out.empty() && out.back().last == i) {
        out.back().last = i + 1;
      } else {
        out.push_back({i + 1, i + 1});
      }
    }
    return out;
  };
  return {collect(b_matched), collect(a_matched)};
}

}  // namespace pcl
