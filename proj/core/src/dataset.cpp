#include "pcl/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "pcl/digest.hpp"
#include "pcl/errors.hpp"
#include "pcl/rng.hpp"

namespace pcl {
namespace {

bool valid_cwe_tag(const std::string& cwe) {
  if (cwe.size() < 5 || cwe.compare(0, 4, "CWE-") != 0) return false;
  for (std::size_t i = 4; i < cwe.size(); ++i) {
    if (!std::isdigit(static_cast<unsigned char>(cwe[i]))) return false;
  }
  return true;
}

std::size_t line_count(std::string_view text) {
  std::size_t n = text.empty() ? 0 : 1;
  for (std::size_t i = 0; i + 1 < text.size(); ++i) {
    if (text[i] == '\n') ++n;
  }
  return n;
}

}  // namespace

void CodePairRecord::validate() const {
  if (insecure_source.empty() || secure_source.empty()) {
    throw ContractError("pair " + pair_id + ": both sources must be non-empty");
  }
  if (!valid_cwe_tag(cwe)) {
    throw ContractError("pair " + pair_id + ": cwe must match CWE-<digits>, got '" +
                        cwe + "'");
  }
  if (language != "python" && language != "c_cpp") {
    throw ContractError("pair " + pair_id + ": unknown language '" + language + "'");
  }
  if (commit_line_diff.has_value()) {
    for (const SidedLineRange& r : *commit_line_diff) {
      const std::string_view src =
          r.side == DiffSide::kRemoved ? insecure_source : secure_source;
      if (r.range.first == 0 || r.range.last < r.range.first ||
          r.range.last > line_count(src)) {
        throw ContractError("pair " + pair_id + ": line range outside the source");
      }
    }
  }
}

const char* to_string(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::kProgram: return "program";
    case MaskStrategy::kLine: return "line";
    case MaskStrategy::kChar: return "char";
    case MaskStrategy::kMix: return "mix";
  }
  return "?";
}

MaskStrategy mask_strategy_from_string(std::string_view name) {
  if (name == "program") return MaskStrategy::kProgram;
  if (name == "line") return MaskStrategy::kLine;
  if (name == "char") return MaskStrategy::kChar;
  if (name == "mix") return MaskStrategy::kMix;
  throw ConfigError("unknown mask strategy: " + std::string(name));
}

namespace {

MaskVector mask_from_spans(std::string_view source, const CharSpanSet& spans,
                           const Tokenizer& tokenizer) {
  const auto tokens = tokenizer.tokenize(source);
  MaskVector mask = MaskVector::zeros(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (spans.intersects(tokens[i].begin, tokens[i].end)) mask.bits[i] = 1;
  }
  return mask;
}

}  // namespace

MaskVector line_mask(std::string_view source, const CodePairRecord& record,
                     DiffSide side, const Tokenizer& tokenizer,
                     bool* used_fallback) {
  std::vector<LineRange> ranges;
  bool fallback = false;
  if (record.commit_line_diff.has_value()) {
    for (const SidedLineRange& r : *record.commit_line_diff) {
      if (r.side == side) ranges.push_back(r.range);
    }
  } else {
    const LineDiff d = line_diff(record.insecure_source, record.secure_source);
    ranges = side == DiffSide::kRemoved ? d.before : d.after;
    fallback = true;
  }
  if (used_fallback != nullptr) *used_fallback = fallback;
  return mask_from_spans(source, line_range_chars(source, ranges), tokenizer);
}

MaskVector char_mask(std::string_view source, const CharSpanSet& spans,
                     const Tokenizer& tokenizer) {
  spans.validate(source.size());
  return mask_from_spans(source, spans, tokenizer);
}

std::optional<std::pair<TrainingExample, TrainingExample>> build_pair(
    const CodePairRecord& record, const Tokenizer& tokenizer, MaskStrategy strategy,
    const BuildOptions& options) {
  record.validate();
  if (!record.approved) return std::nullopt;

  TrainingExample sec, vul;
  sec.pair_id = vul.pair_id = record.pair_id;
  sec.cwe = vul.cwe = record.cwe;
  sec.language = vul.language = record.language;
  sec.property = Property::kSec;
  vul.property = Property::kVul;
  sec.tokens = tokenizer.encode(record.secure_source);
  vul.tokens = tokenizer.encode(record.insecure_source);
  if (sec.tokens.empty() || vul.tokens.empty()) {
    throw ContractError("pair " + record.pair_id + ": a source tokenized to nothing");
  }

  switch (strategy) {
    case MaskStrategy::kProgram:
      sec.mask = MaskVector::ones(sec.tokens.size());
      vul.mask = MaskVector::ones(vul.tokens.size());
      break;
    case MaskStrategy::kLine: {
      bool fb_sec = false, fb_vul = false;
      sec.mask = line_mask(record.secure_source, record, DiffSide::kAdded,
                           tokenizer, &fb_sec);
      vul.mask = line_mask(record.insecure_source, record, DiffSide::kRemoved,
                           tokenizer, &fb_vul);
      if (fb_sec) sec.provenance = "line-diff:internal";
      if (fb_vul) vul.provenance = "line-diff:internal";
      break;
    }
    case MaskStrategy::kChar: {
      const CharDiff d = char_diff(record.insecure_source, record.secure_source);
      sec.mask = char_mask(record.secure_source, d.after, tokenizer);
      vul.mask = char_mask(record.insecure_source, d.before, tokenizer);
      break;
    }
    case MaskStrategy::kMix: {
      const CharDiff d = char_diff(record.insecure_source, record.secure_source);
      sec.mask = char_mask(record.secure_source, d.after, tokenizer);
      bool fb = false;
      vul.mask = line_mask(record.insecure_source, record, DiffSide::kRemoved,
                           tokenizer, &fb);
      if (fb) vul.provenance = "line-diff:internal";
      break;
    }
  }

  for (TrainingExample* ex : {&sec, &vul}) {
    if (ex->tokens.size() > options.max_tokens) {
      if (options.strict) return std::nullopt;
      ex->tokens.resize(options.max_tokens);
      ex->mask.bits.resize(options.max_tokens);
      if (!ex->provenance.empty()) ex->provenance += ";";
      ex->provenance += "truncated:" + std::to_string(options.max_tokens);
    }
  }
  return std::make_pair(std::move(sec), std::move(vul));
}

SplitResult split_dataset(const std::vector<TrainingExample>& examples,
                          double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw ConfigError("split ratio must be inside (0, 1)");
  }
  // Group by pair id, preserving first-seen order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<const TrainingExample*>> groups;
  for (const TrainingExample& ex : examples) {
    auto [it, inserted] = groups.try_emplace(ex.pair_id);
    if (inserted) order.push_back(ex.pair_id);
    it->second.push_back(&ex);
  }
  if (order.size() < 2) {
    throw ConfigError("need at least 2 pairs to split");
  }

  std::vector<std::size_t> perm(order.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  RandomStream rng(derive_seed(seed, "dataset-split"));
  for (std::size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.uniform_index(i)]);
  }

  // Round half up on the training side, but keep both sides non-empty.
  std::size_t train_pairs = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(order.size()) + 0.5));
  train_pairs = std::clamp<std::size_t>(train_pairs, 1, order.size() - 1);

  SplitResult result;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    auto& dst = i < train_pairs ? result.train : result.validation;
    for (const TrainingExample* ex : groups[order[perm[i]]]) dst.push_back(*ex);
  }
  return result;
}

namespace {

nlohmann::json record_to_json(const CodePairRecord& r) {
  nlohmann::json j;
  j["pair_id"] = r.pair_id;
  j["insecure_source"] = r.insecure_source;
  j["secure_source"] = r.secure_source;
  j["cwe"] = r.cwe;
  j["language"] = r.language;
  j["approved"] = r.approved;
  if (r.commit_line_diff.has_value()) {
    nlohmann::json arr = nlohmann::json::array();
    for (const SidedLineRange& s : *r.commit_line_diff) {
      arr.push_back({{"side", s.side == DiffSide::kRemoved ? "removed" : "added"},
                     {"first", s.range.first},
                     {"last", s.range.last}});
    }
    j["commit_line_diff"] = std::move(arr);
  }
  return j;
}

CodePairRecord record_from_json(const nlohmann::json& j, std::size_t line_no) {
  CodePairRecord r;
  try {
    r.insecure_source = j.at("insecure_source").get<std::string>();
    r.secure_source = j.at("secure_source").get<std::string>();
    r.cwe = j.at("cwe").get<std::string>();
    r.language = j.at("language").get<std::string>();
    r.approved = j.value("approved", true);
    if (j.contains("pair_id")) {
      r.pair_id = j.at("pair_id").get<std::string>();
    } else {
      Digest d;
      d.update_string(r.insecure_source);
      d.update_string(r.secure_source);
      r.pair_id = "pair-" + d.hex().substr(0, 12);
    }
    if (j.contains("commit_line_diff") && !j.at("commit_line_diff").is_null()) {
      std::vector<SidedLineRange> ranges;
      for (const auto& e : j.at("commit_line_diff")) {
        SidedLineRange s;
        const std::string side = e.at("side").get<std::string>();
        if (side == "removed") {
          s.side = DiffSide::kRemoved;
        } else if (side == "added") {
          s.side = DiffSide::kAdded;
        } else {
          throw FormatError("line " + std::to_string(line_no) +
                            ": diff side must be removed or added");
        }
        s.range.first = e.at("first").get<std::size_t>();
        s.range.last = e.at("last").get<std::size_t>();
        ranges.push_back(s);
      }
      r.commit_line_diff = std::move(ranges);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("pairs file line " + std::to_string(line_no) + ": " + e.what());
  }
  return r;
}

}  // namespace

std::vector<CodePairRecord> read_pair_records(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot read pairs file: " + file.string());
  std::vector<CodePairRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("pairs file line " + std::to_string(line_no) +
                        " is not valid JSON: " + e.what());
    }
    records.push_back(record_from_json(j, line_no));
  }
  return records;
}

void write_pair_records(const std::vector<CodePairRecord>& records,
                        const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write pairs file: " + file.string());
  for (const CodePairRecord& r : records) {
    out << record_to_json(r).dump() << "\n";
  }
}

void write_examples(const std::vector<TrainingExample>& examples,
                    const std::string& tokenizer_id,
                    const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write examples file: " + file.string());
  for (const TrainingExample& ex : examples) {
    nlohmann::json j;
    j["pair_id"] = ex.pair_id;
    j["property"] = to_string(ex.property);
    j["tokenizer_id"] = tokenizer_id;
    j["tokens"] = ex.tokens;
    j["mask"] = ex.mask.bits;
    j["cwe"] = ex.cwe;
    j["language"] = ex.language;
    if (!ex.provenance.empty()) j["provenance"] = ex.provenance;
    out << j.dump() << "\n";
  }
}

std::vector<TrainingExample> read_examples(const std::filesystem::path& file,
                                           std::string* tokenizer_id) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot read examples file: " + file.string());
  std::vector<TrainingExample> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      TrainingExample ex;
      ex.pair_id = j.at("pair_id").get<std::string>();
      ex.property = property_from_string(j.at("property").get<std::string>());
      ex.tokens = j.at("tokens").get<TokenSequence>();
      ex.mask.bits = j.at("mask").get<std::vector<std::uint8_t>>();
      ex.cwe = j.value("cwe", "");
      ex.language = j.value("language", "");
      ex.provenance = j.value("provenance", "");
      if (tokenizer_id != nullptr) *tokenizer_id = j.at("tokenizer_id").get<std::string>();
      if (ex.mask.size() != ex.tokens.size()) {
        throw FormatError("examples file line " + std::to_string(line_no) +
                          ": mask and token lengths differ");
      }
      ex.mask.validate();
      examples.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("examples file line " + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  return examples;
}

}  // namespace pcl
