#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pcl {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// A token together with the half-open character interval it covers in the
// source text. Masks are projected from character spans onto these
// intervals, so every tokenizer must report them exactly.
struct SpannedToken {
  TokenId id = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::string id() const = 0;
  virtual std::size_t vocab_size() const = 0;
  virtual TokenId bos_id() const = 0;
  virtual TokenId eos_id() const = 0;

  virtual std::vector<SpannedToken> tokenize(std::string_view text) const = 0;
  virtual std::string decode(const TokenSequence& ids) const = 0;

  TokenSequence encode(std::string_view text) const;
};

// Byte-level tokenizer: one token per input byte, ids 0..255, then BOS/EOS.
// Fully reversible and vocabulary-free.
class ByteTokenizer final : public Tokenizer {
 public:
  std::string id() const override { return "bytes-v1"; }
  std::size_t vocab_size() const override { return 258; }
  TokenId bos_id() const override { return 256; }
  TokenId eos_id() const override { return 257; }

  std::vector<SpannedToken> tokenize(std::string_view text) const override;
  std::string decode(const TokenSequence& ids) const override;
};

// Greedy run tokenizer: identifiers, digit runs, whitespace runs, and single
// punctuation characters, each mapped through an explicit vocabulary. The
// vocabulary is fit on a corpus (first-seen order) and serializes alongside
// the model, since token ids must stay stable across runs.
class WordTokenizer final : public Tokenizer {
 public:
  WordTokenizer();

  static WordTokenizer fit(const std::vector<std::string>& corpus);
  static WordTokenizer load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  std::string id() const override;
  std::size_t vocab_size() const override { return pieces_.size(); }
  TokenId bos_id() const override { return 0; }
  TokenId eos_id() const override { return 1; }
  TokenId unk_id() const { return 2; }

  std::vector<SpannedToken> tokenize(std::string_view text) const override;
  std::string decode(const TokenSequence& ids) const override;

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, TokenId> index_;

  void rebuild_index();
};

// Splits text into maximal runs: [A-Za-z_][A-Za-z_0-9]*, [0-9]+, whitespace
// runs, otherwise single characters. Shared by WordTokenizer and tests.
std::vector<std::pair<std::size_t, std::size_t>> split_runs(std::string_view text);

std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& model_dir);

}  // namespace pcl
