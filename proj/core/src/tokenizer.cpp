#include "pcl/tokenizer.hpp"

#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pcl/digest.hpp"
#include "pcl/errors.hpp"

namespace pcl {

TokenSequence Tokenizer::encode(std::string_view text) const {
  TokenSequence out;
  for (const SpannedToken& t : tokenize(text)) out.push_back(t.id);
  return out;
}

std::vector<SpannedToken> ByteTokenizer::tokenize(std::string_view text) const {
  std::vector<SpannedToken> out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    out.push_back({static_cast<TokenId>(static_cast<unsigned char>(text[i])), i, i + 1});
  }
  return out;
}

std::string ByteTokenizer::decode(const TokenSequence& ids) const {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id == bos_id() || id == eos_id()) continue;
    if (id < 0 || id > 255) throw InputError("byte tokenizer: id out of range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

namespace {

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
}
bool is_ident(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> split_runs(std::string_view text) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i + 1;
    const char c = text[i];
    if (is_ident_start(c)) {
      while (j < text.size() && is_ident(text[j])) ++j;
    } else if (std::isdigit(static_cast<unsigned char>(c))) {
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    }
    runs.emplace_back(i, j);
    i = j;
  }
  return runs;
}

WordTokenizer::WordTokenizer() {
  pieces_ = {"<bos>", "<eos>", "<unk>"};
  rebuild_index();
}

void WordTokenizer::rebuild_index() {
  index_.clear();
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    index_[pieces_[i]] = static_cast<TokenId>(i);
  }
}

WordTokenizer WordTokenizer::fit(const std::vector<std::string>& corpus) {
  WordTokenizer tok;
  for (const std::string& text : corpus) {
    for (auto [b, e] : split_runs(text)) {
      std::string piece(text.substr(b, e - b));
      if (!tok.index_.contains(piece)) {
        tok.index_[piece] = static_cast<TokenId>(tok.pieces_.size());
        tok.pieces_.push_back(std::move(piece));
      }
    }
  }
  return tok;
}

std::string WordTokenizer::id() const {
  Digest d;
  for (const std::string& p : pieces_) d.update_string(p);
  return "words-v1#" + d.hex().substr(0, 8);
}

std::vector<SpannedToken> WordTokenizer::tokenize(std::string_view text) const {
  std::vector<SpannedToken> out;
  for (auto [b, e] : split_runs(text)) {
    std::string piece(text.substr(b, e - b));
    auto it = index_.find(piece);
    const TokenId id = it == index_.end() ? unk_id() : it->second;
    out.push_back({id, b, e});
  }
  return out;
}

std::string WordTokenizer::decode(const TokenSequence& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == bos_id() || id == eos_id()) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size()) {
      throw InputError("word tokenizer: id out of range");
    }
    if (id == unk_id()) continue;
    out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

void WordTokenizer::save(const std::filesystem::path& file) const {
  nlohmann::json j;
  j["kind"] = "words-v1";
  j["pieces"] = pieces_;
  std::ofstream out(file);
  if (!out) throw FormatError("cannot write tokenizer file: " + file.string());
  out << j.dump(2) << "\n";
}

WordTokenizer WordTokenizer::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot read tokenizer file: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed tokenizer file " + file.string() + ": " + e.what());
  }
  if (j.value("kind", "") != "words-v1") {
    throw FormatError("tokenizer file " + file.string() + ": unknown kind");
  }
  WordTokenizer tok;
  tok.pieces_ = j.at("pieces").get<std::vector<std::string>>();
  if (tok.pieces_.size() < 3) throw FormatError("tokenizer vocabulary too small");
  tok.rebuild_index();
  return tok;
}

std::unique_ptr<Tokenizer> load_tokenizer(const std::filesystem::path& model_dir) {
  const auto words = model_dir / "tokenizer.json";
  if (std::filesystem::exists(words)) {
    return std::make_unique<WordTokenizer>(WordTokenizer::load(words));
  }
  return std::make_unique<ByteTokenizer>();
}

}  // namespace pcl
