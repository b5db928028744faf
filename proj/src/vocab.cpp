#include "ttds/vocab.hpp"

#include <algorithm>
#include <map>

namespace ttds {

namespace {

bool is_word_byte(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c >= 0x80; }
bool is_space_byte(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

}  // namespace

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>", "<bos>"} {
  for (TokenId i = 0; i < static_cast<TokenId>(tokens_.size()); ++i) index_.emplace(tokens_[i], i);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int min_freq) {
  std::map<std::string, long> freq;
  for (const auto& text : corpus)
    for (auto& w : tokenize_words(text)) ++freq[w];
  std::vector<std::pair<std::string, long>> words;
  for (auto& [w, n] : freq)
    if (n >= min_freq) words.emplace_back(w, n);
  // map iteration is lexical, so a stable sort on frequency leaves ties in lexical order
  std::stable_sort(words.begin(), words.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (auto& [w, n] : words) {
    if (v.index_.count(w)) continue;
    v.index_.emplace(w, static_cast<TokenId>(v.tokens_.size()));
    v.tokens_.push_back(w);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, const SemanticBlock& block) {
  if (tokens.size() < 3 || tokens[0] != "<pad>" || tokens[1] != "<unk>" || tokens[2] != "<bos>")
    throw DataError("vocabulary does not start with the special tokens");
  if (!block.empty() && block.offset + block.count() != static_cast<int>(tokens.size()))
    throw DataError("vocabulary semantic block does not match token count");
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (TokenId i = 0; i < static_cast<TokenId>(v.tokens_.size()); ++i) v.index_.emplace(v.tokens_[i], i);
  v.block_ = block;
  return v;
}

TokenId Vocabulary::lookup(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end() || is_semantic(it->second)) return kUnk;
  return it->second;
}

const std::string& Vocabulary::token_text(TokenId id) const {
  if (id < 0 || id >= size())
    throw DataError("token id " + std::to_string(id) + " out of range [0," + std::to_string(size()) + ")");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::extend(int item_levels, int item_codes, int user_levels, int user_codes, int suffixes) {
  if (extended()) throw StateError("vocabulary already carries a semantic block");
  if (item_levels < 1 || user_levels < 1 || item_codes < 2 || user_codes < 2 || suffixes < 1)
    throw ConfigError("semantic block needs levels >= 1, codes >= 2 and at least one suffix");
  block_ = SemanticBlock{size(), item_levels, item_codes, user_levels, user_codes, suffixes};
  auto push = [&](std::string name) {
    index_.emplace(name, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(name));
  };
  for (int l = 0; l < item_levels; ++l)
    for (int c = 0; c < item_codes; ++c) push("<i_l" + std::to_string(l) + "_c" + std::to_string(c) + ">");
  for (int l = 0; l < user_levels; ++l)
    for (int c = 0; c < user_codes; ++c) push("<u_l" + std::to_string(l) + "_c" + std::to_string(c) + ">");
  for (int p = 0; p < suffixes; ++p) push("<p_" + std::to_string(p) + ">");
}

TokenId Vocabulary::semantic_token(Tower tower, int level, int code) const {
  if (!extended()) throw StateError("vocabulary has no semantic block");
  const int levels = tower == Tower::item ? block_.item_levels : block_.user_levels;
  const int codes = tower == Tower::item ? block_.item_codes : block_.user_codes;
  if (level < 0 || level >= levels || code < 0 || code >= codes)
    throw DataError(std::string("semantic token out of range for ") + tower_name(tower) + " tower");
  TokenId base = block_.offset;
  if (tower == Tower::user) base += block_.item_levels * block_.item_codes;
  return base + level * codes + code;
}

TokenId Vocabulary::suffix_token(int ordinal) const {
  if (!extended()) throw StateError("vocabulary has no semantic block");
  if (ordinal < 0 || ordinal >= block_.suffixes)
    throw CollisionOverflowError("collision suffix " + std::to_string(ordinal) + " exceeds budget " +
                                 std::to_string(block_.suffixes));
  return block_.offset + block_.item_levels * block_.item_codes + block_.user_levels * block_.user_codes + ordinal;
}

std::optional<SemanticToken> Vocabulary::describe(TokenId id) const {
  if (!is_semantic(id)) return std::nullopt;
  int rel = id - block_.offset;
  const int item_span = block_.item_levels * block_.item_codes;
  const int user_span = block_.user_levels * block_.user_codes;
  if (rel < item_span) return SemanticToken{false, Tower::item, rel / block_.item_codes, rel % block_.item_codes};
  rel -= item_span;
  if (rel < user_span) return SemanticToken{false, Tower::user, rel / block_.user_codes, rel % block_.user_codes};
  return SemanticToken{true, Tower::item, 0, rel - user_span};
}

bool Vocabulary::is_tower_token(TokenId id, Tower tower) const {
  auto d = describe(id);
  return d && (d->is_suffix || d->tower == tower);
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char raw : text) {
    auto c = static_cast<unsigned char>(raw);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if (is_word_byte(c)) {
      cur.push_back(static_cast<char>(c));
      continue;
    }
    if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    if (!is_space_byte(c) && c != 0) out.emplace_back(1, static_cast<char>(c));
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<TokenId> encode_text(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : tokenize_words(text)) ids.push_back(vocab.lookup(w));
  return ids;
}

std::string decode_tokens(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (!out.empty()) out += ' ';
    out += vocab.token_text(id);
  }
  return out;
}

}  // namespace ttds
