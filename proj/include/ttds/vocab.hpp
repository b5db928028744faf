#pragma once

#include "ttds/common.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ttds {

// Layout of the semantic-token block appended after the natural-language tokens:
// [item level tokens | user level tokens | collision suffix tokens].
struct SemanticBlock {
  TokenId offset = 0;
  int item_levels = 0;
  int item_codes = 0;
  int user_levels = 0;
  int user_codes = 0;
  int suffixes = 0;

  int count() const { return item_levels * item_codes + user_levels * user_codes + suffixes; }
  bool empty() const { return count() == 0; }
};

struct SemanticToken {
  bool is_suffix = false;
  Tower tower = Tower::item;  // meaningless for suffix tokens
  int level = 0;
  int code = 0;               // suffix ordinal when is_suffix
};

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;

  Vocabulary();

  // Words with frequency >= min_freq, ordered by (descending frequency, lexical).
  static Vocabulary build(const std::vector<std::string>& corpus, int min_freq);
  static Vocabulary from_tokens(std::vector<std::string> tokens, const SemanticBlock& block);

  int size() const { return static_cast<int>(tokens_.size()); }
  int nl_size() const { return block_.empty() ? size() : block_.offset; }
  bool extended() const { return !block_.empty(); }
  const SemanticBlock& semantic_block() const { return block_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenId lookup(std::string_view word) const;
  const std::string& token_text(TokenId id) const;

  // Appends level/tower-distinct semantic tokens and collision suffixes; NL ids stay put.
  void extend(int item_levels, int item_codes, int user_levels, int user_codes, int suffixes);

  TokenId semantic_token(Tower tower, int level, int code) const;
  TokenId suffix_token(int ordinal) const;
  std::optional<SemanticToken> describe(TokenId id) const;

  bool is_nl(TokenId id) const { return id >= 0 && id < nl_size(); }
  bool is_semantic(TokenId id) const { return extended() && id >= block_.offset && id < size(); }
  bool is_tower_token(TokenId id, Tower tower) const;  // level tokens of `tower` plus suffix tokens

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  SemanticBlock block_;
};

// Lowercased words: runs of [a-z0-9] (plus non-ASCII bytes); each other visible char is its own token.
std::vector<std::string> tokenize_words(std::string_view text);
std::vector<TokenId> encode_text(std::string_view text, const Vocabulary& vocab);
std::string decode_tokens(std::span<const TokenId> ids, const Vocabulary& vocab);

}  // namespace ttds
