#pragma once

#include <map>
#include <string>
#include <vector>

namespace vlp {

// Fixed word-level vocabulary. Ids are dense from 0 and the first six are
// reserved structural tokens in a fixed order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMask = 4;
  static constexpr int kImg = 5;
  static constexpr int kReservedCount = 6;

  static const std::vector<std::string>& reserved_tokens();

  // Tokens listed in id order; validates the reserved prefix and uniqueness.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Builds [reserved..., words...] from a word list (deduplicated, order kept).
  static Vocabulary from_words(const std::vector<std::string>& words);

  // One token per line; line number = id.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int id_or_unk(const std::string& token) const;
  int id(const std::string& token) const;  // throws on unknown
  const std::string& token(int id) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

struct TokenSequence {
  std::vector<int> ids;
  std::string text;
};

// Lowercase, split on whitespace and punctuation, map out-of-vocabulary
// words to [UNK]. Throws on text with no tokens.
TokenSequence tokenize(const std::string& text, const Vocabulary& vocab);

// The normalization half of tokenize: lowercased words, no id mapping.
std::vector<std::string> normalize_words(const std::string& text);

}  // namespace vlp
