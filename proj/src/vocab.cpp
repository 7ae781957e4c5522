#include "vlp/vocab.hpp"

#include <cctype>
#include <fstream>

#include "vlp/errors.hpp"

namespace vlp {

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> kReserved = {"[PAD]", "[UNK]", "[CLS]",
                                                     "[SEP]", "[MASK]", "[IMG]"};
  return kReserved;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size())
    throw ValueError("vocabulary must start with the " + std::to_string(reserved.size()) +
                     " reserved tokens");
  for (size_t i = 0; i < reserved.size(); ++i)
    if (tokens[i] != reserved[i])
      throw ValueError("vocabulary line " + std::to_string(i) + " must be " + reserved[i] +
                       ", got '" + tokens[i] + "'");
  Vocabulary v;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].empty()) throw ValueError("vocabulary has an empty token at id " + std::to_string(i));
    auto [it, inserted] = v.index_.emplace(tokens[i], static_cast<int>(i));
    if (!inserted) throw ValueError("duplicate vocabulary token: " + tokens[i]);
  }
  v.tokens_ = std::move(tokens);
  return v;
}

Vocabulary Vocabulary::from_words(const std::vector<std::string>& words) {
  std::vector<std::string> tokens = reserved_tokens();
  std::map<std::string, bool> seen;
  for (const auto& w : words) {
    if (w.empty() || seen.count(w)) continue;
    seen.emplace(w, true);
    tokens.push_back(w);
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary file: " + path);
}

int Vocabulary::id_or_unk(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw ValueError("token not in vocabulary: " + token);
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(size()));
  return tokens_[static_cast<size_t>(id)];
}

std::vector<std::string> normalize_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      words.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

TokenSequence tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<std::string> words = normalize_words(text);
  if (words.empty()) throw ValueError("cannot tokenize empty text");
  TokenSequence seq;
  seq.text = text;
  seq.ids.reserve(words.size());
  for (const auto& w : words) seq.ids.push_back(vocab.id_or_unk(w));
  return seq;
}

}  // namespace vlp
