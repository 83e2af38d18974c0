#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "goldi/common.hpp"

namespace goldi::text {

struct TokenSequence {
  std::vector<int> ids;  // includes the trailing EOS
  int eos_pos = 0;

  int length() const { return static_cast<int>(ids.size()); }
};

// Closed-vocabulary whitespace tokenizer. Every string the generator can emit
// tokenizes with zero out-of-vocabulary tokens.
class Lexicon {
 public:
  static constexpr const char* kPad = "<pad>";
  static constexpr const char* kEos = "<eos>";

  explicit Lexicon(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (size_t i = 0; i < tokens_.size(); ++i)
      index_[tokens_[i]] = static_cast<int>(i);
    require(index_.count(kPad) && index_.count(kEos),
            "lexicon: missing <pad> or <eos>");
    require(index_.size() == tokens_.size(), "lexicon: duplicate tokens");
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int pad_id() const { return index_.at(kPad); }
  int eos_id() const { return index_.at(kEos); }

  int id(const std::string& tok) const {
    auto it = index_.find(tok);
    require(it != index_.end(), "tokenizer: out-of-vocabulary token '" + tok + "'");
    return it->second;
  }

  bool contains(const std::string& tok) const { return index_.count(tok) != 0; }

  const std::string& token(int id) const {
    require(id >= 0 && id < size(), "tokenizer: id out of range");
    return tokens_[static_cast<size_t>(id)];
  }

  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// The canonical generator vocabulary (defined in src/lexicon.cpp).
const std::vector<std::string>& default_lexicon_tokens();

inline Lexicon default_lexicon() { return Lexicon(default_lexicon_tokens()); }

inline TokenSequence tokenize(const std::string& s, const Lexicon& lex) {
  TokenSequence seq;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) seq.ids.push_back(lex.id(s.substr(i, j - i)));
    i = j;
  }
  seq.ids.push_back(lex.eos_id());
  seq.eos_pos = static_cast<int>(seq.ids.size()) - 1;
  return seq;
}

inline std::string detokenize(const TokenSequence& seq, const Lexicon& lex) {
  std::string out;
  for (int id : seq.ids) {
    if (id == lex.eos_id() || id == lex.pad_id()) continue;
    if (!out.empty()) out += ' ';
    out += lex.token(id);
  }
  return out;
}

}  // namespace goldi::text
