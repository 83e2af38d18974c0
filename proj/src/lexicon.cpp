#include "goldi/tokenizer.hpp"

namespace goldi::text {

// Order is part of the on-disk vocabulary contract: ids are positions in this
// list. Extend only by appending.
const std::vector<std::string>& default_lexicon_tokens() {
  static const std::vector<std::string> tokens = [] {
    std::vector<std::string> t;
    t.push_back(Lexicon::kPad);
    t.push_back(Lexicon::kEos);
    // task markers and punctuation
    for (const char* s : {"CAP", "OBGR", "REF", "VQA", "[", "]", "."}) t.push_back(s);
    // coordinate bins, doubling as counts
    for (int i = 0; i < 64; ++i) t.push_back(std::to_string(i));
    // shapes
    for (const char* s : {"circle", "square", "triangle", "bar", "circles",
                          "squares", "triangles", "bars"})
      t.push_back(s);
    // colors
    for (const char* s : {"red", "green", "blue", "yellow", "purple", "orange",
                          "cyan", "pink"})
      t.push_back(s);
    // sizes and positions
    for (const char* s : {"small", "large", "top", "bottom", "left", "right",
                          "center"})
      t.push_back(s);
    // relations
    for (const char* s : {"above", "below", "of"}) t.push_back(s);
    // function words
    for (const char* s :
         {"a",       "an",     "the",    "is",      "are",    "in",    "on",
          "and",     "there",  "what",   "how",     "many",   "color", "shape",
          "size",    "object", "objects", "picture", "with",  "background",
          "empty",   "sits",   "appears", "yes",    "no",     "photo"})
      t.push_back(s);
    // decoder prompt words
    for (const char* s : {"caption", "grounded", "box", "answer"}) t.push_back(s);
    return t;
  }();
  return tokens;
}

}  // namespace goldi::text
