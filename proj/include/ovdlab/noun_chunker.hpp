#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace ovdlab {

enum class Pos { det, num, adj, noun, verb, adv, prep, conj, pron, other };

// Closed-class words plus common open-class words. Unknown words ending in
// -ly are adverbs, -ing/-ed verbs; every other unknown word is a noun, which
// keeps procedurally named classes (and rare nouns) chunkable.
class Lexicon {
 public:
  static const Lexicon& shipped();
  Pos tag(std::string_view lower_word) const;
  void set(const std::string& lower_word, Pos pos) { entries_[lower_word] = pos; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::string, Pos, std::less<>> entries_;
};

struct WordToken {
  std::string text;   // as written
  int start = 0;      // byte offsets into the source string
  int end = 0;
  Pos pos = Pos::other;
  bool breaks_before = false;  // punctuation separated it from the previous word
};

struct NounChunk {
  std::string text;  // lowercased, single-spaced
  int start = 0;     // byte span of the whole chunk in the source
  int end = 0;
  int head_start = 0;  // byte span of the head (last noun)
  int head_end = 0;
};

std::vector<WordToken> tag_words(std::string_view s, const Lexicon& lex = Lexicon::shipped());

// Maximal chunks matching DET? (ADJ|NUM)* NOUN+ in order of appearance.
std::vector<NounChunk> noun_chunks(std::string_view s, const Lexicon& lex = Lexicon::shipped());

// Lowercased chunk texts, deduplicated case-insensitively in order of first
// appearance. Throws ArgumentError on an empty caption.
std::vector<std::string> chunk_noun_phrases(std::string_view caption, const Lexicon& lex = Lexicon::shipped());

}  // namespace ovdlab
