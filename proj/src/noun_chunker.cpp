#include "ovdlab/noun_chunker.hpp"

#include <set>

#include "ovdlab/errors.hpp"
#include "ovdlab/text.hpp"

namespace ovdlab {

namespace {

constexpr const char* kDeterminers[] = {"a", "an", "the", "this", "that", "these", "those", "each", "every",
                                        "some", "any", "no", "another", "his", "her", "its", "their", "my",
                                        "your", "our", "several", "many", "few", "both", "all", "either", "neither"};
constexpr const char* kNumbers[] = {"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
                                    "eleven", "twelve", "dozen", "first", "second", "third", "single", "couple"};
constexpr const char* kAdjectives[] = {
    "young", "old", "older", "elderly", "small", "large", "big", "little", "tiny", "huge", "tall", "short", "long",
    "wide", "narrow", "thin", "thick", "red", "orange", "yellow", "green", "blue", "purple", "pink", "brown",
    "black", "white", "gray", "grey", "dark", "light", "bright", "pale", "golden", "silver", "wooden", "metal",
    "plastic", "glass", "round", "square", "rectangular", "flat", "empty", "full", "open", "closed", "clean",
    "dirty", "wet", "dry", "new", "clear", "cloudy", "sunny", "busy", "quiet", "colorful", "various", "other",
    "same", "different", "upper", "lower", "left", "right", "central", "middle", "near", "far", "distant", "striped",
    "dotted", "checkered", "soft", "hard", "smooth", "rough", "shiny", "warm", "cold", "hot", "happy", "sad",
    "beautiful", "pretty", "ornate", "simple", "plain", "modern", "ancient", "vintage", "fresh", "ripe", "tidy",
    "visible", "main", "entire", "whole", "overall", "several", "medium", "solid", "uniform", "vivid", "deep",
    "muted", "cozy", "natural", "outdoor", "indoor", "urban", "rural", "neat", "dense", "sparse", "adjacent",
    "nearby", "top", "bottom"};
constexpr const char* kVerbs[] = {
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "can",
    "could", "will", "would", "shall", "should", "may", "might", "must", "sits", "stands", "lies", "holds",
    "washes", "wears", "appears", "seems", "contains", "depicts", "hangs", "covers", "fills", "occupies",
    "surrounds", "plays", "eats", "rides", "carries", "dries", "rinses", "cooks", "reads", "writes", "waits",
    "smiles", "talks", "leans", "grows", "swims", "jumps", "reaches", "adds", "creates", "sees", "suggests",
    "indicates", "lit", "placed", "located", "positioned", "seen", "found", "made", "built", "painted", "drawn",
    "arranged", "scattered", "stacked", "parked", "filled", "covered", "topped", "lined", "framed", "dressed",
    "sized", "shaped", "colored", "coloured", "run", "sleeps", "sleep", "moves", "move", "lays", "floats"};
constexpr const char* kAdverbs[] = {"very", "quite", "rather", "slightly", "also", "too", "not", "only", "just",
                                    "still", "even", "here", "there", "together", "again", "almost", "perhaps",
                                    "maybe", "possibly", "likely", "seemingly", "probably", "mostly", "partly",
                                    "nearly", "well", "so", "then", "now", "up", "down", "away", "back", "out",
                                    "off", "apart", "upward", "downward", "outside", "inside", "otherwise"};
constexpr const char* kPrepositions[] = {
    "with", "without", "on", "in", "at", "of", "to", "from", "by", "for", "near", "under", "over", "above",
    "below", "beneath", "behind", "beside", "besides", "between", "among", "across", "along", "around", "into",
    "onto", "through", "toward", "towards", "against", "inside", "outside", "within", "upon", "after", "before",
    "during", "past", "beyond", "like", "about", "atop", "next", "via", "per", "than", "throughout", "underneath"};
constexpr const char* kConjunctions[] = {"and", "or", "but", "nor", "yet", "while", "whereas", "because",
                                         "although", "though", "if", "as", "since", "unless", "until", "when",
                                         "where", "which", "who", "whom", "whose", "what", "that", "whether"};
constexpr const char* kPronouns[] = {"i", "you", "he", "she", "it", "we", "they", "me", "him", "us", "them",
                                     "himself", "herself", "itself", "themselves", "someone", "something",
                                     "everyone", "everything", "nothing", "anyone", "anything", "one's", "mine",
                                     "yours", "hers", "ours", "theirs"};
// Nouns that the suffix rules would otherwise misread.
constexpr const char* kNouns[] = {"building", "buildings", "ceiling", "painting", "paintings", "clothing",
                                  "railing", "railings", "bedding", "wedding", "evening", "morning", "lighting",
                                  "ring", "rings", "king", "thing", "things", "string", "wing", "wings",
                                  "spring", "bed", "beds", "shed", "sled", "seed", "seeds", "reed", "needle",
                                  "family", "belly", "jelly", "lily", "fly", "butterfly", "dragonfly",
                                  "man", "men", "woman", "women", "dishes", "mother", "umbrella", "image",
                                  "picture", "photo", "scene", "sink", "kitchen", "table", "chair", "window",
                                  "dog", "dogs", "cat", "cats", "grass", "cup", "fork", "cow", "person", "people"};

}  // namespace

const Lexicon& Lexicon::shipped() {
  static const Lexicon lex = [] {
    Lexicon l;
    // Later tables win, so closed classes are inserted last.
    for (auto w : kNouns) l.set(w, Pos::noun);
    for (auto w : kAdjectives) l.set(w, Pos::adj);
    for (auto w : kVerbs) l.set(w, Pos::verb);
    for (auto w : kAdverbs) l.set(w, Pos::adv);
    for (auto w : kNumbers) l.set(w, Pos::num);
    for (auto w : kPronouns) l.set(w, Pos::pron);
    for (auto w : kConjunctions) l.set(w, Pos::conj);
    for (auto w : kPrepositions) l.set(w, Pos::prep);
    for (auto w : kDeterminers) l.set(w, Pos::det);
    // Entries that the table order above would misfile.
    l.set("man", Pos::noun);
    l.set("dishes", Pos::noun);
    l.set("that", Pos::conj);
    return l;
  }();
  return lex;
}

Pos Lexicon::tag(std::string_view w) const {
  if (auto it = entries_.find(w); it != entries_.end()) return it->second;
  bool digits = !w.empty();
  for (char c : w) digits = digits && (c >= '0' && c <= '9');
  if (digits) return Pos::num;
  auto ends = [&](std::string_view suf) { return w.size() > suf.size() + 1 && w.substr(w.size() - suf.size()) == suf; };
  if (ends("ly")) return Pos::adv;
  if (ends("ing") || ends("ed")) return Pos::verb;
  return Pos::noun;
}

std::vector<WordToken> tag_words(std::string_view s, const Lexicon& lex) {
  std::vector<WordToken> out;
  bool pending_break = false;
  std::size_t i = 0;
  while (i < s.size()) {
    if (!text::is_word_byte(s[i])) {
      const char c = s[i];
      if (!(c == ' ' || c == '\t' || c == '\n' || c == '\r')) pending_break = true;
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && text::is_word_byte(s[j])) ++j;
    // Leading/trailing apostrophes and hyphens are punctuation, not word bytes.
    std::size_t a = i;
    std::size_t b = j;
    while (a < b && (s[a] == '\'' || s[a] == '-')) ++a;
    while (b > a && (s[b - 1] == '\'' || s[b - 1] == '-')) --b;
    if (a < b) {
      WordToken t;
      t.text = std::string(s.substr(a, b - a));
      t.start = static_cast<int>(a);
      t.end = static_cast<int>(b);
      t.pos = lex.tag(text::to_lower(t.text));
      t.breaks_before = pending_break || a > i;
      out.push_back(std::move(t));
      pending_break = b < j;
    }
    i = j;
  }
  return out;
}

std::vector<NounChunk> noun_chunks(std::string_view s, const Lexicon& lex) {
  const auto words = tag_words(s, lex);
  std::vector<NounChunk> out;
  std::size_t i = 0;
  while (i < words.size()) {
    std::size_t j = i;
    if (words[j].pos == Pos::det) ++j;
    while (j < words.size() && !words[j].breaks_before && (words[j].pos == Pos::adj || words[j].pos == Pos::num)) ++j;
    // The determiner may stand alone before modifiers only if nothing breaks the run.
    if (j > i && j < words.size() && words[j].breaks_before) {
      ++i;
      continue;
    }
    std::size_t k = j;
    while (k < words.size() && words[k].pos == Pos::noun && (k == i || !words[k].breaks_before)) ++k;
    if (k == j) {
      ++i;
      continue;
    }
    NounChunk c;
    std::vector<std::string> parts;
    for (std::size_t t = i; t < k; ++t) parts.push_back(text::to_lower(words[t].text));
    c.text = text::join(parts, " ");
    c.start = words[i].start;
    c.end = words[k - 1].end;
    c.head_start = words[k - 1].start;
    c.head_end = words[k - 1].end;
    out.push_back(std::move(c));
    i = k;
  }
  return out;
}

std::vector<std::string> chunk_noun_phrases(std::string_view caption, const Lexicon& lex) {
  if (text::trim(caption).empty()) throw ArgumentError("chunk_noun_phrases: caption must be non-empty");
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (auto& c : noun_chunks(caption, lex)) {
    if (seen.insert(c.text).second) out.push_back(std::move(c.text));
  }
  return out;
}

}  // namespace ovdlab
