#include "ovdlab/dataset_forge.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ovdlab/boxes.hpp"
#include "ovdlab/errors.hpp"
#include "ovdlab/noun_chunker.hpp"
#include "ovdlab/text.hpp"

namespace ovdlab {

// ---------------------------------------------------------------------------
// grounding text

GroundingText class_names_to_grounding_text(const std::vector<std::string>& names) {
  if (names.empty()) throw ArgumentError("class_names_to_grounding_text: empty name list");
  GroundingText g;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& n = names[i];
    if (n.empty()) throw ArgumentError("class_names_to_grounding_text: empty name at index " + std::to_string(i));
    if (n.find(". ") != std::string::npos) {
      throw ArgumentError("class_names_to_grounding_text: name contains \". \": " + n);
    }
    if (i) g.text += ". ";
    const int start = static_cast<int>(g.text.size());
    g.text += n;
    g.spans.push_back({start, static_cast<int>(g.text.size())});
  }
  g.text += ".";
  return g;
}

// ---------------------------------------------------------------------------
// merging

bool boxes_conflict(const GroundedBox& a, const GroundedBox& b, double iou_threshold) {
  return iou(a.bbox, b.bbox) >= iou_threshold && text::normalize_phrase(a.phrase) != text::normalize_phrase(b.phrase);
}

namespace {

void require_single_image(const std::vector<Quadruple>& samples) {
  for (const auto& s : samples) {
    if (s.image.id != samples.front().image.id) {
      throw ArgumentError("merge_image_samples: mixed image ids '" + samples.front().image.id + "' and '" +
                          s.image.id + "'");
    }
  }
}

}  // namespace

std::vector<MergeGroup> plan_merge_groups(const std::vector<Quadruple>& samples, double iou_threshold) {
  require_single_image(samples);
  std::vector<MergeGroup> groups;
  std::vector<std::vector<const GroundedBox*>> group_boxes;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::size_t target = groups.size();
    for (std::size_t g = 0; g < groups.size() && target == groups.size(); ++g) {
      bool ok = true;
      for (const auto* gb : group_boxes[g]) {
        for (const auto& b : s.boxes) ok = ok && !boxes_conflict(*gb, b, iou_threshold);
      }
      if (ok) target = g;
    }
    if (target == groups.size()) {
      groups.emplace_back();
      group_boxes.emplace_back();
    }
    auto& grp = groups[target];
    if (!grp.member_indices.empty()) grp.merged_text += ". ";
    grp.offset_of_member.push_back(static_cast<int>(grp.merged_text.size()));
    grp.merged_text += s.grounding_text;
    grp.member_indices.push_back(static_cast<int>(i));
    for (const auto& b : s.boxes) group_boxes[target].push_back(&b);
  }
  return groups;
}

std::vector<Quadruple> merge_image_samples(const std::vector<Quadruple>& samples, double iou_threshold) {
  std::vector<Quadruple> out;
  for (const auto& g : plan_merge_groups(samples, iou_threshold)) {
    Quadruple q = samples[g.member_indices.front()];
    q.grounding_text = g.merged_text;
    q.boxes.clear();
    for (std::size_t m = 0; m < g.member_indices.size(); ++m) {
      for (auto b : samples[g.member_indices[m]].boxes) {
        b.span.start += g.offset_of_member[m];
        b.span.end += g.offset_of_member[m];
        q.boxes.push_back(std::move(b));
      }
    }
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// caption cleaning

std::string_view verdict_name(CleanVerdict v) {
  switch (v) {
    case CleanVerdict::kept:
      return "kept";
    case CleanVerdict::rejected_repetition:
      return "rejected_repetition";
    case CleanVerdict::rejected_refusal:
      return "rejected_refusal";
    case CleanVerdict::flag_too_short:
      return "flag_too_short";
  }
  return "kept";
}

const std::set<std::string>& default_speculative_lexicon() {
  static const std::set<std::string> lex = {"indicating", "suggesting", "possibly", "seemingly",
                                            "perhaps",    "likely",     "appears"};
  return lex;
}

CleanOptions CleanOptions::defaults() {
  CleanOptions o;
  o.speculative_lexicon = default_speculative_lexicon();
  return o;
}

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

struct Clause {
  std::string text;
  char sep = 0;  // ',' or ';' when the clause ended at one
};

struct Sentence {
  std::vector<Clause> clauses;
  std::string terminator;
};

std::vector<Sentence> split_sentences(std::string_view s) {
  std::vector<Sentence> out;
  Sentence cur;
  std::size_t start = 0;
  auto close_clause = [&](std::size_t end, char sep) {
    auto t = text::trim(s.substr(start, end - start));
    if (!t.empty()) cur.clauses.push_back({std::string(t), sep});
  };
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    const bool boundary_after = i + 1 == s.size() || is_space(s[i + 1]);
    if ((c == ',' || c == ';') && boundary_after) {
      close_clause(i, c);
      start = ++i;
      continue;
    }
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i;
      while (j < s.size() && (s[j] == '.' || s[j] == '!' || s[j] == '?')) ++j;
      if (j == s.size() || is_space(s[j])) {
        close_clause(i, 0);
        cur.terminator = std::string(s.substr(i, j - i));
        if (!cur.clauses.empty()) out.push_back(std::move(cur));
        cur = Sentence{};
        start = i = j;
        continue;
      }
      i = j;
      continue;
    }
    ++i;
  }
  close_clause(s.size(), 0);
  if (!cur.clauses.empty()) out.push_back(std::move(cur));
  return out;
}

bool mentions_any(std::string_view clause, const std::set<std::string>& lexicon) {
  std::size_t i = 0;
  while (i < clause.size()) {
    if (!text::is_word_byte(clause[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < clause.size() && text::is_word_byte(clause[j])) ++j;
    if (lexicon.count(text::to_lower(clause.substr(i, j - i)))) return true;
    i = j;
  }
  return false;
}

std::vector<std::string> stripped_tokens(std::string_view caption) {
  std::vector<std::string> out;
  for (const auto& w : text::split_whitespace(caption)) {
    std::size_t a = 0;
    std::size_t b = w.size();
    while (a < b && !std::isalnum(static_cast<unsigned char>(w[a])) && static_cast<unsigned char>(w[a]) < 0x80) ++a;
    while (b > a && !std::isalnum(static_cast<unsigned char>(w[b - 1])) && static_cast<unsigned char>(w[b - 1]) < 0x80)
      --b;
    if (a < b) out.push_back(text::to_lower(w.substr(a, b - a)));
  }
  return out;
}

}  // namespace

double repeated_ngram_coverage(std::string_view caption, int n) {
  const auto toks = stripped_tokens(caption);
  if (n <= 0 || static_cast<int>(toks.size()) < n) return 0.0;
  std::map<std::string, int> counts;
  std::vector<std::string> grams;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string g = toks[i];
    for (int k = 1; k < n; ++k) g += ' ' + toks[i + k];
    ++counts[g];
    grams.push_back(std::move(g));
  }
  std::vector<char> covered(toks.size(), 0);
  for (std::size_t i = 0; i < grams.size(); ++i) {
    if (counts[grams[i]] >= 2) std::fill_n(covered.begin() + i, n, 1);
  }
  const auto hit = std::count(covered.begin(), covered.end(), 1);
  return static_cast<double>(hit) / static_cast<double>(toks.size());
}

CleanResult clean_caption(std::string_view caption, const CleanOptions& opts) {
  CleanResult r;
  std::vector<std::string> kept_sentences;
  for (const auto& sent : split_sentences(caption)) {
    std::vector<const Clause*> kept;
    for (const auto& c : sent.clauses) {
      if (mentions_any(c.text, opts.speculative_lexicon)) {
        r.removed_clauses.push_back(c.text);
      } else {
        kept.push_back(&c);
      }
    }
    if (kept.empty()) continue;
    std::string out = kept[0]->text;
    for (std::size_t k = 1; k < kept.size(); ++k) {
      out += kept[k - 1]->sep ? kept[k - 1]->sep : ',';
      out += ' ';
      out += kept[k]->text;
    }
    out += sent.terminator;
    kept_sentences.push_back(std::move(out));
  }
  r.caption = text::join(kept_sentences, " ");

  if (r.caption.empty()) {
    r.verdict = CleanVerdict::flag_too_short;
    return r;
  }
  if (repeated_ngram_coverage(r.caption, opts.repeat_ngram) >= opts.repeat_coverage) {
    r.verdict = CleanVerdict::rejected_repetition;
    return r;
  }
  const auto body = text::trim(r.caption);
  for (const auto& p : opts.refusal_prefixes) {
    if (text::starts_with_ci(body, p)) {
      r.verdict = CleanVerdict::rejected_refusal;
      return r;
    }
  }
  for (const auto& p : opts.refusal_substrings) {
    if (text::contains_ci(body, p)) {
      r.verdict = CleanVerdict::rejected_refusal;
      return r;
    }
  }
  if (static_cast<int>(text::split_whitespace(r.caption).size()) < opts.min_tokens) {
    r.verdict = CleanVerdict::flag_too_short;
  }
  return r;
}

CleanResult clean_caption(std::string_view caption, const std::set<std::string>& speculative_lexicon,
                          int min_tokens) {
  CleanOptions o;
  o.speculative_lexicon = speculative_lexicon;
  o.min_tokens = min_tokens;
  return clean_caption(caption, o);
}

// ---------------------------------------------------------------------------
// service calls

namespace {

template <class F>
auto with_retries(int max_attempts, const std::string& what, F&& f) -> decltype(f()) {
  const int attempts = std::max(1, max_attempts);
  std::string last;
  for (int a = 1; a <= attempts; ++a) {
    try {
      return f();
    } catch (const TransportError& e) {
      last = e.what();
    }
  }
  throw ServiceError(what + ": giving up after " + std::to_string(attempts) + " attempts: " + last, false);
}

}  // namespace

PseudoBoxResult acquire_pseudo_boxes(const ImageRef& image, const std::vector<std::string>& phrases,
                                     GroundingClient& client, const PseudoBoxOptions& opts) {
  if (phrases.empty()) throw ArgumentError("acquire_pseudo_boxes: no phrases");
  const auto gt = class_names_to_grounding_text(phrases);
  GroundingRequest req{image.uri, phrases, opts.score_threshold};
  const auto reply = with_retries(opts.max_attempts, "grounding service", [&] { return client.detect(req); });

  PseudoBoxResult r;
  r.grounding_text = gt.text;
  for (const auto& b : reply.boxes) {
    if (b.score < opts.score_threshold) continue;
    if (b.phrase_index < 0 || b.phrase_index >= static_cast<int>(phrases.size())) {
      r.warnings.push_back(image.id + ": dropped box with phrase_index " + std::to_string(b.phrase_index));
      continue;
    }
    GroundedBox g;
    g.bbox = b.bbox;
    if (clip_box(g.bbox, image.width, image.height)) {
      r.warnings.push_back(image.id + ": clipped box for '" + phrases[b.phrase_index] + "' to image bounds");
    }
    if (!(g.bbox[0] < g.bbox[2] && g.bbox[1] < g.bbox[3])) {
      r.warnings.push_back(image.id + ": dropped empty box for '" + phrases[b.phrase_index] + "'");
      continue;
    }
    g.span = gt.spans[b.phrase_index];
    g.phrase = phrases[b.phrase_index];
    r.boxes.push_back(std::move(g));
  }
  r.discarded = static_cast<int>(r.boxes.size()) < opts.min_boxes;
  return r;
}

const std::string& hallucination_prompt_template() {
  static const std::string t =
      "Suppose you are a hallucination annotator who judges the degree of hallucination based on the number of "
      "errors in the description of objects, relations, and attributes. You should check each sentence in the "
      "description one by one.\n"
      "\n"
      "{image}\n"
      "\n"
      "Please carefully compare the image and the given caption below and provide the hallucination score (an "
      "integer value between 0 and 5) based on overall hallucinations in each sub-sentence, where the fewer "
      "descriptive errors in the caption, the lower the hallucination score given. Only output the score without "
      "any explanation.\n"
      "\n"
      "Description: {caption}\n"
      "\n"
      "Output:\n";
  return t;
}

const std::string& detailedness_prompt_template() {
  static const std::string t =
      "Suppose you are an image detail annotator who judges the degree of sentence detailedness based on the "
      "object types, textures and colors, parts of the objects, object actions, precise object locations, and "
      "texts.\n"
      "\n"
      "{image}\n"
      "\n"
      "Please carefully compare the image and the given caption below and provide the detailedness score (an "
      "integer value between 0 and 5) without any explanation, where caption with more factual content give a "
      "higher detailedness score. Only output the score without any explanation.\n"
      "\n"
      "Description: {caption}\n"
      "\n"
      "Output:\n";
  return t;
}

std::string render_judge_prompt(const std::string& tmpl, std::string_view caption) {
  static const std::string key = "{caption}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto at = tmpl.find(key, pos);
    if (at == std::string::npos) break;
    out.append(tmpl, pos, at - pos);
    out += caption;
    pos = at + key.size();
  }
  out.append(tmpl, pos);
  return out;
}

int parse_judge_score(const std::string& reply) {
  const auto t = text::trim(reply);
  if (t.empty() || t.size() > 3) throw JudgeProtocolError("judge reply is not a score", reply);
  int v = 0;
  for (char c : t) {
    if (c < '0' || c > '9') throw JudgeProtocolError("judge reply is not an integer", reply);
    v = v * 10 + (c - '0');
  }
  if (v > 5) throw JudgeProtocolError("judge score out of range [0,5]", reply);
  return v;
}

QualityScores judge_caption_quality(const ImageRef& image, std::string_view caption, TextClient& judge,
                                    int max_attempts) {
  auto ask = [&](const std::string& tmpl) {
    TextRequest req{image.uri, render_judge_prompt(tmpl, caption)};
    const auto reply = with_retries(max_attempts, "judge service", [&] { return judge.complete(req); });
    return parse_judge_score(reply);
  };
  QualityScores s;
  s.detailedness = ask(detailedness_prompt_template());
  s.hallucination = ask(hallucination_prompt_template());
  return s;
}

// ---------------------------------------------------------------------------
// corpus build

ForgeConfig forge_config_from(const KeyValueConfig& kv) {
  ForgeConfig c;
  c.iou_conflict_threshold = kv.get_double("iou_conflict_threshold", c.iou_conflict_threshold);
  const auto lex = kv.get_list("speculative_lexicon", {});
  if (!lex.empty()) {
    c.clean.speculative_lexicon.clear();
    for (const auto& w : lex) c.clean.speculative_lexicon.insert(text::to_lower(w));
  }
  c.clean.min_tokens = static_cast<int>(kv.get_int("min_tokens", c.clean.min_tokens));
  c.clean.refusal_prefixes = kv.get_list("refusal_prefixes", c.clean.refusal_prefixes);
  c.clean.refusal_substrings = kv.get_list("refusal_substrings", c.clean.refusal_substrings);
  c.clean.repeat_ngram = static_cast<int>(kv.get_int("repeat_ngram", c.clean.repeat_ngram));
  c.clean.repeat_coverage = kv.get_double("repeat_coverage", c.clean.repeat_coverage);
  c.regenerate = kv.get_bool("regenerate", c.regenerate);
  c.caption_prompt = kv.get_string("caption_prompt", c.caption_prompt);
  c.pseudo.score_threshold = kv.get_double("score_threshold", c.pseudo.score_threshold);
  c.pseudo.min_boxes = static_cast<int>(kv.get_int("min_pseudo_boxes", c.pseudo.min_boxes));
  c.max_attempts = static_cast<int>(kv.get_int("max_attempts", c.max_attempts));
  c.pseudo.max_attempts = c.max_attempts;
  if (c.iou_conflict_threshold <= 0 || c.iou_conflict_threshold > 1) {
    throw ConfigError("iou_conflict_threshold must be in (0,1]");
  }
  return c;
}

DatasetManifest build_manifest(const std::vector<std::string>& sources, const ForgeConfig& cfg,
                               ForgeServices services, BuildReport* report) {
  BuildReport local;
  BuildReport& rep = report ? *report : local;
  rep = BuildReport{};

  // Read everything first so that a bad source fails before any output exists.
  std::vector<Quadruple> input;
  for (const auto& path : sources) {
    auto recs = read_corpus(path);
    input.insert(input.end(), std::make_move_iterator(recs.begin()), std::make_move_iterator(recs.end()));
  }
  rep.input_records = static_cast<long>(input.size());

  // Records without boxes get pseudo boxes from the grounding service.
  std::vector<Quadruple> boxed;
  for (auto& q : input) {
    if (!q.boxes.empty()) {
      boxed.push_back(std::move(q));
      continue;
    }
    if (!services.grounding) {
      throw ConfigError("record " + q.image.id + " has no boxes and no grounding service is configured");
    }
    const auto phrases = chunk_noun_phrases(q.caption);
    if (phrases.empty()) {
      ++rep.discarded_pseudo;
      continue;
    }
    auto pb = acquire_pseudo_boxes(q.image, phrases, *services.grounding, cfg.pseudo);
    for (auto& w : pb.warnings) rep.warnings.push_back(std::move(w));
    if (pb.discarded) {
      ++rep.discarded_pseudo;
      continue;
    }
    q.grounding_text = std::move(pb.grounding_text);
    q.boxes = std::move(pb.boxes);
    boxed.push_back(std::move(q));
  }

  // Merge per (image, source), keeping first-appearance order.
  std::vector<std::pair<std::string, Source>> order;
  std::map<std::pair<std::string, Source>, std::vector<Quadruple>> buckets;
  for (auto& q : boxed) {
    auto key = std::make_pair(q.image.id, q.source);
    if (!buckets.count(key)) order.push_back(key);
    buckets[key].push_back(std::move(q));
  }
  std::vector<Quadruple> merged;
  for (const auto& key : order) {
    for (auto& q : merge_image_samples(buckets[key], cfg.iou_conflict_threshold)) merged.push_back(std::move(q));
  }
  rep.merge_groups = static_cast<long>(merged.size());

  DatasetManifest m;
  for (auto& q : merged) {
    auto c = clean_caption(q.caption, cfg.clean);
    if (c.verdict == CleanVerdict::flag_too_short && cfg.regenerate) {
      if (!services.captioner) throw ConfigError("regenerate is on but no caption service is configured");
      TextRequest req{q.image.uri, cfg.caption_prompt};
      const auto fresh =
          with_retries(cfg.max_attempts, "caption service", [&] { return services.captioner->complete(req); });
      ++rep.regenerated;
      if (!text::trim(fresh).empty()) c = clean_caption(fresh, cfg.clean);
    }
    rep.removed_clauses += static_cast<long>(c.removed_clauses.size());
    switch (c.verdict) {
      case CleanVerdict::rejected_repetition:
        ++rep.rejected_repetition;
        continue;
      case CleanVerdict::rejected_refusal:
        ++rep.rejected_refusal;
        continue;
      case CleanVerdict::flag_too_short:
        if (c.caption.empty()) {
          ++rep.rejected_empty;
          continue;
        }
        ++rep.flagged_too_short;
        break;
      case CleanVerdict::kept:
        break;
    }
    q.caption = std::move(c.caption);
    m.records.push_back(std::move(q));
  }
  m.stats = compute_stats(m.records);
  return m;
}

std::string emit_build_report(const BuildReport& r) {
  nlohmann::ordered_json j;
  j["input_records"] = r.input_records;
  j["merge_groups"] = r.merge_groups;
  j["rejected_repetition"] = r.rejected_repetition;
  j["rejected_refusal"] = r.rejected_refusal;
  j["rejected_empty"] = r.rejected_empty;
  j["flagged_too_short"] = r.flagged_too_short;
  j["regenerated"] = r.regenerated;
  j["discarded_pseudo"] = r.discarded_pseudo;
  j["removed_clauses"] = r.removed_clauses;
  j["warnings"] = r.warnings;
  return j.dump(2);
}

}  // namespace ovdlab
