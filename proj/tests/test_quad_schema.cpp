#include <doctest.h>

#include <cstdio>
#include <string>

#include "ovdlab/errors.hpp"
#include "ovdlab/quad_schema.hpp"
#include "ovdlab/text.hpp"

using namespace ovdlab;

namespace {

// One kitchen image, several phrases in the grounding text, a long caption.
Quadruple kitchen() {
  Quadruple q;
  q.image = {"kitchen_0001", 640, 480, "images/kitchen_0001.jpg"};
  q.grounding_text = "young man. mother. dishes. window.";
  auto add = [&](const std::string& phrase, BoxXYXY b) {
    const auto pos = static_cast<int>(q.grounding_text.find(phrase));
    q.boxes.push_back({b, {pos, pos + static_cast<int>(phrase.size())}, phrase});
  };
  add("young man", {12.5, 40.25, 210.0, 470.0});
  add("mother", {300.0, 20.0, 455.125, 479.0});
  add("dishes", {220.0, 300.0, 290.0, 360.5});
  add("window", {400.0, 0.0, 640.0, 180.0});
  q.caption =
      "A young man stands at a kitchen sink rinsing a stack of white dishes under running water while an older "
      "woman beside him dries a plate with a striped towel. Sunlight falls through a wide window above the counter, "
      "lighting green plants on the sill and a row of copper pans hanging from a rail.";
  q.source = Source::grounding;
  return q;
}

bool has_rule(const std::vector<Violation>& v, const std::string& field, const std::string& rule) {
  for (const auto& x : v)
    if (x.field == field && x.rule == rule) return true;
  return false;
}

}  // namespace

TEST_CASE("valid record has no violations and round-trips") {
  const auto q = kitchen();
  CHECK(validate(q).empty());
  const auto line = emit_record(q);
  CHECK(line.find('\n') == std::string::npos);
  const auto back = parse_record(line);
  CHECK(back == q);
  for (const auto& b : back.boxes) {
    CHECK(back.grounding_text.substr(b.span.start, b.span.end - b.span.start) == b.phrase);
  }
}

TEST_CASE("emission is deterministic and keys keep their fixed order") {
  const auto q = kitchen();
  const auto a = emit_record(q);
  CHECK(a == emit_record(q));
  const auto pi = a.find("\"image\"");
  const auto pg = a.find("\"grounding_text\"");
  const auto pb = a.find("\"boxes\"");
  const auto pc = a.find("\"caption\"");
  const auto ps = a.find("\"source\"");
  CHECK(pi < pg);
  CHECK(pg < pb);
  CHECK(pb < pc);
  CHECK(pc < ps);
  CHECK(a.rfind("{\"image\":{\"id\":\"kitchen_0001\",\"width\":640,\"height\":480,", 0) == 0);
}

TEST_CASE("box order is preserved") {
  auto q = kitchen();
  std::swap(q.boxes[0], q.boxes[2]);
  CHECK(parse_record(emit_record(q)).boxes == q.boxes);
}

TEST_CASE("unicode text round-trips byte for byte") {
  auto q = kitchen();
  q.caption = "Un café crème sur la table — 東京の朝 🍵, naïve façade.";
  q.grounding_text = "café. 東京.";
  q.boxes = {{{1, 1, 5, 5}, {0, 5}, "café"}, {{2, 2, 9, 9}, {7, 13}, "東京"}};
  CHECK(validate(q).empty());
  CHECK(parse_record(emit_record(q)) == q);
}

TEST_CASE("pre-filter image_text record with no boxes round-trips") {
  Quadruple q;
  q.image = {"pair_17", 64, 64, "synth:17:4"};
  q.grounding_text = "";
  q.caption = "A blue square sits on a dark background.";
  q.source = Source::image_text;
  const auto line = emit_record(q);
  CHECK(line.find("\"boxes\":[]") != std::string::npos);
  CHECK(parse_record(line) == q);
}

TEST_CASE("bbox coordinates are emitted with at most 4 decimals") {
  auto q = kitchen();
  q.boxes[0].bbox = {1.123456789, 2.00004, 3.99995, 7.5};
  const auto line = emit_record(q);
  CHECK(line.find("[1.1235,2.0,4.0,7.5]") != std::string::npos);
  const auto back = parse_record(line);
  CHECK(back.boxes[0].bbox[0] == 1.1235);
}

TEST_CASE("each broken invariant yields exactly one violation for it") {
  SUBCASE("bbox ordering") {
    auto q = kitchen();
    q.boxes[1].bbox = {300.0, 20.0, 300.0, 400.0};
    const auto v = validate(q);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation{"boxes[1].bbox", "ordering"});
  }
  SUBCASE("bbox bounds") {
    auto q = kitchen();
    q.boxes[3].bbox[2] = 641.0;
    const auto v = validate(q);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation{"boxes[3].bbox", "bounds"});
  }
  SUBCASE("phrase consistency") {
    auto q = kitchen();
    q.boxes[2].phrase = "plates";
    const auto v = validate(q);
    REQUIRE(v.size() == 1);
    CHECK(v[0] == Violation{"boxes[2].phrase", "phrase consistency"});
  }
  SUBCASE("span range") {
    auto q = kitchen();
    q.boxes[0].span.end = static_cast<int>(q.grounding_text.size()) + 1;
    const auto v = validate(q);
    REQUIRE(v.size() == 1);
    CHECK(v[0].field == "boxes[0].span");
  }
  SUBCASE("image fields") {
    auto q = kitchen();
    q.image.width = 0;
    q.boxes.clear();
    CHECK(has_rule(validate(q), "image.width", "positive"));
    CHECK(validate(q).size() == 1);
    q = kitchen();
    q.image.id.clear();
    CHECK(validate(q) == std::vector<Violation>{{"image.id", "non-empty"}});
  }
  SUBCASE("caption") {
    auto q = kitchen();
    q.caption = "   ";
    CHECK(validate(q) == std::vector<Violation>{{"caption", "non-empty"}});
  }
  SUBCASE("utf8") {
    auto q = kitchen();
    q.caption += "\xc3";
    CHECK(validate(q) == std::vector<Violation>{{"caption", "utf8"}});
  }
}

TEST_CASE("parse errors carry a byte offset, validation errors a field") {
  const auto line = emit_record(kitchen());
  try {
    parse_record(line.substr(0, 40));
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset() > 0);
    CHECK(e.byte_offset() <= 41);
  }

  auto q = kitchen();
  auto bad = emit_record(q);
  const auto key = std::string("\"span\":[0,9]");
  const auto at = bad.find(key);
  REQUIRE(at != std::string::npos);
  bad.replace(at, key.size(), "\"span\":[0,99]");
  try {
    parse_record(bad);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(e.field() == "boxes[0].span");
  }

  CHECK_THROWS_AS(parse_record(R"({"image":{"id":"a","width":"64","height":64,"uri":""},"grounding_text":"",)"
                               R"("boxes":[],"caption":"x","source":"detection"})"),
                  ValidationError);
  CHECK_THROWS_AS(parse_record(R"({"image":{"id":"a","width":64,"height":64,"uri":""},"grounding_text":"",)"
                               R"("boxes":[],"caption":"x","source":"web"})"),
                  ValidationError);
}

TEST_CASE("emitting an invalid record throws") {
  auto q = kitchen();
  q.boxes[0].bbox = {5, 5, 1, 1};
  CHECK_THROWS_AS(emit_record(q), ValidationError);
}

TEST_CASE("manifest stats") {
  auto a = kitchen();
  auto b = kitchen();
  a.caption = text::join(std::vector<std::string>(100, "word"), " ");
  b.caption = text::join(std::vector<std::string>(130, "word"), " ");
  b.source = Source::detection;
  const auto s = compute_stats({a, b});
  CHECK(s.count == 2);
  CHECK(s.mean_caption_words == 115.0);
  CHECK(s.per_source_counts.at("grounding") == 1);
  CHECK(s.per_source_counts.at("detection") == 1);
  CHECK(compute_stats({}).count == 0);
}

TEST_CASE("corpus files round-trip and report line numbers") {
  const std::string path = "test_quad_schema_corpus.jsonl";
  auto a = kitchen();
  auto b = kitchen();
  b.image.id = "kitchen_0002";
  write_corpus(path, {a, b});
  const auto back = read_corpus(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1] == b);
  {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    std::fputs("{broken\n", f);
    std::fclose(f);
  }
  try {
    read_corpus(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  std::remove(path.c_str());
}
