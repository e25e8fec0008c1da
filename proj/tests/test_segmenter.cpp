#include <doctest.h>

#include "halluc/segmenter.hpp"
#include "support.hpp"

using namespace halluc;
using halluc::testing::make_record;

namespace {

// Direct per-character reading of the condensation rule.
Label brute_condense(const std::u32string& text, const std::vector<SpanAnnotation>& spans,
                     TextRange sentence) {
  std::size_t nonws = 0, analysis = 0;
  bool inaccurate = false;
  for (std::size_t i = sentence.start; i < sentence.end; ++i) {
    if (is_space(text[i])) continue;
    ++nonws;
    Label label = Label::Accurate;
    for (const auto& s : spans) {
      if (s.start <= i && i < s.end) label = s.label;
    }
    if (label == Label::Inaccurate || label == Label::Unsure) inaccurate = true;
    if (label == Label::Analysis) ++analysis;
  }
  if (inaccurate) return Label::Inaccurate;
  if (2 * analysis >= nonws) return Label::Analysis;
  return Label::Accurate;
}

}  // namespace

TEST_CASE("sentence split on terminators followed by space") {
  const auto s = split_sentences(std::string_view("Hello there. How are you?  Fine!"));
  REQUIRE(s.size() == 3);
  CHECK(s[0] == TextRange{0, 12});
  CHECK(s[1] == TextRange{13, 25});
  CHECK(s[2] == TextRange{27, 32});
}

TEST_CASE("sentence split edge cases") {
  // Decimal point and inner dots do not end a sentence.
  CHECK(split_sentences(std::string_view("It costs 3.50 dollars. Yes.")).size() == 2);
  // Closing quote stays with its sentence.
  const auto q = split_sentences(std::string_view("He said \"stop.\" Then left."));
  REQUIRE(q.size() == 2);
  CHECK(q[0] == TextRange{0, 15});
  // Trailing text without terminator is a sentence; surrounding space trimmed.
  const auto t = split_sentences(std::string_view("  One. two"));
  REQUIRE(t.size() == 2);
  CHECK(t[0] == TextRange{2, 6});
  CHECK(t[1] == TextRange{7, 10});
  CHECK(split_sentences(std::string_view("   ")).empty());
  CHECK(split_sentences(std::string_view("")).empty());
}

TEST_CASE("sentence offsets count scalar values") {
  const auto s = split_sentences(std::string_view("Un caf\xC3\xA9. \xE6\x97\xA5\xE6\x9C\xAC."));
  REQUIRE(s.size() == 2);
  CHECK(s[0] == TextRange{0, 8});
  CHECK(s[1] == TextRange{9, 12});
}

TEST_CASE("tokenize yields maximal non-space runs with scalar offsets") {
  const auto tokens = tokenize(std::string_view(" ab  c\xC3\xA9 d."));
  REQUIRE(tokens.size() == 3);
  CHECK(tokens[0] == Token{"ab", 1, 3});
  CHECK(tokens[1] == Token{"c\xC3\xA9", 5, 7});
  CHECK(tokens[2] == Token{"d.", 8, 10});
  CHECK(token_texts("x y") == std::vector<std::string>{"x", "y"});
}

TEST_CASE("condense hand examples") {
  // Single Inaccurate word makes the whole sentence Inaccurate.
  auto r = make_record("c", "p", "The bus is red. The sky is blue.", {{11, 14, Label::Inaccurate}});
  auto c = condense(r);
  REQUIRE(c.size() == 2);
  CHECK(c[0].label == Label::Inaccurate);
  CHECK(c[1].label == Label::Accurate);

  // Unsure folds to Inaccurate.
  r.spans = {{16, 19, Label::Unsure}};
  CHECK(condense(r)[1].label == Label::Inaccurate);

  // Exactly half Analysis ties to Analysis.
  r = make_record("h", "p", "ab cd", {{0, 2, Label::Analysis}});
  CHECK(condense(r)[0].label == Label::Analysis);
  r.spans = {{0, 1, Label::Analysis}};
  CHECK(condense(r)[0].label == Label::Accurate);

  // A span touching only whitespace between sentences changes nothing.
  r = make_record("w", "p", "Aa. Bb.", {{3, 4, Label::Inaccurate}});
  c = condense(r);
  CHECK(c[0].label == Label::Accurate);
  CHECK(c[1].label == Label::Accurate);

  r.spans = {{0, 2, Label::Inaccurate}, {2, 3, Label::Inaccurate}};
  CHECK(condense(r)[0].label == Label::Inaccurate);

  r.spans = {{3, 2, Label::Inaccurate}};
  CHECK_THROWS_AS(condense(r), std::invalid_argument);
}

TEST_CASE("condense matches brute force on random records") {
  Rng rng(5);
  for (int i = 0; i < 300; ++i) {
    const auto r = halluc::testing::random_record(rng, "r" + std::to_string(i));
    const auto text = decode_utf8(r.response);
    const auto sentences = split_sentences(text);
    const auto condensed = condense(r);
    REQUIRE(condensed.size() == sentences.size());
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      CHECK(condensed[s].start == sentences[s].start);
      CHECK(condensed[s].end == sentences[s].end);
      CHECK(condensed[s].label == brute_condense(text, r.spans, sentences[s]));
    }
  }
}

TEST_CASE("class mapping") {
  CHECK(class_index(Label::Accurate, Granularity::Binary) == kAccurateClass);
  CHECK(class_index(Label::Inaccurate, Granularity::Binary) == kInaccurateClass);
  CHECK(class_index(Label::Unsure, Granularity::Ternary) == kInaccurateClass);
  CHECK(class_index(Label::Analysis, Granularity::Ternary) == kAnalysisClass);
  CHECK(class_index(Label::Analysis, Granularity::Binary) == kAccurateClass);
  CHECK(class_count(Granularity::Binary) == 2);
  CHECK(class_count(Granularity::Ternary) == 3);
}

TEST_CASE("labeled units cover the response") {
  const auto r = make_record("u", "p", "aa bb cc", {{3, 5, Label::Inaccurate}});
  const auto units = labeled_units(r);
  REQUIRE(units.size() == 3);
  CHECK(units[0].gap);
  CHECK(units[0].range == TextRange{0, 3});
  CHECK(units[1].label == Label::Inaccurate);
  CHECK_FALSE(units[1].gap);
  CHECK(units[2].range == TextRange{5, 8});
}

TEST_CASE("sentence density targets the last token of each sentence") {
  const auto r = make_record("t", "p", "The bus is red. The sky is blue.", {{11, 14, Label::Inaccurate}});
  const auto tokens = tokenize(r.response);
  const auto targets = segment_end_tokens(r, tokens, Density::Sentence, Granularity::Binary);
  const std::vector<TokenTarget> expected = {{3, kInaccurateClass}, {7, kAccurateClass}};
  CHECK(targets == expected);
}

TEST_CASE("segment density targets the last token of each span and gap") {
  //                       0   4   8  11  15  19
  const auto r = make_record("t", "p", "The bus is red. It seems calm.",
                             {{11, 15, Label::Inaccurate}, {16, 30, Label::Analysis}});
  const auto tokens = tokenize(r.response);
  REQUIRE(tokens.size() == 7);
  const auto ternary = segment_end_tokens(r, tokens, Density::Segment, Granularity::Ternary);
  const std::vector<TokenTarget> expected = {
      {2, kAccurateClass}, {3, kInaccurateClass}, {6, kAnalysisClass}};
  CHECK(ternary == expected);
  const auto binary = segment_end_tokens(r, tokens, Density::Segment, Granularity::Binary);
  CHECK(binary.back() == TokenTarget{6, kAccurateClass});
}

TEST_CASE("segment units ending on one token keep the most severe label") {
  // "redish" is split: "red" Inaccurate, "ish" Analysis; both end on token 0.
  const auto r = make_record("t", "p", "redish car",
                             {{0, 3, Label::Inaccurate}, {3, 6, Label::Analysis}});
  const auto tokens = tokenize(r.response);
  const auto targets = segment_end_tokens(r, tokens, Density::Segment, Granularity::Ternary);
  REQUIRE(targets.size() == 2);
  CHECK(targets[0] == TokenTarget{0, kInaccurateClass});
  CHECK(targets[1] == TokenTarget{1, kAccurateClass});
}

TEST_CASE("token ownership by majority with earlier-unit ties") {
  const auto r = make_record("t", "p", "abcd efgh", {{0, 2, Label::Inaccurate}, {7, 9, Label::Analysis}});
  const auto units = labeled_units(r);
  const auto tokens = tokenize(r.response);
  const auto owner = assign_tokens_to_units(units, tokens);
  // "abcd": 2 chars Inaccurate, 2 chars gap -> tie -> Inaccurate (earlier).
  CHECK(units[owner[0]].label == Label::Inaccurate);
  // "efgh": 2 gap chars, 2 Analysis -> tie -> gap.
  CHECK(units[owner[1]].gap);
}

TEST_CASE("condensed export appends sentence labels") {
  const auto r = make_record("e", "p", "Aa. Bb.", {{4, 6, Label::Inaccurate}});
  const std::string line = export_condensed(r);
  CHECK(line.rfind(export_record(r).substr(0, export_record(r).size() - 1), 0) == 0);
  CHECK(line.find(R"("sentence_labels":[{"start":0,"end":3,"label":"accurate"},{"start":4,"end":7,"label":"inaccurate"}])") !=
        std::string::npos);
}
