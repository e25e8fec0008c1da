#include <doctest.h>

#include <fstream>

#include "halluc/corpus.hpp"
#include "support.hpp"

using namespace halluc;
using halluc::testing::make_record;

TEST_CASE("label and split names") {
  CHECK(to_string(Label::Inaccurate) == "inaccurate");
  CHECK(parse_label("analysis") == Label::Analysis);
  CHECK(parse_label("unsure") == Label::Unsure);
  CHECK_FALSE(parse_label("Inaccurate").has_value());
  CHECK(parse_split("val") == Split::Val);
  CHECK_FALSE(parse_split("test").has_value());
}

TEST_CASE("validate reports each violation kind") {
  auto r = make_record("x", "p", "hello world", {});
  CHECK(validate(r).ok());

  r.spans = {{3, 3, Label::Inaccurate}};
  CHECK(validate(r).has(ViolationKind::EmptySpan));

  r.spans = {{5, 12, Label::Inaccurate}};
  CHECK(validate(r).has(ViolationKind::OutOfBounds));

  r.spans = {{6, 11, Label::Inaccurate}, {0, 5, Label::Analysis}};
  CHECK(validate(r).has(ViolationKind::Unsorted));

  r.spans = {{0, 6, Label::Inaccurate}, {5, 11, Label::Analysis}};
  const auto report = validate(r);
  REQUIRE(report.has(ViolationKind::Overlap));
  CHECK(report.violations.front().message.find("[0,6)") != std::string::npos);

  // Offsets count scalars: "é" is one position.
  auto multi = make_record("m", "p", "caf\xC3\xA9!", {{0, 5, Label::Accurate}});
  CHECK(validate(multi).ok());
  multi.spans = {{0, 6, Label::Accurate}};
  CHECK(validate(multi).has(ViolationKind::OutOfBounds));
}

TEST_CASE("parse_record flags schema problems and unknown labels") {
  ValidationReport report;
  parse_record(R"({"id":"a","image_ref":"i","prompt":"p","response":"r","spans":[],"split":"train"})",
               report);
  CHECK(report.ok());

  report = {};
  parse_record(R"({"id":"a","image_ref":"i","prompt":"p","response":"r","spans":[{"start":0,"end":1,"label":"bogus"}],"split":"train"})",
               report);
  CHECK(report.has(ViolationKind::UnknownLabel));

  report = {};
  parse_record(R"({"id":"a","prompt":"p","response":"r","spans":[],"split":"train"})", report);
  CHECK(report.has(ViolationKind::Schema));

  report = {};
  parse_record(R"({"id":"a","image_ref":"i","prompt":"p","response":"r","spans":[{"start":-1,"end":1,"label":"analysis"}],"split":"train"})",
               report);
  CHECK(report.has(ViolationKind::Schema));

  report = {};
  parse_record("{not json", report);
  CHECK(report.has(ViolationKind::Schema));

  report = {};
  parse_record("{\"id\":\"a\",\"image_ref\":\"i\",\"prompt\":\"p\",\"response\":\"\xC3\",\"spans\":[],\"split\":\"train\"}",
               report);
  CHECK_FALSE(report.ok());
}

TEST_CASE("ingest collects every issue with line numbers") {
  const std::string text =
      R"({"id":"a","image_ref":"i","prompt":"p","response":"hello world","spans":[{"start":0,"end":6,"label":"inaccurate"},{"start":4,"end":8,"label":"analysis"}],"split":"train"})"
      "\n\n"
      R"({"id":"b","image_ref":"i","prompt":"p","response":"ok","spans":[],"split":"val"})"
      "\n"
      R"({"id":"a","image_ref":"i","prompt":"p","response":"dup","spans":[],"split":"val"})"
      "\n";
  try {
    ingest_text(text);
    FAIL("expected IngestError");
  } catch (const IngestError& e) {
    REQUIRE(e.issues().size() == 2);
    CHECK(e.issues()[0].line == 1);
    CHECK(e.issues()[0].id == "a");
    CHECK(e.issues()[0].violation.kind == ViolationKind::Overlap);
    CHECK(e.issues()[1].line == 4);
    CHECK(e.issues()[1].violation.kind == ViolationKind::DuplicateId);
  }
}

TEST_CASE("export is canonical") {
  const auto r = make_record("r1", "Describe.", "A \"big\" caf\xC3\xA9.",
                             {{2, 7, Label::Inaccurate}}, Split::Val);
  CHECK(export_record(r) ==
        R"({"id":"r1","image_ref":"images/r1.jpg","prompt":"Describe.","response":"A \"big\" caf)"
        "\xC3\xA9"
        R"(.","spans":[{"start":2,"end":7,"label":"inaccurate"}],"split":"val"})");
  const Corpus c{r, make_record("r2", "p", "q", {})};
  const std::string text = export_corpus(c);
  CHECK(text.back() == '\n');
  CHECK(text.find('\r') == std::string::npos);
  CHECK(ingest_text(text) == c);
}

TEST_CASE("randomized round trip") {
  Rng rng(99);
  Corpus corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(halluc::testing::random_record(rng, "id" + std::to_string(i)));
  for (const auto& r : corpus) REQUIRE(validate(r).ok());
  const std::string once = export_corpus(corpus);
  const Corpus back = ingest_text(once);
  CHECK(back == corpus);
  CHECK(export_corpus(back) == once);
}

TEST_CASE("ingest reads files") {
  halluc::testing::TempDir dir("corpus");
  const Corpus c{make_record("only", "p", "text here.", {{0, 4, Label::Analysis}})};
  {
    std::ofstream out(dir / "c.jsonl");
    out << export_corpus(c);
  }
  CHECK(ingest(dir / "c.jsonl") == c);
  CHECK_THROWS(ingest(dir / "missing.jsonl"));
}

TEST_CASE("materialized labels fill gaps with Accurate") {
  const auto r = make_record("x", "p", "abcdef", {{1, 3, Label::Inaccurate}, {4, 5, Label::Unsure}});
  const std::vector<Label> expected = {Label::Accurate, Label::Inaccurate, Label::Inaccurate,
                                       Label::Accurate, Label::Unsure,     Label::Accurate};
  CHECK(materialize_labels(r) == expected);
}

TEST_CASE("corpus statistics") {
  // Sentence 1 "aaaa bbbb." has 9 non-space chars, 4 inaccurate -> 44% -> bin 4.
  // Sentence 2 "cc." fully inaccurate -> bin 9. Sentence 3 clean -> not counted.
  const auto r1 = make_record("s1", "p", "aaaa bbbb. cc. dd.",
                              {{0, 4, Label::Inaccurate}, {11, 14, Label::Inaccurate}});
  const auto r2 = make_record("s2", "p", "ee ff.", {{0, 2, Label::Analysis}}, Split::Val);
  const auto s = stats({r1, r2});
  CHECK(s.train_records == 1);
  CHECK(s.val_records == 1);
  CHECK(s.total_characters == 24);
  CHECK(s.label_characters[static_cast<std::size_t>(Label::Inaccurate)] == 7);
  CHECK(s.label_characters[static_cast<std::size_t>(Label::Analysis)] == 2);
  CHECK(s.label_spans[static_cast<std::size_t>(Label::Inaccurate)] == 2);
  CHECK(s.implicit_accurate_characters == 15);
  CHECK(s.sentences == 4);
  CHECK(s.inaccurate_density[4] == 1);
  CHECK(s.inaccurate_density[9] == 1);
  std::size_t counted = 0;
  for (auto n : s.inaccurate_density) counted += n;
  CHECK(counted == 2);
  const std::string csv = stats_csv(s);
  CHECK(csv.rfind("metric,value\n", 0) == 0);
  CHECK(csv.find("records_train,1\n") != std::string::npos);
}
