#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "halluc/corpus.hpp"

namespace halluc {

/// Half-open range of scalar-value offsets.
struct TextRange {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - start; }
  friend bool operator==(const TextRange&, const TextRange&) = default;
};

struct Token {
  std::string text;  // UTF-8
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

using TokenSequence = std::vector<Token>;

/// Sentence spans, trimmed of surrounding whitespace. A sentence ends after
/// '.', '!' or '?' (plus any closing quotes/brackets) when followed by
/// whitespace or end of text.
std::vector<TextRange> split_sentences(std::u32string_view text);
std::vector<TextRange> split_sentences(std::string_view utf8);

/// Maximal runs of non-whitespace characters.
TokenSequence tokenize(std::u32string_view text);
TokenSequence tokenize(std::string_view utf8);

/// Token strings only, in order.
std::vector<std::string> token_texts(std::string_view utf8);

struct SentenceSegment {
  std::size_t start = 0;
  std::size_t end = 0;
  Label label = Label::Accurate;  // never Unsure

  friend bool operator==(const SentenceSegment&, const SentenceSegment&) = default;
};

/// Sentence-level labels: Inaccurate when any Inaccurate or Unsure span
/// touches a non-whitespace character of the sentence; otherwise Analysis
/// when Analysis spans cover at least half of its non-whitespace characters;
/// otherwise Accurate.
std::vector<SentenceSegment> condense(const AnnotatedResponse& record);

enum class Granularity { Binary, Ternary };

std::size_t class_count(Granularity g);
std::string_view to_string(Granularity g);

// Class indices: Accurate = 0, Inaccurate = 1, Analysis = 2 (ternary only).
inline constexpr int kAccurateClass = 0;
inline constexpr int kInaccurateClass = 1;
inline constexpr int kAnalysisClass = 2;

/// Unsure folds to Inaccurate before mapping.
int class_index(Label label, Granularity g);

std::vector<int> reduce(const std::vector<SentenceSegment>& labels, Granularity g);

enum class Density { Sentence, Segment };

std::string_view to_string(Density d);

struct TokenTarget {
  std::size_t token = 0;
  int cls = 0;

  friend bool operator==(const TokenTarget&, const TokenTarget&) = default;
};

/// A labeled unit of a response: either an annotated span or an unannotated
/// gap (implicitly Accurate).
struct LabeledUnit {
  TextRange range;
  Label label = Label::Accurate;
  bool gap = false;
};

/// Spans plus the gaps between them, in order, covering the whole response.
/// Whitespace-only gaps are kept; callers decide whether they matter.
std::vector<LabeledUnit> labeled_units(const AnnotatedResponse& record);

/// Supervision targets: the last token of each unit carries the unit's class,
/// every other token is masked out. Units overlapping no token are skipped.
/// When two segment units end on the same token, the more severe label wins
/// (Inaccurate/Unsure > Analysis > Accurate).
std::vector<TokenTarget> segment_end_tokens(const AnnotatedResponse& record,
                                            const TokenSequence& tokens, Density density,
                                            Granularity granularity);

/// Index into `units` of the unit covering the majority of each token's
/// characters; ties go to the unit that starts earlier.
std::vector<std::size_t> assign_tokens_to_units(const std::vector<LabeledUnit>& units,
                                                const TokenSequence& tokens);

/// Condensed corpus line: the canonical record plus "sentence_labels".
std::string export_condensed(const AnnotatedResponse& record);

}  // namespace halluc
