#include "halluc/segmenter.hpp"

#include <algorithm>
#include <stdexcept>

#include <json.hpp>

#include "halluc/text.hpp"

namespace halluc {

namespace {

bool is_terminator(char32_t c) { return c == U'.' || c == U'!' || c == U'?'; }

bool is_closer(char32_t c) {
  switch (c) {
    case U'"':
    case U'\'':
    case U')':
    case U']':
    case U'}':
    case U'”':  // right double quotation mark
    case U'’':  // right single quotation mark
    case U'»':  // right-pointing guillemet
      return true;
    default:
      return false;
  }
}

std::size_t skip_space(std::u32string_view text, std::size_t i) {
  while (i < text.size() && is_space(text[i])) ++i;
  return i;
}

// prefix[i] = number of non-whitespace characters in text[0, i).
std::vector<std::size_t> non_space_prefix(std::u32string_view text) {
  std::vector<std::size_t> prefix(text.size() + 1, 0);
  for (std::size_t i = 0; i < text.size(); ++i) {
    prefix[i + 1] = prefix[i] + (is_space(text[i]) ? 0 : 1);
  }
  return prefix;
}

int severity(Label label) {
  switch (label) {
    case Label::Inaccurate:
    case Label::Unsure:
      return 2;
    case Label::Analysis:
      return 1;
    case Label::Accurate:
      return 0;
  }
  return 0;
}

}  // namespace

std::vector<TextRange> split_sentences(std::u32string_view text) {
  std::vector<TextRange> out;
  std::size_t start = skip_space(text, 0);
  std::size_t i = start;
  while (i < text.size()) {
    if (!is_terminator(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < text.size() && is_closer(text[j])) ++j;
    if (j == text.size() || is_space(text[j])) {
      out.push_back({start, j});
      start = skip_space(text, j);
      i = start;
    } else {
      i = j;
    }
  }
  if (start < text.size()) {
    std::size_t end = text.size();
    while (end > start && is_space(text[end - 1])) --end;
    if (end > start) out.push_back({start, end});
  }
  return out;
}

std::vector<TextRange> split_sentences(std::string_view utf8) {
  return split_sentences(std::u32string_view(decode_utf8(utf8)));
}

TokenSequence tokenize(std::u32string_view text) {
  TokenSequence tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    i = skip_space(text, i);
    if (i == text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    tokens.push_back({encode_utf8(text.substr(i, j - i)), i, j});
    i = j;
  }
  return tokens;
}

TokenSequence tokenize(std::string_view utf8) {
  return tokenize(std::u32string_view(decode_utf8(utf8)));
}

std::vector<std::string> token_texts(std::string_view utf8) {
  std::vector<std::string> out;
  for (auto& token : tokenize(utf8)) out.push_back(std::move(token.text));
  return out;
}

std::vector<SentenceSegment> condense(const AnnotatedResponse& record) {
  const auto report = validate(record);
  if (!report.ok()) {
    throw std::invalid_argument("cannot condense invalid record \"" + record.id +
                                "\": " + report.violations.front().message);
  }
  const std::u32string text = decode_utf8(record.response);
  const auto prefix = non_space_prefix(text);
  const auto non_space = [&](std::size_t a, std::size_t b) { return prefix[b] - prefix[a]; };

  std::vector<SentenceSegment> out;
  for (const auto& sentence : split_sentences(std::u32string_view(text))) {
    bool inaccurate = false;
    std::size_t analysis = 0;
    for (const auto& span : record.spans) {
      const std::size_t a = std::max(span.start, sentence.start);
      const std::size_t b = std::min(span.end, sentence.end);
      if (a >= b) continue;
      const std::size_t covered = non_space(a, b);
      if (covered == 0) continue;
      if (span.label == Label::Inaccurate || span.label == Label::Unsure) inaccurate = true;
      if (span.label == Label::Analysis) analysis += covered;
    }
    Label label = Label::Accurate;
    if (inaccurate) {
      label = Label::Inaccurate;
    } else if (2 * analysis >= non_space(sentence.start, sentence.end)) {
      label = Label::Analysis;
    }
    out.push_back({sentence.start, sentence.end, label});
  }
  return out;
}

std::size_t class_count(Granularity g) { return g == Granularity::Binary ? 2 : 3; }

std::string_view to_string(Granularity g) {
  return g == Granularity::Binary ? "binary" : "ternary";
}

int class_index(Label label, Granularity g) {
  switch (label) {
    case Label::Accurate:
      return kAccurateClass;
    case Label::Inaccurate:
    case Label::Unsure:
      return kInaccurateClass;
    case Label::Analysis:
      return g == Granularity::Binary ? kAccurateClass : kAnalysisClass;
  }
  return kAccurateClass;
}

std::vector<int> reduce(const std::vector<SentenceSegment>& labels, Granularity g) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& segment : labels) out.push_back(class_index(segment.label, g));
  return out;
}

std::string_view to_string(Density d) { return d == Density::Sentence ? "sentence" : "segment"; }

std::vector<LabeledUnit> labeled_units(const AnnotatedResponse& record) {
  const std::size_t length = scalar_length(record.response);
  std::vector<LabeledUnit> units;
  std::size_t cursor = 0;
  for (const auto& span : record.spans) {
    if (span.start > cursor) units.push_back({{cursor, span.start}, Label::Accurate, true});
    units.push_back({{span.start, span.end}, span.label, false});
    cursor = span.end;
  }
  if (cursor < length) units.push_back({{cursor, length}, Label::Accurate, true});
  return units;
}

std::vector<TokenTarget> segment_end_tokens(const AnnotatedResponse& record,
                                            const TokenSequence& tokens, Density density,
                                            Granularity granularity) {
  std::vector<TextRange> ranges;
  std::vector<Label> labels;
  if (density == Density::Sentence) {
    for (const auto& sentence : condense(record)) {
      ranges.push_back({sentence.start, sentence.end});
      labels.push_back(sentence.label);
    }
  } else {
    const auto report = validate(record);
    if (!report.ok()) {
      throw std::invalid_argument("invalid record \"" + record.id +
                                  "\": " + report.violations.front().message);
    }
    for (const auto& unit : labeled_units(record)) {
      ranges.push_back(unit.range);
      labels.push_back(unit.label == Label::Unsure ? Label::Inaccurate : unit.label);
    }
  }

  std::vector<TokenTarget> out;
  std::vector<Label> chosen;
  std::size_t first = 0;  // first token that may still overlap the current unit
  for (std::size_t u = 0; u < ranges.size(); ++u) {
    const auto& range = ranges[u];
    while (first < tokens.size() && tokens[first].end <= range.start) ++first;
    std::size_t last = first;
    bool any = false;
    for (std::size_t t = first; t < tokens.size() && tokens[t].start < range.end; ++t) {
      last = t;
      any = true;
    }
    if (!any) continue;
    const int cls = class_index(labels[u], granularity);
    if (!out.empty() && out.back().token == last) {
      if (severity(labels[u]) > severity(chosen.back())) {
        out.back().cls = cls;
        chosen.back() = labels[u];
      }
      continue;
    }
    out.push_back({last, cls});
    chosen.push_back(labels[u]);
  }
  return out;
}

std::vector<std::size_t> assign_tokens_to_units(const std::vector<LabeledUnit>& units,
                                                const TokenSequence& tokens) {
  std::vector<std::size_t> out(tokens.size(), 0);
  std::size_t first = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto& token = tokens[t];
    while (first < units.size() && units[first].range.end <= token.start) ++first;
    std::size_t best = first;
    std::size_t best_cover = 0;
    for (std::size_t u = first; u < units.size() && units[u].range.start < token.end; ++u) {
      const std::size_t a = std::max(units[u].range.start, token.start);
      const std::size_t b = std::min(units[u].range.end, token.end);
      const std::size_t cover = b > a ? b - a : 0;
      if (cover > best_cover) {  // strict: earlier unit wins ties
        best = u;
        best_cover = cover;
      }
    }
    out[t] = best;
  }
  return out;
}

std::string export_condensed(const AnnotatedResponse& record) {
  auto doc = nlohmann::ordered_json::parse(export_record(record));
  doc["sentence_labels"] = nlohmann::ordered_json::array();
  for (const auto& sentence : condense(record)) {
    nlohmann::ordered_json item;
    item["start"] = sentence.start;
    item["end"] = sentence.end;
    item["label"] = to_string(sentence.label);
    doc["sentence_labels"].push_back(std::move(item));
  }
  return doc.dump();
}

}  // namespace halluc
