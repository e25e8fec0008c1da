#include <sstream>

#include "halluc/corpus.hpp"
#include "halluc/segmenter.hpp"
#include "halluc/text.hpp"

namespace halluc {

CorpusStats stats(const Corpus& corpus) {
  std::vector<IngestIssue> issues;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (auto& violation : validate(corpus[i]).violations) {
      issues.push_back({i + 1, corpus[i].id, std::move(violation)});
    }
  }
  if (!issues.empty()) throw IngestError(std::move(issues));

  CorpusStats out;
  for (const auto& record : corpus) {
    (record.split == Split::Train ? out.train_records : out.val_records) += 1;

    const std::u32string text = decode_utf8(record.response);
    out.total_characters += text.size();
    std::size_t covered = 0;
    for (const auto& span : record.spans) {
      const auto label = static_cast<std::size_t>(span.label);
      out.label_characters[label] += span.end - span.start;
      out.label_spans[label] += 1;
      covered += span.end - span.start;
    }
    out.implicit_accurate_characters += text.size() - covered;

    const auto labels = materialize_labels(record);
    for (const auto& sentence : split_sentences(std::u32string_view(text))) {
      ++out.sentences;
      std::size_t non_space = 0;
      std::size_t inaccurate = 0;
      for (std::size_t i = sentence.start; i < sentence.end; ++i) {
        if (is_space(text[i])) continue;
        ++non_space;
        if (labels[i] == Label::Inaccurate) ++inaccurate;
      }
      if (inaccurate == 0) continue;
      const std::size_t bin = std::min(kDensityBins - 1, kDensityBins * inaccurate / non_space);
      out.inaccurate_density[bin] += 1;
    }
  }
  return out;
}

std::string stats_csv(const CorpusStats& s) {
  std::ostringstream out;
  out << "metric,value\n";
  out << "records_train," << s.train_records << '\n';
  out << "records_val," << s.val_records << '\n';
  out << "characters_total," << s.total_characters << '\n';
  out << "characters_implicit_accurate," << s.implicit_accurate_characters << '\n';
  for (std::size_t l = 0; l < kLabelCount; ++l) {
    out << "characters_" << to_string(static_cast<Label>(l)) << ',' << s.label_characters[l]
        << '\n';
  }
  for (std::size_t l = 0; l < kLabelCount; ++l) {
    out << "spans_" << to_string(static_cast<Label>(l)) << ',' << s.label_spans[l] << '\n';
  }
  out << "sentences," << s.sentences << '\n';
  for (std::size_t b = 0; b < kDensityBins; ++b) {
    out << "inaccurate_density_" << b * 10 << '_' << (b + 1) * 10 << ','
        << s.inaccurate_density[b] << '\n';
  }
  return out.str();
}

}  // namespace halluc
