#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "halluc/corpus.hpp"

namespace halluc {

struct WordCounts {
  std::size_t total = 0;
  std::size_t inaccurate = 0;  // Unsure words count here
  std::size_t analysis = 0;
};

/// Each word takes the label covering most of its characters (gaps count as
/// Accurate; ties go to the unit that starts earlier).
WordCounts count_words(const AnnotatedResponse& record);

/// Inaccurate words / (all words - Analysis words); 0 when the denominator
/// is 0.
double hallucination_rate(const AnnotatedResponse& record);

struct EvalRecord {
  std::string id;
  double reward_score = 0.0;
  double truthful_fraction = 0.0;  // 1 - hallucination rate
};

EvalRecord make_eval_record(const AnnotatedResponse& record, double reward_score);

/// Pearson correlation; nullopt when fewer than two points or either axis
/// has zero variance.
std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys);

std::optional<double> correlate(std::span<const EvalRecord> records);

/// `id,reward_score,human_score` with a header row.
std::string correlation_csv(std::span<const EvalRecord> records);
/// Inverse of correlation_csv; throws std::invalid_argument on bad rows.
std::vector<EvalRecord> parse_correlation_csv(std::string_view text);

}  // namespace halluc
