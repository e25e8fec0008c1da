#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "halluc/corpus.hpp"
#include "halluc/scorer.hpp"
#include "halluc/segmenter.hpp"

namespace halluc {

struct RmConfig {
  Density density = Density::Sentence;
  Granularity granularity = Granularity::Binary;
  std::size_t epochs = 20;
  double learning_rate = 0.5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
};

/// One response prepared for token classification. `labels` and `mask` run
/// parallel to the response tokens; only masked-in positions are supervised.
struct RmExample {
  std::string id;
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
  std::vector<int> labels;
  std::vector<bool> mask;

  std::size_t target_count() const;
};

RmExample make_rm_example(const AnnotatedResponse& record, const Vocabulary& vocab,
                          Density density, Granularity granularity);

/// Mean cross-entropy over all supervised positions of the batch. Throws
/// std::invalid_argument if the batch has no targets.
double rm_loss(const Scorer& model, std::span<const RmExample> batch,
               std::vector<double>* grad = nullptr);

struct RmTrainResult {
  Scorer model;
  double initial_loss = 0.0;       // whole-corpus loss before any update
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Minibatch SGD on rm_loss; only the blocks in reward_trainable() move.
RmTrainResult train_rm(Scorer model, const Corpus& corpus, const RmConfig& config);

/// Rows are gold classes, columns predictions.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> per_class_f1;
  ConfusionMatrix confusion;
  std::size_t total = 0;
};

/// Classes with neither gold nor predicted instances are left out of the
/// macro average.
ClassificationMetrics metrics_from_confusion(const ConfusionMatrix& confusion);
ClassificationMetrics classification_metrics(std::span<const int> gold, std::span<const int> predicted,
                                             std::size_t classes);

/// Argmax class at every target position vs gold.
ClassificationMetrics eval_rm(const Scorer& model, const Corpus& corpus, const RmConfig& config);

/// Merges Accurate and Analysis (ternary classes 0 and 2) into binary class 0.
ConfusionMatrix reduce_ternary_to_binary(const ConfusionMatrix& ternary);
std::vector<int> reduce_ternary_to_binary(std::span<const int> ternary);

inline constexpr double kProbabilityFloor = 1e-12;

struct PassageScore {
  std::vector<double> probabilities;    // per-sentence non-hallucination probability
  std::vector<double> sentence_scores;  // -ln max(p, floor)
  double passage = 0.0;                 // mean of sentence_scores
};

PassageScore passage_score_from_probabilities(std::span<const double> probabilities);

/// Probability of "no hallucination" from one row of class logits: class 0
/// for binary heads, classes 0 and 2 for ternary heads.
double non_hallucination_probability(std::span<const double> logits, Granularity granularity);

/// Scores each sentence at its last token. Throws std::invalid_argument for
/// a response without sentences or a head that does not match `granularity`.
PassageScore score_passage(const Scorer& model, std::string_view prompt, std::string_view response,
                           Granularity granularity);

Granularity granularity_of(const Scorer& model);

/// {"id":...,"sentence_scores":[...],"passage_score":...} with an optional
/// trailing "prompt_id".
std::string score_report_line(const std::string& id, const PassageScore& score,
                              const std::optional<std::string>& prompt_id = std::nullopt);

}  // namespace halluc
