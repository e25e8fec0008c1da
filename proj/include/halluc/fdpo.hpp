#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "halluc/corpus.hpp"
#include "halluc/scorer.hpp"

namespace halluc {

enum class PreferenceClass { Dispreferred = 0, Preferred = 1, Neutral = 2 };

/// How Analysis spans enter the preference loss: ignored (IA) or treated as
/// dispreferred (DA).
enum class AnalysisMode { Ignore, Disprefer };

std::string_view to_string(AnalysisMode mode);
std::optional<AnalysisMode> parse_analysis_mode(std::string_view text);

struct ClassMap {
  AnalysisMode mode = AnalysisMode::Ignore;

  PreferenceClass operator()(Label label) const;
};

/// One labeled chunk: x is the prompt plus every response token before the
/// chunk, y the chunk's tokens.
struct FdpoSample {
  std::vector<TokenId> context;
  std::vector<TokenId> segment;
  PreferenceClass cls = PreferenceClass::Neutral;
};

/// Token range [begin, end) of the response.
struct FdpoSegment {
  std::size_t begin = 0;
  std::size_t end = 0;
  PreferenceClass cls = PreferenceClass::Neutral;
};

/// A whole response with its chunks, scored in a single forward pass. The
/// segments partition the response tokens in order.
struct FdpoSequence {
  std::string id;
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;
  std::vector<FdpoSegment> segments;
};

/// Each token joins the span or gap covering most of its characters; runs of
/// tokens sharing a unit form one segment.
FdpoSequence make_fdpo_sequence(const AnnotatedResponse& record, const Vocabulary& vocab,
                                const ClassMap& map);

std::vector<FdpoSample> to_samples(const FdpoSequence& sequence);

struct FdpoConfig {
  double beta = 0.5;
  std::size_t epochs = 5;
  double learning_rate = 1e-6;
  double warmup_ratio = 0.03;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

/// Sum of log-probabilities of each segment, read off one forward pass.
std::vector<double> segment_logprobs(const Scorer& model, const FdpoSequence& sequence);

/// r = log pi_policy(y|x) - log pi_ref(y|x) for each segment.
std::vector<double> segment_rewards(const Scorer& policy, const Scorer& reference,
                                    const FdpoSequence& sequence);

/// Pairwise preference loss -log sigmoid(beta * (r_w - r_l)).
double dpo_loss(const Scorer& policy, const Scorer& reference, std::span<const TokenId> context,
                std::span<const TokenId> preferred, std::span<const TokenId> dispreferred,
                double beta, std::vector<double>* grad = nullptr);

/// Per-segment loss -log sigmoid(beta * k) with k = r (preferred) or -r
/// (dispreferred). Neutral segments are excluded.
double fdpo_segment_loss(double reward, PreferenceClass cls, double beta);
/// d(segment loss)/dr; zero for Neutral.
double fdpo_segment_loss_grad(double reward, PreferenceClass cls, double beta);

struct FdpoLoss {
  double value = 0.0;
  std::size_t active_segments = 0;
  bool no_signal = false;  // every segment was Neutral; value is 0
};

/// Mean per-segment loss over the non-Neutral segments of the batch.
/// `reference_logprobs[i]` holds segment_logprobs(reference, batch[i]).
FdpoLoss fdpo_loss(const Scorer& policy, std::span<const FdpoSequence> batch,
                   std::span<const std::vector<double>> reference_logprobs, double beta,
                   std::vector<double>* grad = nullptr);

FdpoLoss fdpo_loss(const Scorer& policy, const Scorer& reference,
                   std::span<const FdpoSequence> batch, double beta,
                   std::vector<double>* grad = nullptr);

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t batch, const std::string& what)
      : std::runtime_error(what), batch_(batch) {}
  std::size_t batch() const { return batch_; }

 private:
  std::size_t batch_;
};

struct FdpoTrainResult {
  Scorer policy;
  std::vector<double> epoch_loss;  // mean batch loss per epoch, before each update
  std::size_t steps = 0;
  std::size_t updates = 0;  // steps that carried a non-Neutral segment
};

/// Minibatch gradient descent on the FDPO loss with warmup + cosine decay.
/// Only the blocks in fdpo_trainable() move.
FdpoTrainResult train_fdpo(Scorer policy, const Scorer& reference, const Corpus& corpus,
                           const ClassMap& map, const FdpoConfig& config);

}  // namespace halluc
