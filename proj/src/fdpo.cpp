#include "halluc/fdpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "halluc/random.hpp"
#include "halluc/schedule.hpp"
#include "halluc/segmenter.hpp"

namespace halluc {

namespace {

double sign_of(PreferenceClass cls) { return cls == PreferenceClass::Preferred ? 1.0 : -1.0; }

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw NonFiniteLoss(std::string(what) + " is not finite");
}

}  // namespace

std::string_view to_string(AnalysisMode mode) {
  return mode == AnalysisMode::Ignore ? "ia" : "da";
}

std::optional<AnalysisMode> parse_analysis_mode(std::string_view text) {
  if (text == "ia" || text == "IA") return AnalysisMode::Ignore;
  if (text == "da" || text == "DA") return AnalysisMode::Disprefer;
  return std::nullopt;
}

PreferenceClass ClassMap::operator()(Label label) const {
  switch (label) {
    case Label::Accurate:
      return PreferenceClass::Preferred;
    case Label::Inaccurate:
    case Label::Unsure:
      return PreferenceClass::Dispreferred;
    case Label::Analysis:
      return mode == AnalysisMode::Ignore ? PreferenceClass::Neutral
                                          : PreferenceClass::Dispreferred;
  }
  return PreferenceClass::Neutral;
}

FdpoSequence make_fdpo_sequence(const AnnotatedResponse& record, const Vocabulary& vocab,
                                const ClassMap& map) {
  FdpoSequence out;
  out.id = record.id;
  out.prompt = vocab.encode(record.prompt);
  const auto tokens = tokenize(record.response);
  for (const auto& token : tokens) out.response.push_back(vocab.id(token.text));

  const auto units = labeled_units(record);
  const auto owner = assign_tokens_to_units(units, tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t == 0 || owner[t] != owner[t - 1]) {
      out.segments.push_back({t, t + 1, map(units[owner[t]].label)});
    } else {
      out.segments.back().end = t + 1;
    }
  }
  return out;
}

std::vector<FdpoSample> to_samples(const FdpoSequence& sequence) {
  std::vector<FdpoSample> out;
  for (const auto& segment : sequence.segments) {
    FdpoSample sample;
    sample.context = sequence.prompt;
    sample.context.insert(sample.context.end(), sequence.response.begin(),
                          sequence.response.begin() + static_cast<std::ptrdiff_t>(segment.begin));
    sample.segment.assign(sequence.response.begin() + static_cast<std::ptrdiff_t>(segment.begin),
                          sequence.response.begin() + static_cast<std::ptrdiff_t>(segment.end));
    sample.cls = segment.cls;
    out.push_back(std::move(sample));
  }
  return out;
}

void FdpoConfig::validate() const {
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
    throw std::invalid_argument("warmup ratio must lie in [0, 1)");
  }
  if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) {
    throw std::invalid_argument("learning rate must be finite and non-negative");
  }
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
}

std::vector<double> segment_logprobs(const Scorer& model, const FdpoSequence& sequence) {
  const auto trace = model.forward(sequence_ids(sequence.prompt, sequence.response));
  const auto lp = model.token_logprobs(trace);
  const std::size_t offset = sequence.prompt.size();
  std::vector<double> out;
  out.reserve(sequence.segments.size());
  for (const auto& segment : sequence.segments) {
    double sum = 0.0;
    for (std::size_t t = segment.begin; t < segment.end; ++t) sum += lp[offset + t];
    out.push_back(sum);
  }
  return out;
}

std::vector<double> segment_rewards(const Scorer& policy, const Scorer& reference,
                                    const FdpoSequence& sequence) {
  auto r = segment_logprobs(policy, sequence);
  const auto ref = segment_logprobs(reference, sequence);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= ref[i];
  return r;
}

double dpo_loss(const Scorer& policy, const Scorer& reference, std::span<const TokenId> context,
                std::span<const TokenId> preferred, std::span<const TokenId> dispreferred,
                double beta, std::vector<double>* grad) {
  const auto win_ids = sequence_ids(context, preferred);
  const auto lose_ids = sequence_ids(context, dispreferred);
  const auto win_trace = policy.forward(win_ids);
  const auto lose_trace = policy.forward(lose_ids);
  const auto win_lp = policy.token_logprobs(win_trace);
  const auto lose_lp = policy.token_logprobs(lose_trace);
  const auto sum_tail = [&](const std::vector<double>& lp) {
    double s = 0.0;
    for (std::size_t j = context.size(); j < lp.size(); ++j) s += lp[j];
    return s;
  };
  const double win = sum_tail(win_lp) - reference.logprob(context, preferred);
  const double lose = sum_tail(lose_lp) - reference.logprob(context, dispreferred);
  require_finite(win, "preferred log-probability ratio");
  require_finite(lose, "dispreferred log-probability ratio");
  const double margin = beta * (win - lose);
  const double loss = softplus(-margin);

  if (grad != nullptr) {
    // d loss / d margin = -sigmoid(-margin)
    const double upstream = -sigmoid(-margin) * beta;
    std::vector<double> seed(win_lp.size(), 0.0);
    for (std::size_t j = context.size(); j < seed.size(); ++j) seed[j] = upstream;
    policy.backward(win_trace, seed, Matrix(), *grad);
    seed.assign(lose_lp.size(), 0.0);
    for (std::size_t j = context.size(); j < seed.size(); ++j) seed[j] = -upstream;
    policy.backward(lose_trace, seed, Matrix(), *grad);
  }
  return loss;
}

double fdpo_segment_loss(double reward, PreferenceClass cls, double beta) {
  if (cls == PreferenceClass::Neutral) return 0.0;
  return softplus(-beta * sign_of(cls) * reward);
}

double fdpo_segment_loss_grad(double reward, PreferenceClass cls, double beta) {
  if (cls == PreferenceClass::Neutral) return 0.0;
  const double s = sign_of(cls);
  return -beta * s * sigmoid(-beta * s * reward);
}

FdpoLoss fdpo_loss(const Scorer& policy, std::span<const FdpoSequence> batch,
                   std::span<const std::vector<double>> reference_logprobs, double beta,
                   std::vector<double>* grad) {
  if (reference_logprobs.size() != batch.size()) {
    throw std::invalid_argument("reference log-probabilities do not match the batch");
  }
  FdpoLoss result;
  for (const auto& sequence : batch) {
    for (const auto& segment : sequence.segments) {
      if (segment.cls != PreferenceClass::Neutral) ++result.active_segments;
    }
  }
  if (result.active_segments == 0) {
    result.no_signal = true;
    return result;
  }
  const double scale = 1.0 / static_cast<double>(result.active_segments);

  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& sequence = batch[b];
    const bool any = std::any_of(sequence.segments.begin(), sequence.segments.end(),
                                 [](const auto& s) { return s.cls != PreferenceClass::Neutral; });
    if (!any) continue;

    const auto trace = policy.forward(sequence_ids(sequence.prompt, sequence.response));
    const auto lp = policy.token_logprobs(trace);
    const std::size_t offset = sequence.prompt.size();
    std::vector<double> seed(grad != nullptr ? lp.size() : 0, 0.0);
    for (std::size_t k = 0; k < sequence.segments.size(); ++k) {
      const auto& segment = sequence.segments[k];
      if (segment.cls == PreferenceClass::Neutral) continue;
      double policy_lp = 0.0;
      for (std::size_t t = segment.begin; t < segment.end; ++t) policy_lp += lp[offset + t];
      const double reward = policy_lp - reference_logprobs[b][k];
      require_finite(reward, "segment log-probability ratio");
      total += fdpo_segment_loss(reward, segment.cls, beta);
      if (grad != nullptr) {
        const double g = scale * fdpo_segment_loss_grad(reward, segment.cls, beta);
        for (std::size_t t = segment.begin; t < segment.end; ++t) seed[offset + t] = g;
      }
    }
    if (grad != nullptr) policy.backward(trace, seed, Matrix(), *grad);
  }
  result.value = total * scale;
  return result;
}

FdpoLoss fdpo_loss(const Scorer& policy, const Scorer& reference,
                   std::span<const FdpoSequence> batch, double beta, std::vector<double>* grad) {
  std::vector<std::vector<double>> reference_lp;
  reference_lp.reserve(batch.size());
  for (const auto& sequence : batch) reference_lp.push_back(segment_logprobs(reference, sequence));
  return fdpo_loss(policy, batch, reference_lp, beta, grad);
}

FdpoTrainResult train_fdpo(Scorer policy, const Scorer& reference, const Corpus& corpus,
                           const ClassMap& map, const FdpoConfig& config) {
  config.validate();
  std::vector<FdpoSequence> sequences;
  std::vector<std::vector<double>> reference_lp;
  sequences.reserve(corpus.size());
  for (const auto& record : corpus) {
    sequences.push_back(make_fdpo_sequence(record, policy.vocab(), map));
    reference_lp.push_back(segment_logprobs(reference, sequences.back()));
  }

  const std::size_t per_epoch = (sequences.size() + config.batch_size - 1) / config.batch_size;
  const WarmupCosineSchedule schedule(config.learning_rate, per_epoch * config.epochs,
                                      config.warmup_ratio);
  Rng rng(config.seed);
  std::vector<std::size_t> order(sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FdpoTrainResult result{std::move(policy), {}, 0, 0};
  std::vector<double> grad(result.policy.parameter_count());
  std::vector<FdpoSequence> batch;
  std::vector<std::vector<double>> batch_ref;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_total = 0.0;
    std::size_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      batch_ref.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        batch.push_back(sequences[order[i]]);
        batch_ref.push_back(reference_lp[order[i]]);
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      FdpoLoss loss;
      try {
        loss = fdpo_loss(result.policy, batch, batch_ref, config.beta, &grad);
      } catch (const NonFiniteLoss& e) {
        throw TrainingDiverged(result.steps, "batch " + std::to_string(result.steps) + ": " + e.what());
      }
      if (!std::isfinite(loss.value)) {
        throw TrainingDiverged(result.steps,
                               "batch " + std::to_string(result.steps) + ": loss is not finite");
      }
      if (!loss.no_signal) {
        sgd_step(result.policy, grad, schedule.rate(result.steps), fdpo_trainable());
        epoch_total += loss.value;
        ++epoch_batches;
        ++result.updates;
      }
      ++result.steps;
    }
    result.epoch_loss.push_back(epoch_batches == 0 ? 0.0
                                                   : epoch_total / static_cast<double>(epoch_batches));
  }
  return result;
}

}  // namespace halluc
