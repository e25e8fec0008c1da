#include "halluc/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "halluc/random.hpp"

namespace halluc {

namespace {

std::vector<double> softmax(std::span<const double> logits) {
  const double max = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - max);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace

std::size_t RmExample::target_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

RmExample make_rm_example(const AnnotatedResponse& record, const Vocabulary& vocab,
                          Density density, Granularity granularity) {
  RmExample out;
  out.id = record.id;
  out.prompt = vocab.encode(record.prompt);
  const auto tokens = tokenize(record.response);
  for (const auto& token : tokens) out.response.push_back(vocab.id(token.text));
  out.labels.assign(tokens.size(), 0);
  out.mask.assign(tokens.size(), false);
  for (const auto& target : segment_end_tokens(record, tokens, density, granularity)) {
    out.labels[target.token] = target.cls;
    out.mask[target.token] = true;
  }
  return out;
}

double rm_loss(const Scorer& model, std::span<const RmExample> batch, std::vector<double>* grad) {
  std::size_t targets = 0;
  for (const auto& example : batch) targets += example.target_count();
  if (targets == 0) throw std::invalid_argument("reward model batch has no targets");
  const double scale = 1.0 / static_cast<double>(targets);
  const std::size_t classes = model.classes();

  double total = 0.0;
  for (const auto& example : batch) {
    if (example.target_count() == 0) continue;
    const auto trace = model.forward(sequence_ids(example.prompt, example.response));
    const Matrix logits = model.class_logits(trace);
    const std::size_t offset = 1 + example.prompt.size();
    Matrix upstream;
    if (grad != nullptr) upstream = Matrix(logits.rows(), classes);
    for (std::size_t t = 0; t < example.response.size(); ++t) {
      if (!example.mask[t]) continue;
      const int label = example.labels[t];
      if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw std::invalid_argument("target class out of range for the classification head");
      }
      const auto p = softmax(logits.row(offset + t));
      total -= std::log(p[static_cast<std::size_t>(label)]);
      if (grad != nullptr) {
        for (std::size_t c = 0; c < classes; ++c) {
          upstream(offset + t, c) = scale * (p[c] - (static_cast<int>(c) == label ? 1.0 : 0.0));
        }
      }
    }
    if (grad != nullptr) model.backward(trace, {}, upstream, *grad);
  }
  return total * scale;
}

RmTrainResult train_rm(Scorer model, const Corpus& corpus, const RmConfig& config) {
  if (model.classes() != class_count(config.granularity)) {
    throw std::invalid_argument("classification head size does not match the granularity");
  }
  if (config.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  std::vector<RmExample> examples;
  for (const auto& record : corpus) {
    examples.push_back(make_rm_example(record, model.vocab(), config.density, config.granularity));
  }
  RmTrainResult result{std::move(model), 0.0, {}};
  result.initial_loss = rm_loss(result.model, examples);

  Rng rng(config.seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad(result.model.parameter_count());
  std::vector<RmExample> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        if (examples[order[i]].target_count() > 0) batch.push_back(examples[order[i]]);
      }
      if (batch.empty()) continue;
      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_total += rm_loss(result.model, batch, &grad);
      ++batches;
      sgd_step(result.model, grad, config.learning_rate, reward_trainable());
    }
    result.epoch_loss.push_back(batches == 0 ? 0.0 : epoch_total / static_cast<double>(batches));
  }
  return result;
}

ClassificationMetrics metrics_from_confusion(const ConfusionMatrix& confusion) {
  ClassificationMetrics m;
  m.confusion = confusion;
  const std::size_t classes = confusion.size();
  std::size_t correct = 0;
  std::vector<std::size_t> gold(classes, 0), predicted(classes, 0);
  for (std::size_t g = 0; g < classes; ++g) {
    for (std::size_t p = 0; p < classes; ++p) {
      const std::size_t n = confusion[g][p];
      m.total += n;
      gold[g] += n;
      predicted[p] += n;
      if (g == p) correct += n;
    }
  }
  m.accuracy = m.total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(m.total);
  double f1_sum = 0.0;
  std::size_t counted = 0;
  m.per_class_f1.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    if (gold[c] == 0 && predicted[c] == 0) continue;
    const double tp = static_cast<double>(confusion[c][c]);
    // F1 = 2TP / (2TP + FP + FN)
    const double denom = static_cast<double>(gold[c] + predicted[c]);
    m.per_class_f1[c] = 2.0 * tp / denom;
    f1_sum += m.per_class_f1[c];
    ++counted;
  }
  m.macro_f1 = counted == 0 ? 0.0 : f1_sum / static_cast<double>(counted);
  return m;
}

ClassificationMetrics classification_metrics(std::span<const int> gold, std::span<const int> predicted,
                                             std::size_t classes) {
  if (gold.size() != predicted.size()) throw std::invalid_argument("label count mismatch");
  ConfusionMatrix confusion(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto g = static_cast<std::size_t>(gold[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (g >= classes || p >= classes) throw std::invalid_argument("class index out of range");
    ++confusion[g][p];
  }
  return metrics_from_confusion(confusion);
}

ClassificationMetrics eval_rm(const Scorer& model, const Corpus& corpus, const RmConfig& config) {
  std::vector<int> gold, predicted;
  for (const auto& record : corpus) {
    const auto example = make_rm_example(record, model.vocab(), config.density, config.granularity);
    if (example.target_count() == 0) continue;
    const auto trace = model.forward(sequence_ids(example.prompt, example.response));
    const Matrix logits = model.class_logits(trace);
    const std::size_t offset = 1 + example.prompt.size();
    for (std::size_t t = 0; t < example.response.size(); ++t) {
      if (!example.mask[t]) continue;
      gold.push_back(example.labels[t]);
      predicted.push_back(static_cast<int>(argmax(logits.row(offset + t))));
    }
  }
  return classification_metrics(gold, predicted, model.classes());
}

ConfusionMatrix reduce_ternary_to_binary(const ConfusionMatrix& ternary) {
  if (ternary.size() != 3) throw std::invalid_argument("expected a 3x3 confusion matrix");
  ConfusionMatrix binary(2, std::vector<std::size_t>(2, 0));
  const int merge[3] = {kAccurateClass, kInaccurateClass, kAccurateClass};
  for (std::size_t g = 0; g < 3; ++g) {
    if (ternary[g].size() != 3) throw std::invalid_argument("expected a 3x3 confusion matrix");
    for (std::size_t p = 0; p < 3; ++p) binary[merge[g]][merge[p]] += ternary[g][p];
  }
  return binary;
}

std::vector<int> reduce_ternary_to_binary(std::span<const int> ternary) {
  std::vector<int> out;
  out.reserve(ternary.size());
  for (int c : ternary) out.push_back(c == kAnalysisClass ? kAccurateClass : c);
  return out;
}

PassageScore passage_score_from_probabilities(std::span<const double> probabilities) {
  if (probabilities.empty()) throw std::invalid_argument("passage has no sentences");
  PassageScore score;
  score.probabilities.assign(probabilities.begin(), probabilities.end());
  double total = 0.0;
  for (double p : probabilities) {
    const double s = -std::log(std::max(p, kProbabilityFloor));
    score.sentence_scores.push_back(s);
    total += s;
  }
  score.passage = total / static_cast<double>(probabilities.size());
  return score;
}

double non_hallucination_probability(std::span<const double> logits, Granularity granularity) {
  const auto p = softmax(logits);
  if (granularity == Granularity::Binary) return p[kAccurateClass];
  return p[kAccurateClass] + p[kAnalysisClass];
}

Granularity granularity_of(const Scorer& model) {
  if (model.classes() == 2) return Granularity::Binary;
  if (model.classes() == 3) return Granularity::Ternary;
  throw std::invalid_argument("scorer head has " + std::to_string(model.classes()) +
                              " classes; expected 2 or 3");
}

PassageScore score_passage(const Scorer& model, std::string_view prompt, std::string_view response,
                           Granularity granularity) {
  if (model.classes() != class_count(granularity)) {
    throw std::invalid_argument("classification head size does not match the granularity");
  }
  const auto tokens = tokenize(response);
  const auto sentences = split_sentences(response);
  if (sentences.empty()) throw std::invalid_argument("response has no sentences");

  const auto prompt_ids = model.vocab().encode(prompt);
  std::vector<TokenId> response_ids;
  for (const auto& token : tokens) response_ids.push_back(model.vocab().id(token.text));
  const auto trace = model.forward(sequence_ids(prompt_ids, response_ids));
  const Matrix logits = model.class_logits(trace);
  const std::size_t offset = 1 + prompt_ids.size();

  std::vector<double> probabilities;
  std::size_t t = 0;
  for (const auto& sentence : sentences) {
    while (t + 1 < tokens.size() && tokens[t + 1].start < sentence.end) ++t;
    probabilities.push_back(non_hallucination_probability(logits.row(offset + t), granularity));
  }
  return passage_score_from_probabilities(probabilities);
}

std::string score_report_line(const std::string& id, const PassageScore& score,
                              const std::optional<std::string>& prompt_id) {
  nlohmann::ordered_json doc;
  doc["id"] = id;
  doc["sentence_scores"] = score.sentence_scores;
  doc["passage_score"] = score.passage;
  if (prompt_id) doc["prompt_id"] = *prompt_id;
  return doc.dump();
}

}  // namespace halluc
