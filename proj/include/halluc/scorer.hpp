#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "halluc/corpus.hpp"
#include "halluc/kernels.hpp"

namespace halluc {

using TokenId = std::uint32_t;

class Vocabulary {
 public:
  static constexpr TokenId kUnknown = 0;
  static constexpr TokenId kBos = 1;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Most frequent tokens of all prompts and responses, ties broken
  /// lexicographically, capped at `max_size` entries including specials.
  static Vocabulary build(const Corpus& corpus, std::size_t max_size = 4096);
  static Vocabulary build(const std::vector<std::string>& texts, std::size_t max_size = 4096);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// Whitespace-tokenizes UTF-8 text and maps tokens to ids.
  std::vector<TokenId> encode(std::string_view text) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class ParamBlock : std::size_t {
  Embedding,   // V x d, never trained
  Hidden,      // d x d
  HiddenBias,  // d
  Output,      // V x d, next-token projection
  OutputBias,  // V
  Head,        // C x d, classification head
  HeadBias,    // C
};
inline constexpr std::size_t kParamBlockCount = 7;

/// Which parameter blocks an optimizer may update.
using TrainableMask = std::array<bool, kParamBlockCount>;

TrainableMask reward_trainable();  // hidden layer + classification head
TrainableMask fdpo_trainable();    // hidden layer + next-token projection

struct ScorerConfig {
  std::size_t dim = 32;
  std::size_t classes = 2;
  double decay = 0.5;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
  bool zero_head = false;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Small autoregressive scorer.
///
/// For ids t_0 = BOS, t_1, ..., t_{L-1}:
///   s_i = decay * s_{i-1} + E[t_i]          (s_{-1} = 0)
///   h_i = tanh(P s_i + a)
///   next-token logits at i: W h_i + b       (predicts t_{i+1})
///   class logits at i:      U h_i + c
///
/// All parameters live in one contiguous vector, block by block in
/// ParamBlock order; gradients use the same layout.
class Scorer {
 public:
  struct Trace {
    std::vector<TokenId> ids;
    Matrix state;   // L x d
    Matrix hidden;  // L x d
  };

  Scorer(Vocabulary vocab, const ScorerConfig& config);

  const Vocabulary& vocab() const { return vocab_; }
  std::size_t dim() const { return dim_; }
  std::size_t classes() const { return classes_; }
  double decay() const { return decay_; }

  Backend backend() const { return backend_; }
  void set_backend(Backend backend) { backend_ = backend; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  std::size_t block_offset(ParamBlock block) const;
  std::size_t block_size(ParamBlock block) const;
  MatrixView block(ParamBlock block);
  ConstMatrixView block(ParamBlock block) const;
  /// Block that owns flat parameter index `index`.
  ParamBlock block_of(std::size_t index) const;

  /// `ids` must start with Vocabulary::kBos.
  Trace forward(std::span<const TokenId> ids) const;

  /// log p(ids[j+1] | ids[0..j]) for j in [0, L-1).
  std::vector<double> token_logprobs(const Trace& trace) const;

  Matrix class_logits(const Trace& trace) const;

  /// Adds d(loss)/d(params) into `grad`, given d(loss)/d(token_logprobs) and
  /// optionally d(loss)/d(class logits) (L x C). Either may be empty.
  /// Positions after the last nonzero upstream gradient are never touched.
  void backward(const Trace& trace, std::span<const double> logprob_grad,
                const Matrix& class_logit_grad, std::span<double> grad) const;

  /// Sum of next-token log-probabilities of `continuation` after BOS + context.
  double logprob(std::span<const TokenId> context, std::span<const TokenId> continuation) const;

  /// Class logits at each token of `tokens` (BOS row dropped).
  Matrix class_logits(std::span<const TokenId> tokens) const;

  void save(const std::filesystem::path& path) const;
  static Scorer load(const std::filesystem::path& path);

  friend bool operator==(const Scorer& a, const Scorer& b) {
    return a.vocab_ == b.vocab_ && a.dim_ == b.dim_ && a.classes_ == b.classes_ &&
           a.decay_ == b.decay_ && a.params_ == b.params_;
  }

 private:
  Scorer(Vocabulary vocab, std::size_t dim, std::size_t classes, double decay);
  void layout();

  Vocabulary vocab_;
  std::size_t dim_;
  std::size_t classes_;
  double decay_;
  Backend backend_ = Backend::Parallel;
  std::array<std::size_t, kParamBlockCount + 1> offsets_{};
  std::vector<double> params_;
};

/// [BOS] + context + continuation
std::vector<TokenId> sequence_ids(std::span<const TokenId> context,
                                  std::span<const TokenId> continuation);

/// Plain gradient step on the unmasked blocks.
void sgd_step(Scorer& model, std::span<const double> grad, double learning_rate,
              const TrainableMask& mask);

/// Stable log(1 + exp(x)).
double softplus(double x);
/// Stable log(sigmoid(x)).
inline double log_sigmoid(double x) { return -softplus(-x); }
double sigmoid(double x);

/// Loss with optional gradient; `grad` (sized like the parameters, zeroed by
/// the caller) is filled when non-null.
using LossFunction = std::function<double(const Scorer&, std::vector<double>* grad)>;

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
  double epsilon = 1e-4;
  std::size_t max_parameters = 0;  // 0 checks every parameter; otherwise at least 200
  std::uint64_t seed = 0;
};

struct GradientReport {
  std::vector<std::size_t> indices;  // parameters checked
  std::vector<double> analytic;      // full analytic gradient
  std::vector<double> numeric;       // central differences, parallel to `indices`
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
};

/// |a - f| / (max(|a|, |f|) + 1e-8)
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient with central differences. The model is
/// perturbed in place and restored bit for bit before returning.
GradientReport grad_check(Scorer& model, const LossFunction& loss,
                          const GradCheckOptions& options = {});

}  // namespace halluc
