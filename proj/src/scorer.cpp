#include "halluc/scorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "halluc/random.hpp"
#include "halluc/segmenter.hpp"

namespace halluc {

namespace {

constexpr char kMagic[8] = {'H', 'A', 'L', 'S', 'C', 'O', 'R', 'E'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  if (!in.read(bytes.data(), bytes.size())) throw CheckpointError("truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  tokens_ = {"<unk>", "<bos>"};
  for (auto& token : tokens) {
    if (token == "<unk>" || token == "<bos>") continue;
    tokens_.push_back(std::move(token));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw std::invalid_argument("duplicate vocabulary entry \"" + tokens_[i] + "\"");
    }
  }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts, std::size_t max_size) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts) {
    for (auto& token : token_texts(text)) ++counts[std::move(token)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  const std::size_t room = max_size > 2 ? max_size - 2 : 0;
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < room; ++i) {
    if (ranked[i].first == "<unk>" || ranked[i].first == "<bos>") continue;
    tokens.push_back(ranked[i].first);
  }
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::build(const Corpus& corpus, std::size_t max_size) {
  std::vector<std::string> texts;
  for (const auto& record : corpus) {
    texts.push_back(record.prompt);
    texts.push_back(record.response);
  }
  return build(texts, max_size);
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& token : tokenize(text)) ids.push_back(id(token.text));
  return ids;
}

TrainableMask reward_trainable() { return {false, true, true, false, false, true, true}; }
TrainableMask fdpo_trainable() { return {false, true, true, true, true, false, false}; }

Scorer::Scorer(Vocabulary vocab, std::size_t dim, std::size_t classes, double decay)
    : vocab_(std::move(vocab)), dim_(dim), classes_(classes), decay_(decay) {
  if (dim_ == 0) throw std::invalid_argument("scorer dimension must be positive");
  if (classes_ == 0) throw std::invalid_argument("scorer needs at least one class");
  layout();
}

Scorer::Scorer(Vocabulary vocab, const ScorerConfig& config)
    : Scorer(std::move(vocab), config.dim, config.classes, config.decay) {
  Rng rng(config.seed);
  for (double& p : params_) p = rng.uniform(-config.init_scale, config.init_scale);
  if (config.zero_head) {
    const auto head = block_offset(ParamBlock::Head);
    std::fill(params_.begin() + static_cast<std::ptrdiff_t>(head), params_.end(), 0.0);
  }
}

void Scorer::layout() {
  const std::size_t v = vocab_.size();
  const std::array<std::size_t, kParamBlockCount> sizes = {
      v * dim_, dim_ * dim_, dim_, v * dim_, v, classes_ * dim_, classes_};
  offsets_[0] = 0;
  for (std::size_t b = 0; b < kParamBlockCount; ++b) offsets_[b + 1] = offsets_[b] + sizes[b];
  params_.assign(offsets_.back(), 0.0);
}

std::size_t Scorer::block_offset(ParamBlock block) const {
  return offsets_[static_cast<std::size_t>(block)];
}

std::size_t Scorer::block_size(ParamBlock block) const {
  const auto b = static_cast<std::size_t>(block);
  return offsets_[b + 1] - offsets_[b];
}

ParamBlock Scorer::block_of(std::size_t index) const {
  for (std::size_t b = 0; b < kParamBlockCount; ++b) {
    if (index < offsets_[b + 1]) return static_cast<ParamBlock>(b);
  }
  throw std::out_of_range("parameter index out of range");
}

namespace {

std::size_t block_rows(ParamBlock block, std::size_t vocab, std::size_t dim, std::size_t classes) {
  switch (block) {
    case ParamBlock::Embedding:
    case ParamBlock::Output:
      return vocab;
    case ParamBlock::Hidden:
      return dim;
    case ParamBlock::Head:
      return classes;
    default:
      return 1;
  }
}

}  // namespace

MatrixView Scorer::block(ParamBlock b) {
  const std::size_t rows = block_rows(b, vocab_.size(), dim_, classes_);
  return {params_.data() + block_offset(b), rows, block_size(b) / rows};
}

ConstMatrixView Scorer::block(ParamBlock b) const {
  const std::size_t rows = block_rows(b, vocab_.size(), dim_, classes_);
  return {params_.data() + block_offset(b), rows, block_size(b) / rows};
}

Scorer::Trace Scorer::forward(std::span<const TokenId> ids) const {
  if (ids.empty() || ids.front() != Vocabulary::kBos) {
    throw std::invalid_argument("scorer input must start with <bos>");
  }
  Trace trace;
  trace.ids.assign(ids.begin(), ids.end());
  const std::size_t length = ids.size();
  trace.state = Matrix(length, dim_);
  const auto embedding = block(ParamBlock::Embedding);
  for (std::size_t i = 0; i < length; ++i) {
    const TokenId id = ids[i] < vocab_.size() ? ids[i] : Vocabulary::kUnknown;
    auto s = trace.state.row(i);
    const auto e = embedding.row(id);
    for (std::size_t k = 0; k < dim_; ++k) {
      s[k] = (i > 0 ? decay_ * trace.state(i - 1, k) : 0.0) + e[k];
    }
  }
  const auto hidden_bias = block(ParamBlock::HiddenBias).row(0);
  kernels::affine_rows(backend_, trace.state, block(ParamBlock::Hidden), hidden_bias, trace.hidden);
  for (double& h : trace.hidden.data()) h = std::tanh(h);
  return trace;
}

std::vector<double> Scorer::token_logprobs(const Trace& trace) const {
  const std::size_t length = trace.ids.size();
  if (length < 2) return {};
  Matrix logits;
  const ConstMatrixView inputs(trace.hidden.data().data(), length - 1, dim_);
  kernels::affine_rows(backend_, inputs, block(ParamBlock::Output),
                       block(ParamBlock::OutputBias).row(0), logits);
  kernels::log_softmax_rows(backend_, logits);
  std::vector<double> out(length - 1);
  for (std::size_t j = 0; j + 1 < length; ++j) {
    const TokenId next = trace.ids[j + 1] < vocab_.size() ? trace.ids[j + 1] : Vocabulary::kUnknown;
    out[j] = logits(j, next);
  }
  return out;
}

Matrix Scorer::class_logits(const Trace& trace) const {
  Matrix logits;
  kernels::affine_rows(backend_, trace.hidden, block(ParamBlock::Head),
                       block(ParamBlock::HeadBias).row(0), logits);
  return logits;
}

void Scorer::backward(const Trace& trace, std::span<const double> logprob_grad,
                      const Matrix& class_logit_grad, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient size mismatch");
  const auto grad_block = [&](ParamBlock b) {
    const std::size_t rows = block_rows(b, vocab_.size(), dim_, classes_);
    return MatrixView{grad.data() + block_offset(b), rows, block_size(b) / rows};
  };
  const auto grad_bias = [&](ParamBlock b) {
    return std::span<double>(grad.data() + block_offset(b), block_size(b));
  };

  // Number of leading positions that receive any upstream gradient.
  std::size_t active = 0;
  std::size_t lp_rows = 0;
  for (std::size_t j = logprob_grad.size(); j > 0; --j) {
    if (logprob_grad[j - 1] != 0.0) {
      lp_rows = j;
      break;
    }
  }
  std::size_t cls_rows = 0;
  for (std::size_t i = class_logit_grad.rows(); i > 0 && cls_rows == 0; --i) {
    for (double g : class_logit_grad.row(i - 1)) {
      if (g != 0.0) {
        cls_rows = i;
        break;
      }
    }
  }
  active = std::max(lp_rows, cls_rows);
  if (active == 0) return;

  Matrix grad_hidden(active, dim_);

  if (lp_rows > 0) {
    const ConstMatrixView inputs(trace.hidden.data().data(), lp_rows, dim_);
    Matrix dlogits;
    kernels::affine_rows(backend_, inputs, block(ParamBlock::Output),
                         block(ParamBlock::OutputBias).row(0), dlogits);
    kernels::log_softmax_rows(backend_, dlogits);
    for (std::size_t j = 0; j < lp_rows; ++j) {
      auto row = dlogits.row(j);
      const double w = logprob_grad[j];
      if (w == 0.0) {
        std::fill(row.begin(), row.end(), 0.0);
        continue;
      }
      for (double& v : row) v = -w * std::exp(v);
      const TokenId next =
          trace.ids[j + 1] < vocab_.size() ? trace.ids[j + 1] : Vocabulary::kUnknown;
      row[next] += w;
    }
    kernels::accumulate_affine_grad(backend_, dlogits, inputs, grad_block(ParamBlock::Output),
                                    grad_bias(ParamBlock::OutputBias));
    kernels::backproject(backend_, dlogits, block(ParamBlock::Output), grad_hidden);
  }

  if (cls_rows > 0) {
    const ConstMatrixView inputs(trace.hidden.data().data(), cls_rows, dim_);
    const ConstMatrixView upstream(class_logit_grad.data().data(), cls_rows, classes_);
    kernels::accumulate_affine_grad(backend_, upstream, inputs, grad_block(ParamBlock::Head),
                                    grad_bias(ParamBlock::HeadBias));
    Matrix from_head(cls_rows, dim_);
    kernels::backproject(backend_, upstream, block(ParamBlock::Head), from_head);
    for (std::size_t i = 0; i < cls_rows; ++i) {
      for (std::size_t k = 0; k < dim_; ++k) grad_hidden(i, k) += from_head(i, k);
    }
  }

  // Through tanh into the hidden layer.
  Matrix grad_pre(active, dim_);
  for (std::size_t i = 0; i < active; ++i) {
    for (std::size_t k = 0; k < dim_; ++k) {
      const double h = trace.hidden(i, k);
      grad_pre(i, k) = grad_hidden(i, k) * (1.0 - h * h);
    }
  }
  const ConstMatrixView states(trace.state.data().data(), active, dim_);
  kernels::accumulate_affine_grad(backend_, grad_pre, states, grad_block(ParamBlock::Hidden),
                                  grad_bias(ParamBlock::HiddenBias));
  Matrix grad_state(active, dim_);
  kernels::backproject(backend_, grad_pre, block(ParamBlock::Hidden), grad_state);

  // Recurrence runs backwards; embedding rows accumulate in position order
  // from the end, which is fixed for a given sequence.
  auto grad_embedding = grad_block(ParamBlock::Embedding);
  std::vector<double> carry(dim_, 0.0);
  for (std::size_t i = active; i > 0; --i) {
    const std::size_t pos = i - 1;
    const TokenId id = trace.ids[pos] < vocab_.size() ? trace.ids[pos] : Vocabulary::kUnknown;
    auto row = grad_embedding.row(id);
    for (std::size_t k = 0; k < dim_; ++k) {
      carry[k] = grad_state(pos, k) + (pos + 1 < active ? decay_ * carry[k] : 0.0);
      row[k] += carry[k];
    }
  }
}

double Scorer::logprob(std::span<const TokenId> context,
                       std::span<const TokenId> continuation) const {
  if (continuation.empty()) return 0.0;
  const auto ids = sequence_ids(context, continuation);
  const auto trace = forward(ids);
  const auto lp = token_logprobs(trace);
  double total = 0.0;
  for (std::size_t j = context.size(); j < lp.size(); ++j) total += lp[j];
  return total;
}

Matrix Scorer::class_logits(std::span<const TokenId> tokens) const {
  const auto trace = forward(sequence_ids({}, tokens));
  const Matrix all = class_logits(trace);
  Matrix out(tokens.size(), classes_);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t c = 0; c < classes_; ++c) out(i, c) = all(i + 1, c);
  }
  return out;
}

void Scorer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(classes_));
  write_le<double>(out, decay_);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_.size()));
  for (const auto& token : vocab_.tokens()) {
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(token.size()));
    out.write(token.data(), static_cast<std::streamsize>(token.size()));
  }
  write_le<std::uint64_t>(out, params_.size());
  for (double p : params_) write_le<double>(out, p);
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Scorer Scorer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + " is not a scorer checkpoint");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto dim = read_le<std::uint32_t>(in);
  const auto classes = read_le<std::uint32_t>(in);
  const auto decay = read_le<double>(in);
  const auto vocab_size = read_le<std::uint32_t>(in);
  std::vector<std::string> tokens(vocab_size);
  for (auto& token : tokens) {
    const auto n = read_le<std::uint32_t>(in);
    token.resize(n);
    if (!in.read(token.data(), n)) throw CheckpointError("truncated checkpoint");
  }
  if (vocab_size < 2 || tokens[0] != "<unk>" || tokens[1] != "<bos>") {
    throw CheckpointError("checkpoint vocabulary lacks special tokens");
  }
  Scorer model(Vocabulary(std::vector<std::string>(tokens.begin() + 2, tokens.end())), dim,
               classes, decay);
  const auto count = read_le<std::uint64_t>(in);
  if (count != model.params_.size()) throw CheckpointError("parameter count mismatch");
  for (double& p : model.params_) p = read_le<double>(in);
  return model;
}

std::vector<TokenId> sequence_ids(std::span<const TokenId> context,
                                  std::span<const TokenId> continuation) {
  std::vector<TokenId> ids;
  ids.reserve(1 + context.size() + continuation.size());
  ids.push_back(Vocabulary::kBos);
  ids.insert(ids.end(), context.begin(), context.end());
  ids.insert(ids.end(), continuation.begin(), continuation.end());
  return ids;
}

void sgd_step(Scorer& model, std::span<const double> grad, double learning_rate,
              const TrainableMask& mask) {
  auto params = model.parameters();
  for (std::size_t b = 0; b < kParamBlockCount; ++b) {
    if (!mask[b]) continue;
    const auto block = static_cast<ParamBlock>(b);
    const std::size_t begin = model.block_offset(block);
    const std::size_t end = begin + model.block_size(block);
    for (std::size_t i = begin; i < end; ++i) params[i] -= learning_rate * grad[i];
  }
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace halluc
