#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "halluc/corpus.hpp"
#include "halluc/fdpo.hpp"
#include "halluc/random.hpp"
#include "halluc/scorer.hpp"
#include "halluc/text.hpp"

namespace halluc::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(HALLUC_FIXTURE_DIR) / name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Rng rng(static_cast<std::uint64_t>(std::hash<std::string>{}(tag)) ^
            static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(this)));
    path_ = std::filesystem::temp_directory_path() /
            ("halluc-" + tag + "-" + std::to_string(rng.next() % 1000000007ULL));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline AnnotatedResponse make_record(std::string id, std::string prompt, std::string response,
                                     std::vector<SpanAnnotation> spans,
                                     Split split = Split::Train) {
  AnnotatedResponse r;
  r.id = std::move(id);
  r.image_ref = "images/" + r.id + ".jpg";
  r.prompt = std::move(prompt);
  r.response = std::move(response);
  r.spans = std::move(spans);
  r.split = split;
  return r;
}

inline const std::vector<std::string>& word_pool() {
  static const std::vector<std::string> words = {
      "the", "a",    "red",   "bus",  "dog",   "sky",   "is",    "on",   "near", "café",
      "naïve", "tree", "blue", "cat",  "runs",  "über",  "snow",  "日本", "kite", "table"};
  return words;
}

/// Random multi-sentence response with random valid spans; multi-byte words
/// included so scalar offsets differ from byte offsets.
inline AnnotatedResponse random_record(Rng& rng, const std::string& id) {
  const auto& words = word_pool();
  std::string response;
  const std::size_t sentences = 1 + rng.below(4);
  for (std::size_t s = 0; s < sentences; ++s) {
    if (!response.empty()) response += ' ';
    const std::size_t n = 2 + rng.below(6);
    for (std::size_t w = 0; w < n; ++w) {
      if (w > 0) response += ' ';
      response += words[rng.below(words.size())];
    }
    response += ".!?"[rng.below(3)];
  }
  const std::size_t length = scalar_length(response);
  std::vector<SpanAnnotation> spans;
  std::size_t pos = 0;
  while (pos < length) {
    const std::size_t skip = rng.below(12);
    const std::size_t start = pos + skip;
    if (start >= length) break;
    const std::size_t end = std::min(length, start + 1 + rng.below(15));
    spans.push_back({start, end, static_cast<Label>(rng.below(kLabelCount))});
    pos = end;
  }
  std::string prompt = "Describe image " + id + ".";
  return make_record(id, prompt, response, std::move(spans),
                     rng.below(4) == 0 ? Split::Val : Split::Train);
}

inline Scorer small_scorer(const std::vector<std::string>& texts, std::size_t dim,
                           std::size_t classes, std::uint64_t seed, bool zero_head = false) {
  ScorerConfig config;
  config.dim = dim;
  config.classes = classes;
  config.seed = seed;
  config.zero_head = zero_head;
  return Scorer(Vocabulary::build(texts), config);
}

inline std::vector<double> zeros_like(const Scorer& model) {
  return std::vector<double>(model.parameter_count(), 0.0);
}


/// Toy corpus where "purple" only ever appears inside Inaccurate spans.
inline Corpus purple_corpus() {
  const std::vector<std::string> objects = {"ball", "car", "cup", "hat", "box", "kite"};
  const std::vector<std::string> colors = {"red", "green", "blue", "white"};
  Corpus corpus;
  for (std::size_t i = 0; i < 24; ++i) {
    const std::string& object = objects[i % objects.size()];
    const std::string& color = colors[(i / objects.size()) % colors.size()];
    const std::string first = "The " + object + " is " + color + ".";
    if (i % 2 == 0) {
      const std::string response = first + " The " + object + " is purple.";
      const std::size_t start = scalar_length(response) - std::string("purple.").size();
      corpus.push_back(make_record("purple" + std::to_string(i), "Describe the " + object + ".",
                                   response, {{start, scalar_length(response), Label::Inaccurate}}));
    } else {
      corpus.push_back(make_record("purple" + std::to_string(i), "Describe the " + object + ".",
                                   first + " It sits on a table.", {}));
    }
  }
  return corpus;
}

struct SegmentFixture {
  Scorer policy;
  Scorer reference;
  FdpoSequence sequence;
};

/// A 3-segment response over a small vocabulary with a policy perturbed away
/// from the reference so rewards are nonzero.
inline SegmentFixture three_segment_fixture(std::uint64_t seed) {
  const std::vector<std::string> texts = {"w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11"};
  ScorerConfig config;
  config.dim = 4;
  config.seed = seed;
  Scorer reference(Vocabulary::build(texts), config);
  Scorer policy = reference;
  Rng rng(mix_seed(seed, 17));
  for (double& p : policy.parameters()) p += rng.uniform(-0.05, 0.05);
  FdpoSequence sequence;
  sequence.id = "fixture" + std::to_string(seed);
  const std::size_t vocab = reference.vocab().size();
  for (int i = 0; i < 3; ++i) sequence.prompt.push_back(static_cast<TokenId>(2 + rng.below(vocab - 2)));
  const std::size_t lengths[3] = {1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)};
  const PreferenceClass classes[3] = {PreferenceClass::Preferred, PreferenceClass::Dispreferred,
                                      seed % 2 == 0 ? PreferenceClass::Preferred
                                                    : PreferenceClass::Dispreferred};
  for (int k = 0; k < 3; ++k) {
    const std::size_t begin = sequence.response.size();
    for (std::size_t t = 0; t < lengths[k]; ++t) {
      sequence.response.push_back(static_cast<TokenId>(2 + rng.below(vocab - 2)));
    }
    sequence.segments.push_back({begin, sequence.response.size(), classes[k]});
  }
  return {std::move(policy), std::move(reference), std::move(sequence)};
}

}  // namespace halluc::testing
