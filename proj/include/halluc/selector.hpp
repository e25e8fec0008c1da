#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "halluc/kernels.hpp"
#include "halluc/reward.hpp"
#include "halluc/scorer.hpp"

namespace halluc {

struct Candidate {
  std::string id;
  std::string response;
  PassageScore score;
};

struct CandidateSet {
  std::string prompt_id;
  std::vector<Candidate> candidates;
};

enum class SelectMode { Best, Worst };

std::string_view to_string(SelectMode mode);
std::optional<SelectMode> parse_select_mode(std::string_view text);

class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// First `n` entries of a seeded partial Fisher-Yates shuffle of [0, count).
/// Prefixes of the same draw are nested.
std::vector<std::size_t> draw_subset(std::size_t count, std::size_t n, std::uint64_t seed);

/// Best (lowest passage score) or worst (highest) of a seeded n-subset; ties
/// go to the lexicographically smallest candidate id.
const Candidate& select(const CandidateSet& set, std::size_t n, SelectMode mode,
                        std::uint64_t seed);

struct CurvePoint {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;                 // over every (prompt, draw) sample
  double variance_across_prompts = 0.0;  // of per-prompt means
  double variance_across_draws = 0.0;    // within-prompt, averaged over prompts
  std::size_t samples = 0;
};

struct SelectionCurve {
  std::vector<CurvePoint> points;
};

/// Monte Carlo estimate of the selected score as n grows. Each draw takes one
/// random ordering of a prompt's candidates and reads every grid size off its
/// prefixes, so larger n always sees a superset. Trials run in parallel with
/// per-trial seeds; reductions are serial, so both backends agree exactly.
SelectionCurve curve(std::span<const CandidateSet> sets, std::span<const std::size_t> grid,
                     std::size_t draws, std::uint64_t seed, SelectMode mode = SelectMode::Best,
                     Backend backend = Backend::Parallel);

std::string curve_csv(const SelectionCurve& curve, bool variance_detail = false);

struct Generation {
  std::string prompt_id;
  std::string candidate_id;
  std::string prompt;
  std::string response;
};

/// JSONL of {prompt_id, candidate_id, prompt, response}; throws
/// SelectionError naming the line on malformed input.
std::vector<Generation> parse_generations(std::string_view text);

/// Scores every generation with the reward model and groups candidates by
/// prompt id in order of first appearance.
std::vector<CandidateSet> score_external(std::span<const Generation> generations,
                                         const Scorer& model, Backend backend = Backend::Parallel);

/// Reads a score report back into candidate sets. Lines without "prompt_id"
/// fall into one set with an empty prompt id.
std::vector<CandidateSet> parse_score_report(std::string_view text);

std::string score_report(std::span<const CandidateSet> sets);

std::string selection_report_line(const std::string& prompt_id, std::size_t n, SelectMode mode,
                                  const Candidate& chosen);

}  // namespace halluc
