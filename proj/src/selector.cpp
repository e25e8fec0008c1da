#include "halluc/selector.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

#include "halluc/random.hpp"

namespace halluc {

namespace {

bool better(const Candidate& a, const Candidate& b, SelectMode mode) {
  if (a.score.passage != b.score.passage) {
    return mode == SelectMode::Best ? a.score.passage < b.score.passage
                                    : a.score.passage > b.score.passage;
  }
  return a.id < b.id;
}

double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  if (std::all_of(xs.begin(), xs.end(), [&](double x) { return x == xs.front(); })) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(xs.size() - 1);
}

std::string line_error(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    fn(line_no, line);
  }
}

nlohmann::json parse_object(std::size_t line_no, std::string_view line) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SelectionError(line_error(line_no, std::string("malformed JSON: ") + e.what()));
  }
  if (!doc.is_object()) throw SelectionError(line_error(line_no, "not a JSON object"));
  return doc;
}

std::string string_field(const nlohmann::json& doc, const char* key, std::size_t line_no) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_string()) {
    throw SelectionError(line_error(line_no, std::string("missing string field \"") + key + "\""));
  }
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(SelectMode mode) { return mode == SelectMode::Best ? "best" : "worst"; }

std::optional<SelectMode> parse_select_mode(std::string_view text) {
  if (text == "best") return SelectMode::Best;
  if (text == "worst") return SelectMode::Worst;
  return std::nullopt;
}

std::vector<std::size_t> draw_subset(std::size_t count, std::size_t n, std::uint64_t seed) {
  if (n > count) throw SelectionError("subset larger than the candidate set");
  std::vector<std::size_t> indices(count);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(indices[i], indices[i + rng.below(count - i)]);
  }
  indices.resize(n);
  return indices;
}

const Candidate& select(const CandidateSet& set, std::size_t n, SelectMode mode,
                        std::uint64_t seed) {
  if (n < 1 || n > set.candidates.size()) {
    throw SelectionError("n must lie in [1, " + std::to_string(set.candidates.size()) + "], got " +
                         std::to_string(n));
  }
  const auto subset = draw_subset(set.candidates.size(), n, seed);
  const Candidate* chosen = &set.candidates[subset.front()];
  for (std::size_t i : subset) {
    if (better(set.candidates[i], *chosen, mode)) chosen = &set.candidates[i];
  }
  return *chosen;
}

SelectionCurve curve(std::span<const CandidateSet> sets, std::span<const std::size_t> grid,
                     std::size_t draws, std::uint64_t seed, SelectMode mode, Backend backend) {
  SelectionCurve result;
  if (grid.empty() || sets.empty() || draws == 0) return result;
  const std::size_t largest = *std::max_element(grid.begin(), grid.end());
  for (const auto& set : sets) {
    if (largest > set.candidates.size() || *std::min_element(grid.begin(), grid.end()) < 1) {
      throw SelectionError("grid value outside [1, candidates] for prompt \"" + set.prompt_id + "\"");
    }
  }

  const std::size_t trials = sets.size() * draws;
  // picked[trial * grid.size() + g]
  std::vector<double> picked(trials * grid.size());
  auto run_trial = [&](std::size_t trial) {
    const auto& set = sets[trial / draws];
    const auto order = draw_subset(set.candidates.size(), largest, mix_seed(seed, trial));
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const Candidate* chosen = &set.candidates[order.front()];
      for (std::size_t k = 1; k < grid[g]; ++k) {
        if (better(set.candidates[order[k]], *chosen, mode)) chosen = &set.candidates[order[k]];
      }
      picked[trial * grid.size() + g] = chosen->score.passage;
    }
  };
  if (backend == Backend::Serial) {
    for (std::size_t t = 0; t < trials; ++t) run_trial(t);
  } else {
    const auto count = static_cast<std::ptrdiff_t>(trials);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t t = 0; t < count; ++t) run_trial(static_cast<std::size_t>(t));
  }

  for (std::size_t g = 0; g < grid.size(); ++g) {
    CurvePoint point;
    point.n = grid[g];
    point.samples = trials;
    std::vector<double> all(trials);
    std::vector<double> prompt_means(sets.size());
    double within = 0.0;
    std::vector<double> per_prompt(draws);
    for (std::size_t s = 0; s < sets.size(); ++s) {
      double sum = 0.0;
      for (std::size_t d = 0; d < draws; ++d) {
        const double v = picked[(s * draws + d) * grid.size() + g];
        per_prompt[d] = v;
        all[s * draws + d] = v;
        sum += v;
      }
      prompt_means[s] = sum / static_cast<double>(draws);
      within += sample_variance(per_prompt);
    }
    double total = 0.0;
    for (double v : all) total += v;
    point.mean = total / static_cast<double>(trials);
    point.variance = sample_variance(all);
    point.variance_across_prompts = sample_variance(prompt_means);
    point.variance_across_draws = within / static_cast<double>(sets.size());
    result.points.push_back(point);
  }
  return result;
}

std::string curve_csv(const SelectionCurve& curve, bool variance_detail) {
  std::string out = variance_detail ? "n,mean,variance,variance_across_prompts,variance_across_draws\n"
                                    : "n,mean,variance\n";
  char buffer[160];
  for (const auto& p : curve.points) {
    if (variance_detail) {
      std::snprintf(buffer, sizeof buffer, "%zu,%.17g,%.17g,%.17g,%.17g\n", p.n, p.mean, p.variance,
                    p.variance_across_prompts, p.variance_across_draws);
    } else {
      std::snprintf(buffer, sizeof buffer, "%zu,%.17g,%.17g\n", p.n, p.mean, p.variance);
    }
    out += buffer;
  }
  return out;
}

std::vector<Generation> parse_generations(std::string_view text) {
  std::vector<Generation> out;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto doc = parse_object(line_no, line);
    out.push_back({string_field(doc, "prompt_id", line_no), string_field(doc, "candidate_id", line_no),
                   string_field(doc, "prompt", line_no), string_field(doc, "response", line_no)});
  });
  return out;
}

std::vector<CandidateSet> score_external(std::span<const Generation> generations,
                                         const Scorer& model, Backend backend) {
  const Granularity granularity = granularity_of(model);
  std::vector<CandidateSet> sets;
  std::map<std::string, std::size_t> set_of;
  std::map<std::string, std::string> prompt_text;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& g : generations) {
    auto [it, inserted] = prompt_text.emplace(g.prompt_id, g.prompt);
    if (!inserted && it->second != g.prompt) {
      throw SelectionError("prompt id \"" + g.prompt_id + "\" is used for different prompts");
    }
    if (!seen.emplace(g.prompt_id, g.candidate_id).second) {
      throw SelectionError("candidate \"" + g.candidate_id + "\" appears twice under prompt \"" +
                           g.prompt_id + "\"");
    }
  }

  std::vector<PassageScore> scores(generations.size());
  const auto count = static_cast<std::ptrdiff_t>(generations.size());
  if (backend == Backend::Serial) {
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      scores[i] = score_passage(model, generations[i].prompt, generations[i].response, granularity);
    }
  } else {
    // Exceptions may not leave an OpenMP region; capture the first one.
    std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      try {
        scores[i] =
            score_passage(model, generations[i].prompt, generations[i].response, granularity);
      } catch (...) {
#pragma omp critical
        if (!failure) failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
  }

  for (std::size_t i = 0; i < generations.size(); ++i) {
    const auto& g = generations[i];
    auto [it, inserted] = set_of.emplace(g.prompt_id, sets.size());
    if (inserted) sets.push_back({g.prompt_id, {}});
    sets[it->second].candidates.push_back({g.candidate_id, g.response, std::move(scores[i])});
  }
  return sets;
}

std::vector<CandidateSet> parse_score_report(std::string_view text) {
  std::vector<CandidateSet> sets;
  std::map<std::string, std::size_t> set_of;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto doc = parse_object(line_no, line);
    Candidate candidate;
    candidate.id = string_field(doc, "id", line_no);
    auto score = doc.find("passage_score");
    if (score == doc.end() || !score->is_number() || !std::isfinite(score->get<double>())) {
      throw SelectionError(line_error(line_no, "missing finite \"passage_score\""));
    }
    candidate.score.passage = score->get<double>();
    if (auto it = doc.find("sentence_scores"); it != doc.end() && it->is_array()) {
      candidate.score.sentence_scores = it->get<std::vector<double>>();
    }
    std::string prompt_id;
    if (doc.contains("prompt_id")) prompt_id = string_field(doc, "prompt_id", line_no);
    auto [it, inserted] = set_of.emplace(prompt_id, sets.size());
    if (inserted) sets.push_back({prompt_id, {}});
    for (const auto& existing : sets[it->second].candidates) {
      if (existing.id == candidate.id) {
        throw SelectionError(line_error(line_no, "duplicate candidate \"" + candidate.id + "\""));
      }
    }
    sets[it->second].candidates.push_back(std::move(candidate));
  });
  return sets;
}

std::string score_report(std::span<const CandidateSet> sets) {
  std::string out;
  for (const auto& set : sets) {
    for (const auto& candidate : set.candidates) {
      out += score_report_line(candidate.id, candidate.score, set.prompt_id);
      out += '\n';
    }
  }
  return out;
}

std::string selection_report_line(const std::string& prompt_id, std::size_t n, SelectMode mode,
                                  const Candidate& chosen) {
  nlohmann::ordered_json doc;
  doc["prompt_id"] = prompt_id;
  doc["n"] = n;
  doc["mode"] = to_string(mode);
  doc["chosen"] = chosen.id;
  doc["score"] = chosen.score.passage;
  return doc.dump();
}

}  // namespace halluc
