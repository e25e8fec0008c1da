#include "halluc/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "halluc/segmenter.hpp"

namespace halluc {

WordCounts count_words(const AnnotatedResponse& record) {
  const auto tokens = tokenize(record.response);
  const auto units = labeled_units(record);
  const auto owner = assign_tokens_to_units(units, tokens);
  WordCounts counts;
  counts.total = tokens.size();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    switch (units[owner[t]].label) {
      case Label::Inaccurate:
      case Label::Unsure:
        ++counts.inaccurate;
        break;
      case Label::Analysis:
        ++counts.analysis;
        break;
      case Label::Accurate:
        break;
    }
  }
  return counts;
}

double hallucination_rate(const AnnotatedResponse& record) {
  const auto counts = count_words(record);
  const std::size_t descriptive = counts.total - counts.analysis;
  if (descriptive == 0) return 0.0;
  return static_cast<double>(counts.inaccurate) / static_cast<double>(descriptive);
}

EvalRecord make_eval_record(const AnnotatedResponse& record, double reward_score) {
  return {record.id, reward_score, 1.0 - hallucination_rate(record)};
}

std::optional<double> pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = xs.size();
  if (n < 2) return std::nullopt;
  // Constant axes are caught exactly; centering could leave rounding residue.
  const auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  if (constant(xs) || constant(ys)) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

std::optional<double> correlate(std::span<const EvalRecord> records) {
  std::vector<double> xs, ys;
  for (const auto& r : records) {
    xs.push_back(r.reward_score);
    ys.push_back(r.truthful_fraction);
  }
  return pearson(xs, ys);
}

std::string correlation_csv(std::span<const EvalRecord> records) {
  std::string out = "id,reward_score,human_score\n";
  char buffer[64];
  for (const auto& r : records) {
    out += r.id;
    std::snprintf(buffer, sizeof buffer, ",%.17g,%.17g\n", r.reward_score, r.truthful_fraction);
    out += buffer;
  }
  return out;
}

std::vector<EvalRecord> parse_correlation_csv(std::string_view text) {
  std::vector<EvalRecord> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  const auto number = [&](std::string_view field) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": bad number \"" +
                                  std::string(field) + "\"");
    }
    return value;
  };
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (line_no == 1 && line.starts_with("id,")) continue;
    const std::size_t c2 = line.rfind(',');
    const std::size_t c1 = c2 == std::string_view::npos ? c2 : line.rfind(',', c2 - 1);
    if (c1 == std::string_view::npos || c2 == std::string_view::npos || c1 == c2) {
      throw std::invalid_argument("line " + std::to_string(line_no) + ": expected 3 columns");
    }
    out.push_back({std::string(line.substr(0, c1)), number(line.substr(c1 + 1, c2 - c1 - 1)),
                   number(line.substr(c2 + 1))});
  }
  return out;
}

}  // namespace halluc
