#include <algorithm>
#include <cmath>
#include <numeric>

#include "halluc/random.hpp"
#include "halluc/scorer.hpp"

namespace halluc {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + 1e-8);
}

GradientReport grad_check(Scorer& model, const LossFunction& loss,
                          const GradCheckOptions& options) {
  GradientReport report;
  report.analytic.assign(model.parameter_count(), 0.0);
  const double base = loss(model, &report.analytic);
  if (!std::isfinite(base)) throw NonFiniteLoss("loss is not finite at the current parameters");

  report.indices.resize(model.parameter_count());
  std::iota(report.indices.begin(), report.indices.end(), std::size_t{0});
  if (options.max_parameters != 0 && options.max_parameters < report.indices.size()) {
    const std::size_t keep = std::max<std::size_t>(options.max_parameters, 200);
    Rng rng(options.seed);
    rng.shuffle(std::span<std::size_t>(report.indices));
    report.indices.resize(std::min(keep, report.indices.size()));
    std::sort(report.indices.begin(), report.indices.end());
  }

  auto params = model.parameters();
  const double eps = options.epsilon;
  report.numeric.reserve(report.indices.size());
  for (std::size_t index : report.indices) {
    const double saved = params[index];
    params[index] = saved + eps;
    const double plus = loss(model, nullptr);
    params[index] = saved - eps;
    const double minus = loss(model, nullptr);
    params[index] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NonFiniteLoss("loss is not finite near parameter " + std::to_string(index));
    }
    const double numeric = (plus - minus) / (2.0 * eps);
    report.numeric.push_back(numeric);
    const double err = relative_error(report.analytic[index], numeric);
    if (err > report.max_relative_error) {
      report.max_relative_error = err;
      report.worst_index = index;
    }
  }
  return report;
}

}  // namespace halluc
