#include "halluc/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace halluc::kernels {

namespace {

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 14;

inline double affine_element(ConstMatrixView in, ConstMatrixView weight,
                             std::span<const double> bias, std::size_t i, std::size_t o) {
  double acc = bias.empty() ? 0.0 : bias[o];
  const auto x = in.row(i);
  const auto w = weight.row(o);
  for (std::size_t k = 0; k < x.size(); ++k) acc += w[k] * x[k];
  return acc;
}

inline void log_softmax_row(std::span<double> row) {
  double max = -std::numeric_limits<double>::infinity();
  for (double v : row) max = std::max(max, v);
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - max);
  const double lse = max + std::log(sum);
  for (double& v : row) v -= lse;
}

// Column o of the weight gradient: sums over rows of grad_out in order.
inline void affine_grad_row(ConstMatrixView grad_out, ConstMatrixView in, MatrixView grad_weight,
                            std::span<double> grad_bias, std::size_t o) {
  auto gw = grad_weight.row(o);
  double gb = 0.0;
  for (std::size_t i = 0; i < grad_out.rows; ++i) {
    const double g = grad_out(i, o);
    if (g == 0.0) continue;
    const auto x = in.row(i);
    for (std::size_t k = 0; k < gw.size(); ++k) gw[k] += g * x[k];
    gb += g;
  }
  if (!grad_bias.empty()) grad_bias[o] += gb;
}

inline void backproject_row(ConstMatrixView grad_out, ConstMatrixView weight, Matrix& grad_in,
                            std::size_t i) {
  auto gi = grad_in.row(i);
  const auto g = grad_out.row(i);
  for (std::size_t o = 0; o < g.size(); ++o) {
    if (g[o] == 0.0) continue;
    const auto w = weight.row(o);
    for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += g[o] * w[k];
  }
}

}  // namespace

namespace serial {

void affine_rows(ConstMatrixView in, ConstMatrixView weight, std::span<const double> bias,
                 Matrix& out) {
  assert(in.cols == weight.cols);
  out = Matrix(in.rows, weight.rows);
  for (std::size_t i = 0; i < in.rows; ++i) {
    for (std::size_t o = 0; o < weight.rows; ++o) out(i, o) = affine_element(in, weight, bias, i, o);
  }
}

void log_softmax_rows(Matrix& logits) {
  for (std::size_t i = 0; i < logits.rows(); ++i) log_softmax_row(logits.row(i));
}

void accumulate_affine_grad(ConstMatrixView grad_out, ConstMatrixView in, MatrixView grad_weight,
                            std::span<double> grad_bias) {
  assert(grad_out.rows == in.rows && grad_weight.rows == grad_out.cols);
  for (std::size_t o = 0; o < grad_out.cols; ++o) {
    affine_grad_row(grad_out, in, grad_weight, grad_bias, o);
  }
}

void backproject(ConstMatrixView grad_out, ConstMatrixView weight, Matrix& grad_in) {
  assert(grad_out.cols == weight.rows && grad_in.cols() == weight.cols);
  for (std::size_t i = 0; i < grad_out.rows; ++i) backproject_row(grad_out, weight, grad_in, i);
}

}  // namespace serial

namespace parallel {

void affine_rows(ConstMatrixView in, ConstMatrixView weight, std::span<const double> bias,
                 Matrix& out) {
  assert(in.cols == weight.cols);
  out = Matrix(in.rows, weight.rows);
  const auto rows = static_cast<std::ptrdiff_t>(in.rows);
  const bool big = in.rows * weight.rows * weight.cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    for (std::size_t o = 0; o < weight.rows; ++o) {
      out(i, o) = affine_element(in, weight, bias, static_cast<std::size_t>(i), o);
    }
  }
}

void log_softmax_rows(Matrix& logits) {
  const auto rows = static_cast<std::ptrdiff_t>(logits.rows());
  const bool big = logits.rows() * logits.cols() >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < rows; ++i) log_softmax_row(logits.row(static_cast<std::size_t>(i)));
}

void accumulate_affine_grad(ConstMatrixView grad_out, ConstMatrixView in, MatrixView grad_weight,
                            std::span<double> grad_bias) {
  assert(grad_out.rows == in.rows && grad_weight.rows == grad_out.cols);
  const auto outputs = static_cast<std::ptrdiff_t>(grad_out.cols);
  const bool big = grad_out.rows * grad_out.cols * in.cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t o = 0; o < outputs; ++o) {
    affine_grad_row(grad_out, in, grad_weight, grad_bias, static_cast<std::size_t>(o));
  }
}

void backproject(ConstMatrixView grad_out, ConstMatrixView weight, Matrix& grad_in) {
  assert(grad_out.cols == weight.rows && grad_in.cols() == weight.cols);
  const auto rows = static_cast<std::ptrdiff_t>(grad_out.rows);
  const bool big = grad_out.rows * grad_out.cols * weight.cols >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    backproject_row(grad_out, weight, grad_in, static_cast<std::size_t>(i));
  }
}

}  // namespace parallel

void affine_rows(Backend backend, ConstMatrixView in, ConstMatrixView weight,
                 std::span<const double> bias, Matrix& out) {
  backend == Backend::Serial ? serial::affine_rows(in, weight, bias, out)
                             : parallel::affine_rows(in, weight, bias, out);
}

void log_softmax_rows(Backend backend, Matrix& logits) {
  backend == Backend::Serial ? serial::log_softmax_rows(logits)
                             : parallel::log_softmax_rows(logits);
}

void accumulate_affine_grad(Backend backend, ConstMatrixView grad_out, ConstMatrixView in,
                            MatrixView grad_weight, std::span<double> grad_bias) {
  backend == Backend::Serial
      ? serial::accumulate_affine_grad(grad_out, in, grad_weight, grad_bias)
      : parallel::accumulate_affine_grad(grad_out, in, grad_weight, grad_bias);
}

void backproject(Backend backend, ConstMatrixView grad_out, ConstMatrixView weight,
                 Matrix& grad_in) {
  backend == Backend::Serial ? serial::backproject(grad_out, weight, grad_in)
                             : parallel::backproject(grad_out, weight, grad_in);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace halluc::kernels
