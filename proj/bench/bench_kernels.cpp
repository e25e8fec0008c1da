// Serial vs OpenMP kernels at scorer-sized shapes. Args: {rows, cols, inner}.

#include <benchmark/benchmark.h>

#include "halluc/kernels.hpp"
#include "halluc/random.hpp"

namespace {

using namespace halluc;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

struct Shape {
  std::size_t rows, cols, inner;
  explicit Shape(const benchmark::State& s)
      : rows(static_cast<std::size_t>(s.range(0))),
        cols(static_cast<std::size_t>(s.range(1))),
        inner(static_cast<std::size_t>(s.range(2))) {}
};

template <Backend B>
void BM_AffineRows(benchmark::State& state) {
  const Shape s(state);
  const Matrix in = random_matrix(s.rows, s.inner, 1);
  const Matrix w = random_matrix(s.cols, s.inner, 2);
  const Matrix b = random_matrix(1, s.cols, 3);
  Matrix out(s.rows, s.cols);
  for (auto _ : state) {
    kernels::affine_rows(B, in, w, b.row(0), out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.rows * s.cols * s.inner));
}

template <Backend B>
void BM_LogSoftmax(benchmark::State& state) {
  const Shape s(state);
  const Matrix source = random_matrix(s.rows, s.cols, 4);
  Matrix logits = source;
  for (auto _ : state) {
    state.PauseTiming();
    logits = source;
    state.ResumeTiming();
    kernels::log_softmax_rows(B, logits);
    benchmark::DoNotOptimize(logits.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.rows * s.cols));
}

template <Backend B>
void BM_AccumulateGrad(benchmark::State& state) {
  const Shape s(state);
  const Matrix grad_out = random_matrix(s.rows, s.cols, 5);
  const Matrix in = random_matrix(s.rows, s.inner, 6);
  Matrix gw(s.cols, s.inner);
  std::vector<double> gb(s.cols);
  const MatrixView view{gw.data().data(), gw.rows(), gw.cols()};
  for (auto _ : state) {
    kernels::accumulate_affine_grad(B, grad_out, in, view, gb);
    benchmark::DoNotOptimize(gw.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.rows * s.cols * s.inner));
}

template <Backend B>
void BM_Backproject(benchmark::State& state) {
  const Shape s(state);
  const Matrix grad_out = random_matrix(s.rows, s.cols, 7);
  const Matrix w = random_matrix(s.cols, s.inner, 8);
  Matrix grad_in(s.rows, s.inner);
  for (auto _ : state) {
    kernels::backproject(B, grad_out, w, grad_in);
    benchmark::DoNotOptimize(grad_in.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(s.rows * s.cols * s.inner));
}

// rows = sequence length, cols = vocabulary, inner = hidden width.
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 512, 32})->Args({256, 2048, 64})->Args({512, 8192, 64});
}

}  // namespace

BENCHMARK(BM_AffineRows<Backend::Serial>)->Apply(shapes);
BENCHMARK(BM_AffineRows<Backend::Parallel>)->Apply(shapes)->UseRealTime();
BENCHMARK(BM_LogSoftmax<Backend::Serial>)->Apply(shapes);
BENCHMARK(BM_LogSoftmax<Backend::Parallel>)->Apply(shapes)->UseRealTime();
BENCHMARK(BM_AccumulateGrad<Backend::Serial>)->Apply(shapes);
BENCHMARK(BM_AccumulateGrad<Backend::Parallel>)->Apply(shapes)->UseRealTime();
BENCHMARK(BM_Backproject<Backend::Serial>)->Apply(shapes);
BENCHMARK(BM_Backproject<Backend::Parallel>)->Apply(shapes)->UseRealTime();

BENCHMARK_MAIN();
