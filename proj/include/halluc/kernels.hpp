#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace halluc {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Non-owning row-major view, used to address parameter blocks in place.
struct MatrixView {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) const { return {data + r * cols, cols}; }
};

struct ConstMatrixView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  ConstMatrixView() = default;
  ConstMatrixView(const double* d, std::size_t r, std::size_t c) : data(d), rows(r), cols(c) {}
  ConstMatrixView(const Matrix& m) : data(m.data().data()), rows(m.rows()), cols(m.cols()) {}
  ConstMatrixView(const MatrixView& m) : data(m.data), rows(m.rows), cols(m.cols) {}

  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }
};

enum class Backend { Serial, Parallel };

namespace kernels {

// Every routine has a serial reference and an OpenMP version. The OpenMP
// version partitions output elements across threads but evaluates each
// output with the same operation order, so the two agree bit for bit.

namespace serial {

/// out(i, :) = weight * in(i, :) + bias
void affine_rows(ConstMatrixView in, ConstMatrixView weight, std::span<const double> bias,
                 Matrix& out);
/// Replaces each row by its log-softmax.
void log_softmax_rows(Matrix& logits);
/// grad_weight += grad_out^T * in, grad_bias += column sums of grad_out.
void accumulate_affine_grad(ConstMatrixView grad_out, ConstMatrixView in, MatrixView grad_weight,
                            std::span<double> grad_bias);
/// grad_in += grad_out * weight
void backproject(ConstMatrixView grad_out, ConstMatrixView weight, Matrix& grad_in);

}  // namespace serial

namespace parallel {

void affine_rows(ConstMatrixView in, ConstMatrixView weight, std::span<const double> bias,
                 Matrix& out);
void log_softmax_rows(Matrix& logits);
void accumulate_affine_grad(ConstMatrixView grad_out, ConstMatrixView in, MatrixView grad_weight,
                            std::span<double> grad_bias);
void backproject(ConstMatrixView grad_out, ConstMatrixView weight, Matrix& grad_in);

}  // namespace parallel

void affine_rows(Backend backend, ConstMatrixView in, ConstMatrixView weight,
                 std::span<const double> bias, Matrix& out);
void log_softmax_rows(Backend backend, Matrix& logits);
void accumulate_affine_grad(Backend backend, ConstMatrixView grad_out, ConstMatrixView in,
                            MatrixView grad_weight, std::span<double> grad_bias);
void backproject(Backend backend, ConstMatrixView grad_out, ConstMatrixView weight,
                 Matrix& grad_in);

/// Threads OpenMP will use for the parallel variants.
int max_threads();

}  // namespace kernels
}  // namespace halluc
