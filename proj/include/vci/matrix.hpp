#pragma once

#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

namespace vci {

// Dense row-major matrix of 64-bit reals. Shapes are checked on every
// operation; mismatches throw ShapeError with both shapes in the message.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);  // zero-filled
  Matrix(int rows, int cols, std::initializer_list<double> values);
  static Matrix filled(int rows, int cols, double value);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  long size() const { return static_cast<long>(rows_) * cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(int r, int c) {
    return data_[static_cast<size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    return data_[static_cast<size_t>(r) * cols_ + c];
  }

  std::span<double> row(int r) {
    return {data_.data() + static_cast<size_t>(r) * cols_,
            static_cast<size_t>(cols_)};
  }
  std::span<const double> row(int r) const {
    return {data_.data() + static_cast<size_t>(r) * cols_,
            static_cast<size_t>(cols_)};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool operator==(const Matrix& other) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

std::string shape_string(const Matrix& m);

// a (p x q) times b-transpose (r x q) -> (p x r). Row-by-row dot products,
// the layout used for X * W^T forward passes.
Matrix matmul_abt(const Matrix& a, const Matrix& b);

// a (p x q) times b (q x r) -> (p x r).
Matrix matmul_ab(const Matrix& a, const Matrix& b);

// a-transpose (q x p) from a (p x q), times b (p x r) -> (q x r). The dW
// pattern of a backward pass.
Matrix matmul_atb(const Matrix& a, const Matrix& b);

// out += a, shape-checked.
void add_inplace(Matrix& out, const Matrix& a);

std::vector<double> column_sums(const Matrix& m);
std::vector<double> column_means(const Matrix& m);

// Throws NumericError naming `context` if any entry is NaN or infinite.
void ensure_finite(const Matrix& m, std::string_view context);
void ensure_finite(std::span<const double> values, std::string_view context);

}  // namespace vci
