#include "vci/matrix.hpp"

#include <cmath>
#include <string>

#include "vci/error.hpp"
#include "vci/threading.hpp"

namespace vci {

Matrix::Matrix(int rows, int cols)
    : rows_(rows), cols_(cols),
      data_(static_cast<size_t>(rows) * static_cast<size_t>(cols), 0.0) {
  if (rows < 0 || cols < 0) throw ShapeError("negative matrix dimension");
}

Matrix::Matrix(int rows, int cols, std::initializer_list<double> values)
    : Matrix(rows, cols) {
  if (static_cast<long>(values.size()) != size()) {
    throw ShapeError("initializer size " + std::to_string(values.size()) +
                     " does not fill " + shape_string(*this));
  }
  size_t i = 0;
  for (double v : values) data_[i++] = v;
}

Matrix Matrix::filled(int rows, int cols, double value) {
  Matrix m(rows, cols);
  for (double& v : m.data_) v = value;
  return m;
}

std::string shape_string(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + ")";
}

namespace {

void require(bool ok, const std::string& op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(op + ": incompatible shapes " + shape_string(a) + " and " +
                     shape_string(b));
  }
}

}  // namespace

Matrix matmul_abt(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), "matmul_abt", a, b);
  Matrix out(a.rows(), b.rows());
  const int q = a.cols();
  parallel_for(a.rows(), 2.0 * q * b.rows(), [&](long begin, long end) {
    for (long i = begin; i < end; ++i) {
      const double* arow = a.row(static_cast<int>(i)).data();
      double* orow = out.row(static_cast<int>(i)).data();
      for (int j = 0; j < b.rows(); ++j) {
        const double* brow = b.row(j).data();
        double acc = 0.0;
        for (int k = 0; k < q; ++k) acc += arow[k] * brow[k];
        orow[j] = acc;
      }
    }
  });
  return out;
}

Matrix matmul_ab(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), "matmul_ab", a, b);
  Matrix out(a.rows(), b.cols());
  const int q = a.cols();
  const int r = b.cols();
  parallel_for(a.rows(), 2.0 * q * r, [&](long begin, long end) {
    for (long i = begin; i < end; ++i) {
      const double* arow = a.row(static_cast<int>(i)).data();
      double* orow = out.row(static_cast<int>(i)).data();
      for (int k = 0; k < q; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        const double* brow = b.row(k).data();
        for (int j = 0; j < r; ++j) orow[j] += aik * brow[j];
      }
    }
  });
  return out;
}

Matrix matmul_atb(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows(), "matmul_atb", a, b);
  Matrix out(a.cols(), b.cols());
  const int p = a.rows();
  const int r = b.cols();
  parallel_for(a.cols(), 2.0 * p * r, [&](long begin, long end) {
    for (long j = begin; j < end; ++j) {
      double* orow = out.row(static_cast<int>(j)).data();
      for (int i = 0; i < p; ++i) {
        const double aij = a(i, static_cast<int>(j));
        if (aij == 0.0) continue;
        const double* brow = b.row(i).data();
        for (int k = 0; k < r; ++k) orow[k] += aij * brow[k];
      }
    }
  });
  return out;
}

void add_inplace(Matrix& out, const Matrix& a) {
  require(out.same_shape(a), "add_inplace", out, a);
  double* o = out.data().data();
  const double* x = a.data().data();
  const long n = out.size();
  for (long i = 0; i < n; ++i) o[i] += x[i];
}

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> sums(static_cast<size_t>(m.cols()), 0.0);
  for (int i = 0; i < m.rows(); ++i) {
    const double* row = m.row(i).data();
    for (int j = 0; j < m.cols(); ++j) sums[static_cast<size_t>(j)] += row[j];
  }
  return sums;
}

std::vector<double> column_means(const Matrix& m) {
  if (m.rows() == 0) throw DomainError("column_means: empty matrix");
  std::vector<double> means = column_sums(m);
  for (double& v : means) v /= m.rows();
  return means;
}

void ensure_finite(std::span<const double> values, std::string_view context) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value in " + std::string(context));
    }
  }
}

void ensure_finite(const Matrix& m, std::string_view context) {
  ensure_finite(m.data(), context);
}

}  // namespace vci
