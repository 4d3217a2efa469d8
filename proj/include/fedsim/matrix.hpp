#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fedsim {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  bool all_finite() const;
};

/// C = A * B.
Matrix matmul(const Matrix& a, const Matrix& b);

/// C = A^T * B.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// C = A * B^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// Adds a row vector to every row of m in place.
void add_row_vector(Matrix& m, std::span<const double> v);

/// Column sums of m.
std::vector<double> column_sums(const Matrix& m);

/// New matrix containing the given rows of m, in order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx);

}  // namespace fedsim
