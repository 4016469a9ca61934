#include "subpop/matrix.hpp"

#include <cmath>
#include <string>

#include "subpop/errors.hpp"

namespace subpop {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
  if (rows == 0 || cols == 0) {
    throw ArgumentError("Matrix dimensions must be >= 1, got " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows == 0 || cols == 0) {
    throw ArgumentError("Matrix dimensions must be >= 1, got " +
                        std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (data_.size() != rows * cols) {
    throw ArgumentError("Matrix data length " + std::to_string(data_.size()) +
                        " does not match " + std::to_string(rows) + "x" +
                        std::to_string(cols));
  }
  if (!all_finite()) {
    throw ArgumentError("Matrix contains non-finite entries");
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  Matrix out(static_cast<std::size_t>(m.rows()),
             static_cast<std::size_t>(m.cols()));
  out.eigen() = m;
  if (!out.all_finite()) {
    throw ArgumentError("Matrix contains non-finite entries");
  }
  return out;
}

double Matrix::at(std::size_t i, std::size_t j) const {
  if (i >= rows_ || j >= cols_) {
    throw ArgumentError("Matrix index (" + std::to_string(i) + ", " +
                        std::to_string(j) + ") out of range for " +
                        std::to_string(rows_) + "x" + std::to_string(cols_));
  }
  return data_[i * cols_ + j];
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace subpop
