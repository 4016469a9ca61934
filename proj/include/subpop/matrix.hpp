#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <vector>

namespace subpop {

using EigenRowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major f64 matrix. Construction validates shape and finiteness;
// a default-constructed Matrix is the empty (0x0) placeholder state and is
// rejected by every numerical operation.
class Matrix {
 public:
  Matrix() : rows_(0), cols_(0) {}

  // Zero-initialized rows x cols matrix.
  Matrix(std::size_t rows, std::size_t cols);

  // Takes ownership of row-major data; throws ArgumentError on size
  // mismatch or non-finite entries.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_eigen(const Eigen::Ref<const Eigen::MatrixXd>& m);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }

  // Bounds-checked access.
  double at(std::size_t i, std::size_t j) const;

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  Eigen::Map<const EigenRowMajor> eigen() const {
    return {data_.data(), static_cast<Eigen::Index>(rows_),
            static_cast<Eigen::Index>(cols_)};
  }
  Eigen::Map<EigenRowMajor> eigen() {
    return {data_.data(), static_cast<Eigen::Index>(rows_),
            static_cast<Eigen::Index>(cols_)};
  }

  bool all_finite() const;

  bool operator==(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ &&
           data_ == other.data_;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

}  // namespace subpop
