#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ovdlab {

// Dense row-major matrix of doubles. Every tensor in the toy models is 2-D:
// feature maps are stored as (H*W, C) with rows in (y, x) order.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0);
  Matrix(int rows, int cols, std::vector<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
  std::span<const double> row(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
  }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  // Bitwise comparison of values (distinguishes -0.0 from 0.0 and compares NaN payloads).
  bool bitwise_equal(const Matrix& o) const;
  bool operator==(const Matrix& o) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// c = a * b. Each output element accumulates its products in ascending inner
// index order, so results do not depend on the matrix shapes around them.
Matrix matmul(const Matrix& a, const Matrix& b);
// c += a * b
void matmul_accumulate(const Matrix& a, const Matrix& b, Matrix& c);
Matrix transpose(const Matrix& a);

}  // namespace ovdlab
