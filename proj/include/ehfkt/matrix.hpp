#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace ehfkt {

/// Row-major dense matrix of 64-bit reals. The only tensor type in the
/// toolkit; row and column vectors are 1xN / Nx1 matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols);  // zero-filled
  Matrix(int rows, int cols, double fill);

  static Matrix row(std::initializer_list<double> values);
  static Matrix of(int rows, int cols, std::initializer_list<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  std::string shape_str() const;

  bool all_finite() const;
  void fill(double v);

  bool operator==(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Standard product; throws DimensionError naming both shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix sigmoid(const Matrix& x);
Matrix tanh(const Matrix& x);

/// Row-wise softmax with max-subtraction; each output row sums to 1.
Matrix softmax_rows(const Matrix& x);

double sigmoid(double x);

/// Probability clamp applied before logs in every cross-entropy path.
inline constexpr double kProbEps = 1e-7;
double clamp_prob(double p);

/// Binary cross-entropy -(t log p + (1-t) log(1-p)) with p clamped
/// into [kProbEps, 1-kProbEps].
double bce(double pred, int target);

}  // namespace ehfkt
