#include "ehfkt/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ehfkt/errors.hpp"

namespace ehfkt {

Matrix::Matrix(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {}

Matrix::Matrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

Matrix Matrix::row(std::initializer_list<double> values) {
  Matrix m(1, static_cast<int>(values.size()));
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

Matrix Matrix::of(int rows, int cols, std::initializer_list<double> values) {
  Matrix m(rows, cols);
  if (values.size() != m.size()) {
    throw DimensionError("Matrix::of: " + std::to_string(values.size()) + " values for shape " +
                         m.shape_str());
  }
  std::copy(values.begin(), values.end(), m.data_.begin());
  return m;
}

std::string Matrix::shape_str() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " and " + b.shape_str());
  }
  Matrix out(a.rows(), b.cols());
  const int n = a.rows(), k = a.cols(), m = b.cols();
  // i-k-j order keeps the inner loop contiguous over b and out.
  for (int i = 0; i < n; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
    double* orow = out.data() + static_cast<std::size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b.data() + static_cast<std::size_t>(kk) * m;
      for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  return out;
}

Matrix tanh(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x[i]);
  return out;
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < x.cols(); ++c) mx = std::max(mx, x(r, c));
    double sum = 0.0;
    for (int c = 0; c < x.cols(); ++c) {
      const double e = std::exp(x(r, c) - mx);
      out(r, c) = e;
      sum += e;
    }
    for (int c = 0; c < x.cols(); ++c) out(r, c) /= sum;
  }
  return out;
}

double clamp_prob(double p) { return std::min(std::max(p, kProbEps), 1.0 - kProbEps); }

double bce(double pred, int target) {
  const double p = clamp_prob(pred);
  return target == 1 ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace ehfkt
