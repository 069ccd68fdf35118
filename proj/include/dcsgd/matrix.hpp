#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace dcsgd {

using Vec = std::vector<double>;
using ParamVector = Vec;  // w, w_t, w_bak, w~ all live in flat vectors

// Dense row-major square-or-rectangular matrix. Models here are tiny
// (n <= a few thousand), so plain loops beat any BLAS dispatch overhead.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix zero(std::size_t n) { return Matrix(n, n, 0.0); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  Vec& data() { return data_; }
  const Vec& data() const { return data_; }

  Matrix& operator+=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  Vec apply(const Vec& v) const {
    if (v.size() != cols_) throw std::invalid_argument("matrix-vector dim mismatch");
    Vec out(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      double s = 0.0;
      const double* row = &data_[i * cols_];
      for (std::size_t j = 0; j < cols_; ++j) s += row[j] * v[j];
      out[i] = s;
    }
    return out;
  }

  Matrix diagonal_part() const {
    Matrix out(rows_, cols_, 0.0);
    std::size_t n = rows_ < cols_ ? rows_ : cols_;
    for (std::size_t i = 0; i < n; ++i) out(i, i) = (*this)(i, i);
    return out;
  }

  double frobenius_norm() const { return std::sqrt(frobenius_sq()); }
  double frobenius_sq() const {
    double s = 0.0;
    for (double v : data_) s += v * v;
    return s;
  }

  // max |A_ij - A_ji| / max(1, max|A_ij|)
  double asymmetry() const {
    double num = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) {
        double a = (*this)(i, j);
        if (std::fabs(a) > scale) scale = std::fabs(a);
        if (j > i) {
          double d = std::fabs(a - (*this)(j, i));
          if (d > num) num = d;
        }
      }
    return num / (scale > 1.0 ? scale : 1.0);
  }

  void symmetrize() {
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j) {
        double m = 0.5 * ((*this)(i, j) + (*this)(j, i));
        (*this)(i, j) = m;
        (*this)(j, i) = m;
      }
  }

 private:
  void check_same_shape(const Matrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw std::invalid_argument("matrix shape mismatch");
  }
  std::size_t rows_ = 0, cols_ = 0;
  Vec data_;
};

inline Matrix outer(const Vec& a, const Vec& b) {
  Matrix m(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) m(i, j) = a[i] * b[j];
  return m;
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline bool all_finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace dcsgd
