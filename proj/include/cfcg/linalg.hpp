#pragma once

// Small dense helpers for the 4x4 mixing matrices and singular-value
// estimates. Everything is computed in double.

#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace cfcg::linalg {

using Mat4 = std::array<double, 16>;  // row-major

inline Mat4 identity4() {
  Mat4 m{};
  for (std::size_t i = 0; i < 4; ++i) m[i * 4 + i] = 1.0;
  return m;
}

inline Mat4 multiply(const Mat4& a, const Mat4& b) {
  Mat4 r{};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < 4; ++j) r[i * 4 + j] += a[i * 4 + k] * b[k * 4 + j];
  return r;
}

// LU with partial pivoting.
inline double determinant(Mat4 a) {
  double det = 1.0;
  for (std::size_t col = 0; col < 4; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < 4; ++r)
      if (std::abs(a[r * 4 + col]) > std::abs(a[piv * 4 + col])) piv = r;
    if (a[piv * 4 + col] == 0.0) return 0.0;
    if (piv != col) {
      for (std::size_t j = 0; j < 4; ++j) std::swap(a[col * 4 + j], a[piv * 4 + j]);
      det = -det;
    }
    det *= a[col * 4 + col];
    for (std::size_t r = col + 1; r < 4; ++r) {
      const double f = a[r * 4 + col] / a[col * 4 + col];
      for (std::size_t j = col; j < 4; ++j) a[r * 4 + j] -= f * a[col * 4 + j];
    }
  }
  return det;
}

// Gauss-Jordan with partial pivoting. Throws on an exactly singular matrix;
// callers guard near-singularity themselves.
inline Mat4 inverse(Mat4 a) {
  Mat4 inv = identity4();
  for (std::size_t col = 0; col < 4; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < 4; ++r)
      if (std::abs(a[r * 4 + col]) > std::abs(a[piv * 4 + col])) piv = r;
    if (a[piv * 4 + col] == 0.0) throw std::domain_error("inverse of singular 4x4 matrix");
    if (piv != col) {
      for (std::size_t j = 0; j < 4; ++j) {
        std::swap(a[col * 4 + j], a[piv * 4 + j]);
        std::swap(inv[col * 4 + j], inv[piv * 4 + j]);
      }
    }
    const double d = a[col * 4 + col];
    for (std::size_t j = 0; j < 4; ++j) {
      a[col * 4 + j] /= d;
      inv[col * 4 + j] /= d;
    }
    for (std::size_t r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r * 4 + col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < 4; ++j) {
        a[r * 4 + j] -= f * a[col * 4 + j];
        inv[r * 4 + j] -= f * inv[col * 4 + j];
      }
    }
  }
  return inv;
}

// Orthogonal factor of a 4x4 QR (modified Gram-Schmidt on columns), with the
// sign convention diag(R) > 0.
inline Mat4 orthogonal_factor(const Mat4& a) {
  Mat4 q{};
  for (std::size_t j = 0; j < 4; ++j) {
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) v[i] = a[i * 4 + j];
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0.0;
      for (std::size_t i = 0; i < 4; ++i) d += q[i * 4 + k] * v[i];
      for (std::size_t i = 0; i < 4; ++i) v[i] -= d * q[i * 4 + k];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw std::domain_error("QR of rank-deficient matrix");
    for (std::size_t i = 0; i < 4; ++i) q[i * 4 + j] = v[i] / norm;
  }
  return q;
}

inline double normalize(std::span<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (auto& x : v) x /= n;
  return n;
}

// Largest singular value of a row-major (rows x cols) matrix by power
// iteration on A^T A, iterated until the estimate stalls.
template <class T>
double top_singular_value(std::span<const T> a, std::size_t rows, std::size_t cols, std::size_t max_iters = 5000,
                          double rel_tol = 1e-15) {
  if (a.size() != rows * cols) throw std::invalid_argument("top_singular_value: size mismatch");
  if (rows == 0 || cols == 0) return 0.0;
  std::vector<double> v(cols), u(rows);
  // Deterministic, generic start vector.
  for (std::size_t j = 0; j < cols; ++j) v[j] = 1.0 + 0.1 * std::sin(static_cast<double>(j) + 1.0);
  normalize(v);
  double sigma = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += static_cast<double>(a[i * cols + j]) * v[j];
      u[i] = acc;
    }
    const double s = normalize(u);
    if (s == 0.0) return 0.0;
    for (std::size_t j = 0; j < cols; ++j) v[j] = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) v[j] += static_cast<double>(a[i * cols + j]) * u[i];
    const double next = normalize(v);
    if (std::abs(next - sigma) <= rel_tol * next) {
      sigma = next;
      break;
    }
    sigma = next;
  }
  return sigma;
}

}  // namespace cfcg::linalg
