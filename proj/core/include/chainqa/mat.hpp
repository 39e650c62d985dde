#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "chainqa/common.hpp"

namespace chainqa {

using Vec = std::vector<double>;

/// Dense row-major matrix of doubles. Deliberately minimal: every numeric
/// routine in this project spells out its own loops so accumulation order is
/// fixed and reproducible.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {a.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {a.data() + r * cols, cols}; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  void set_zero() { std::fill(a.begin(), a.end(), 0.0); }
};

/// Dot product accumulated sequentially over dimensions 0..d-1. Index
/// exactness tests reproduce this exact floating-point sum; do not reorder.
inline double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DataError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline Vec matvec(const Mat& m, std::span<const double> x) {
  if (m.cols != x.size()) throw DataError("matvec: dimension mismatch");
  Vec out(m.rows);
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
  return out;
}

/// m^T x with x of length m.rows.
inline Vec matvec_transposed(const Mat& m, std::span<const double> x) {
  if (m.rows != x.size()) throw DataError("matvec_transposed: dimension mismatch");
  Vec out(m.cols, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double xr = x[r];
    const double* row = m.a.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += xr * row[c];
  }
  return out;
}

/// acc += scale * u v^T
inline void add_outer(Mat& acc, double scale, std::span<const double> u,
                      std::span<const double> v) {
  if (acc.rows != u.size() || acc.cols != v.size())
    throw DataError("add_outer: dimension mismatch");
  for (std::size_t r = 0; r < acc.rows; ++r) {
    double* row = acc.a.data() + r * acc.cols;
    const double s = scale * u[r];
    for (std::size_t c = 0; c < acc.cols; ++c) row[c] += s * v[c];
  }
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DataError("axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw DataError("logsumexp: empty input");
  double mx = xs[0];
  for (double x : xs) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

inline Vec softmax(std::span<const double> xs) {
  if (xs.empty()) throw DataError("softmax: empty input");
  double mx = xs[0];
  for (double x : xs) mx = std::max(mx, x);
  Vec out(xs.size());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - mx);
    s += out[i];
  }
  for (double& v : out) v /= s;
  return out;
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.a)); }

}  // namespace chainqa
