// Dense helpers for the small systems in this project: Gaussian elimination
// with partial pivoting, cyclic Jacobi for symmetric eigenproblems (the
// matrices here are at most a few dozen rows), and 2x2 singular values.
#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "distdiff/core.hpp"

namespace distdiff {

/// Solve A x = b in place; A is n x n row-major. Throws on singularity.
inline std::vector<double> solve_linear(std::size_t n, std::vector<double> A,
                                        std::vector<double> b) {
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(A[r * n + col]) > std::abs(A[piv * n + col])) piv = r;
    require(std::abs(A[piv * n + col]) > 1e-300, ErrorCode::Internal,
            "solve_linear: singular system");
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c)
        std::swap(A[piv * n + c], A[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = A[r * n + col] / A[col * n + col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r * n + c] -= f * A[col * n + c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t r = n; r-- > 0;) {
    double acc = b[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= A[r * n + c] * x[c];
    x[r] = acc / A[r * n + r];
  }
  return x;
}

struct SymmetricEigen {
  std::vector<double> values;   // ascending
  std::vector<double> vectors;  // column k (row-major n x n) pairs values[k]
};

/// Cyclic Jacobi; adequate for the n <= ~50 matrices used here.
inline SymmetricEigen eigen_symmetric(std::size_t n, std::vector<double> A) {
  std::vector<double> V(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) V[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += A[p * n + q] * A[p * n + q];
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = A[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        double theta = (A[q * n + q] - A[p * n + p]) / (2 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = A[k * n + p], akq = A[k * n + q];
          A[k * n + p] = c * akp - s * akq;
          A[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = A[p * n + k], aqk = A[q * n + k];
          A[p * n + k] = c * apk - s * aqk;
          A[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = V[k * n + p], vkq = V[k * n + q];
          V[k * n + p] = c * vkp - s * vkq;
          V[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  SymmetricEigen out;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return A[a * n + a] < A[b * n + b];
  });
  out.values.resize(n);
  out.vectors.assign(n * n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = A[order[k] * n + order[k]];
    for (std::size_t r = 0; r < n; ++r)
      out.vectors[r * n + k] = V[r * n + order[k]];
  }
  return out;
}

/// Singular values of a 2x2 matrix [[a,b],[c,d]], ascending.
inline std::pair<double, double> singular_values_2x2(double a, double b,
                                                     double c, double d) {
  double q1 = a * a + b * b + c * c + d * d;
  double q2 = std::hypot(a * a + b * b - c * c - d * d,
                         2 * (a * c + b * d));
  double s1 = std::sqrt(std::max(0.0, (q1 + q2) / 2));
  double s2 = std::sqrt(std::max(0.0, (q1 - q2) / 2));
  return {s2, s1};
}

}  // namespace distdiff
