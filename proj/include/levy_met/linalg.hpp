#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "levy_met/error.hpp"

namespace levy_met {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Hilbert-Schmidt (Frobenius) norm, the matrix norm used throughout.
inline double hs_norm(const Matrix& m) { return m.norm(); }

/// Frobenius norm of a^T b summed in sorted order, so hs_cross_norm(a, b) == hs_cross_norm(b, a) bitwise.
inline double hs_cross_norm(const Matrix& a, const Matrix& b) {
  std::vector<double> squares;
  squares.reserve(static_cast<std::size_t>(a.cols() * b.cols()));
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double dot = 0.0;
      for (Eigen::Index k = 0; k < a.rows(); ++k) dot += a(k, i) * b(k, j);
      squares.push_back(dot * dot);
    }
  }
  std::sort(squares.begin(), squares.end());
  double sum = 0.0;
  for (double s : squares) sum += s;
  return std::sqrt(sum);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Thin QR with the diagonal of R forced positive.
struct PositiveQr {
  Matrix q;
  Matrix r;
};

inline PositiveQr positive_qr(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  const Eigen::Index n = a.cols();
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), n);
  Matrix r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < n; ++k) {
    if (r(k, k) < 0.0) {
      r.row(k) *= -1.0;
      q.col(k) *= -1.0;
    }
  }
  return {std::move(q), std::move(r)};
}

/// Inverse with a condition-number guard.
inline Matrix checked_inverse(const Matrix& m, double rcond_floor = 1e-14) {
  Eigen::JacobiSVD<Matrix> svd(m);
  const auto& s = svd.singularValues();
  require(s.size() > 0 && s(s.size() - 1) > rcond_floor * s(0), ErrorKind::singularity,
          "matrix is numerically singular");
  return m.inverse();
}

inline double log_abs_det(const Matrix& m) {
  Eigen::PartialPivLU<Matrix> lu(m);
  const Matrix& f = lu.matrixLU();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < f.rows(); ++k) {
    require(f(k, k) != 0.0, ErrorKind::singularity, "zero pivot in determinant");
    acc += std::log(std::abs(f(k, k)));
  }
  return acc;
}

}  // namespace levy_met
