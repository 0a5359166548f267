#pragma once

#include <algorithm>
#include <limits>

#include "rank1sense/numerics.hpp"

namespace rank1sense {

namespace detail {

inline void check_subspace_pair(const Matrix& y, const Matrix& x) {
  if (y.rows() != x.rows() || y.cols() != x.cols())
    throw DimensionMismatch("subspace pair: shapes differ");
  require_orthonormal(y, 1e-8, "subspace pair (first factor)");
  require_orthonormal(x, 1e-8, "subspace pair (second factor)");
}

}  // namespace detail

/// sin of the largest principal angle: ‖(I − YYᵀ)X‖, evaluated as the
/// spectral norm of the d×k matrix X − Y(YᵀX). The orthogonal complement
/// of Y is never materialized.
inline double sin_theta(const Matrix& y, const Matrix& x) {
  detail::check_subspace_pair(y, x);
  Matrix residual = x - y * (y.transpose() * x);
  return std::clamp(spectral_norm(residual), 0.0, 1.0);
}

/// cos of the largest principal angle: σ_min(YᵀX).
inline double cos_theta(const Matrix& y, const Matrix& x) {
  detail::check_subspace_pair(y, x);
  const Vector sv = Eigen::JacobiSVD<Matrix>(y.transpose() * x).singularValues();
  return std::clamp(sv(sv.size() - 1), 0.0, 1.0);
}

/// tan of the largest principal angle, computed as sin/cos.
/// Returns +infinity when the subspaces contain orthogonal directions
/// (cos below 1e-12).
inline double tan_theta(const Matrix& y, const Matrix& x) {
  const double c = cos_theta(y, x);
  const double s = sin_theta(y, x);
  if (c < 1e-12) return std::numeric_limits<double>::infinity();
  return s / c;
}

/// Principal-angle distance between the column spaces; alias of sin_theta.
inline double dist(const Matrix& y, const Matrix& x) { return sin_theta(y, x); }

}  // namespace rank1sense
