#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "rank1sense/errors.hpp"
#include "rank1sense/rng.hpp"

namespace rank1sense {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& a) { return a.allFinite(); }

inline void require_finite(const Matrix& a, const std::string& what) {
  if (!a.allFinite()) throw InvalidParameter(what + ": non-finite entries");
}

/// ‖UᵀU − I‖ in spectral norm; 0 for perfectly orthonormal columns.
inline double orthonormality_defect(const Matrix& u) {
  Matrix g = u.transpose() * u;
  g.diagonal().array() -= 1.0;
  return g.norm() == 0.0 ? 0.0
                         : Eigen::JacobiSVD<Matrix>(g).singularValues()(0);
}

inline void require_orthonormal(const Matrix& u, double tol,
                                const std::string& what) {
  if (orthonormality_defect(u) > tol)
    throw NotOrthonormal(what + ": columns are not orthonormal within " +
                         std::to_string(tol));
}

// ---------------------------------------------------------------------------
// SVD-backed primitives
// ---------------------------------------------------------------------------

namespace detail {

/// Singular values only. Jacobi for small blocks, divide-and-conquer above.
inline Vector singular_values(const Matrix& a) {
  if (std::min(a.rows(), a.cols()) <= 16)
    return Eigen::JacobiSVD<Matrix>(a).singularValues();
  return Eigen::BDCSVD<Matrix>(a).singularValues();
}

}  // namespace detail

/// Largest singular value. Zero matrices are allowed and return 0.
inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  return detail::singular_values(a)(0);
}

/// Power-iteration estimate of the largest singular value.
///
/// Intended for tall design matrices where a full SVD is wasteful. The start
/// vector is drawn from a fixed stream of `seed` so results are reproducible.
inline double spectral_norm_power(const Matrix& a, double tol = 1e-10,
                                  int max_iter = 10000,
                                  std::uint64_t seed = 0) {
  if (a.size() == 0) return 0.0;
  Rng rng = Rng::stream(seed, 0x9f0ULL << 32);
  Vector v(a.cols());
  for (Index i = 0; i < v.size(); ++i) v(i) = rng.gaussian();
  double nv = v.norm();
  if (nv == 0.0) return 0.0;
  v /= nv;
  double sigma = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Vector w = a.transpose() * (a * v);
    const double nw = w.norm();
    if (nw == 0.0) return 0.0;
    v = w / nw;
    const double next = std::sqrt(nw);
    if (std::abs(next - sigma) <= tol * std::max(next, 1.0)) return next;
    sigma = next;
  }
  return sigma;
}

struct ThinQr {
  Matrix q;  // d×k, orthonormal columns
  Matrix r;  // k×k, upper triangular, positive diagonal
};

/// Thin QR of a d×k matrix, d ≥ k.
///
/// The diagonal of R is forced positive, which makes the factorization
/// unique and test output deterministic. Throws RankDeficient when the
/// smallest singular value falls below 1e-12 times the largest.
inline ThinQr thin_qr(const Matrix& a) {
  const Index d = a.rows();
  const Index k = a.cols();
  if (d < k) throw DimensionMismatch("thin_qr: need rows >= cols");
  Eigen::HouseholderQR<Matrix> qr(a);
  ThinQr out;
  out.q = qr.householderQ() * Matrix::Identity(d, k);
  out.r = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  for (Index j = 0; j < k; ++j) {
    if (out.r(j, j) < 0.0) {
      out.r.row(j) *= -1.0;
      out.q.col(j) *= -1.0;
    }
  }
  const Vector sv = Eigen::JacobiSVD<Matrix>(out.r).singularValues();
  if (sv(k - 1) <= 1e-12 * sv(0) || sv(0) == 0.0)
    throw RankDeficient("thin_qr: numerically rank-deficient input");
  return out;
}

/// Orthonormal basis of the top-k left singular subspace of A.
inline Matrix top_k_left_singular_vectors(const Matrix& a, Index k) {
  if (k < 1 || k > std::min(a.rows(), a.cols()))
    throw DimensionMismatch("top_k_left_singular_vectors: invalid k");
  if (std::min(a.rows(), a.cols()) <= 16) {
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU);
    return svd.matrixU().leftCols(k);
  }
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(k);
}

// ---------------------------------------------------------------------------
// Vectorization
// ---------------------------------------------------------------------------

/// Column-stacking vectorization: entry (i, j) of a d×k matrix goes to
/// position j·d + i (0-based).
inline Vector vectorize(const Matrix& a) {
  return Eigen::Map<const Vector>(a.data(), a.size());
}

inline Matrix unvectorize(const Vector& v, Index rows, Index cols) {
  if (v.size() != rows * cols)
    throw DimensionMismatch("unvectorize: length does not match rows*cols");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

/// Row-wise product of B (m×k) and Y (m×d): row i is the column-stacking
/// vectorization of the k×d outer product B_{i,:}ᵀ · Y_{i,:}, so entry
/// (i, j·k + p) equals B(i,p)·Y(i,j). With B = XU this reproduces the
/// sensing design matrix row-for-row.
inline Matrix row_kron(const Matrix& b, const Matrix& y) {
  if (b.rows() != y.rows())
    throw DimensionMismatch("row_kron: row counts differ");
  const Index m = b.rows();
  const Index k = b.cols();
  const Index d = y.cols();
  Matrix out(m, k * d);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < d; ++j)
      for (Index p = 0; p < k; ++p) out(i, j * k + p) = b(i, p) * y(i, j);
  return out;
}

}  // namespace rank1sense
