#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>

#include "rank1sense/numerics.hpp"
#include "rank1sense/rng.hpp"
#include "rank1sense/sensing.hpp"

namespace rank1sense {

/// Overdetermined least-squares instance min_v ‖Mv − b‖₂ arising from one
/// alternating step: M is m×(dk) and v reshapes to the transposed factor.
struct RegressionProblem {
  Matrix m;  // m×(dk) design matrix
  Vector b;  // m responses
  int d = 0;
  int k = 0;

  RegressionProblem(Matrix design, Vector rhs, int d_, int k_)
      : m(std::move(design)), b(std::move(rhs)), d(d_), k(k_) {
    if (d < 1 || k < 1) throw InvalidParameter("RegressionProblem: need d, k >= 1");
    if (m.cols() != Index(d) * Index(k))
      throw DimensionMismatch("RegressionProblem: design must have dk columns");
    if (b.size() != m.rows())
      throw DimensionMismatch("RegressionProblem: |b| != rows(M)");
    if (m.rows() < m.cols())
      throw InvalidParameter("RegressionProblem: need m >= dk (overdetermined)");
  }

  Index rows() const { return m.rows(); }
  Index cols() const { return m.cols(); }
};

/// Design matrix of the sensing regression: row i is the column-stacking
/// vectorization of Uᵀ A_i = (Uᵀ x_i) y_iᵀ, built through the rank-one
/// shortcut (A_i is never formed densely). Entry (i, j·k + p) is
/// (Uᵀx_i)_p · y_{i,j}, so the matrix equals row_kron(XU, Y) bit-for-bit.
inline Matrix build_design_matrix(const Matrix& u, const MeasurementEnsemble& e) {
  if (u.rows() != e.d)
    throw DimensionMismatch("build_design_matrix: U rows must equal ensemble d");
  const Index m = e.m;
  const Index k = u.cols();
  const Index d = e.d;
  const Matrix c = e.x * u;  // m×k, row i is (Uᵀx_i)ᵀ
  Matrix out(m, d * k);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < d; ++j)
      for (Index p = 0; p < k; ++p) out(i, j * k + p) = c(i, p) * e.y(i, j);
  return out;
}

/// Direct solve through the normal equations (MᵀM)⁻¹Mᵀb, with one step of
/// iterative refinement. Throws IllConditioned when the numerical rank test
/// σ_min(M) > 1e-12·σ_max(M) fails.
inline Vector solve_naive(const RegressionProblem& p) {
  const Matrix gram = p.m.transpose() * p.m;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const Vector lambda = eig.eigenvalues();  // ascending
  const double lmax = lambda(lambda.size() - 1);
  if (lmax <= 0.0 || lambda(0) <= 1e-24 * lmax)
    throw IllConditioned("solve_naive: normal equations numerically singular");
  const Vector rhs = p.m.transpose() * p.b;
  auto apply_inverse = [&](const Vector& w) -> Vector {
    return eig.eigenvectors() *
           (eig.eigenvectors().transpose() * w).cwiseQuotient(lambda);
  };
  Vector v = apply_inverse(rhs);
  v += apply_inverse(rhs - gram * v);  // refinement
  return v;
}

enum class SketchKind {
  sparse_embedding,  // count-sketch style, one ±1 per row of M
  gaussian           // dense Gaussian reference, slow
};

/// Diagnostics of a sketched solve, for benchmarks and summaries.
struct SketchedStats {
  int sketch_rows = 0;
  int attempts = 0;
  int iterations = 0;
  double grad_norm = 0.0;
  double condition_estimate = 0.0;
};

namespace detail {

/// Sketch row budget. The log-factor schedule 4·n·ceil(log2(n/delta)) is
/// capped at m/8 (never below 4·n): past that point the QR of the sketch
/// costs more than the normal equations it is meant to beat, and a sketch
/// taller than M compresses nothing. The residual guarantee is enforced by
/// the iterative stopping criterion, not by the sketch size.
inline Index sketch_rows(Index n, Index m, double delta) {
  const double raw =
      4.0 * double(n) * std::ceil(std::log2(double(n) / delta));
  const Index capped = std::min<Index>(Index(raw), std::max<Index>(1, m / 8));
  return std::max<Index>(4 * n, capped);
}

inline Matrix apply_sketch(const Matrix& m, Index s, SketchKind kind, Rng& rng) {
  if (kind == SketchKind::sparse_embedding) {
    Matrix sm = Matrix::Zero(s, m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
      const Index bucket = Index(rng.next_u64() % std::uint64_t(s));
      const double sign = (rng.next_u64() & 1ULL) ? 1.0 : -1.0;
      sm.row(bucket) += sign * m.row(i);
    }
    return sm;
  }
  Matrix g(s, m.rows());
  const double scale = 1.0 / std::sqrt(double(s));
  for (Index i = 0; i < s; ++i)
    for (Index j = 0; j < m.rows(); ++j) g(i, j) = scale * rng.gaussian();
  return g * m;
}

}  // namespace detail

/// Sketch-to-precondition least squares.
///
/// Pipeline: (1) compress M with a randomized embedding, (2) thin-QR the
/// sketch and keep the triangular factor as a right preconditioner,
/// (3) run CGLS on M·R⁻¹ until the preconditioned residual gradient drops
/// below eps/(10·cond)·‖b‖, (4) map the iterate back through R⁻¹.
/// Output satisfies ‖Mv' − b‖ ≤ (1+eps)·min_v ‖Mv − b‖ with probability
/// at least 1−delta; a rank-deficient sketch is retried up to 3 times with
/// fresh randomness before SketchRankDeficient is raised. Deterministic for
/// a fixed seed.
inline Vector solve_sketched(const RegressionProblem& p, double eps, double delta,
                             std::uint64_t seed,
                             SketchKind kind = SketchKind::sparse_embedding,
                             SketchedStats* stats = nullptr) {
  if (!(eps > 0.0) || !(delta > 0.0 && delta < 1.0))
    throw InvalidParameter("solve_sketched: need eps > 0 and delta in (0,1)");
  const Index n = p.cols();
  const Index m = p.rows();
  if (m < 2 * n) throw InvalidParameter("solve_sketched: need m >= 2·dk");

  const Index s = detail::sketch_rows(n, m, delta);
  Matrix r_factor;
  int attempt = 0;
  for (; attempt < 3; ++attempt) {
    Rng rng = Rng::stream(seed, (0x5cULL << 32) + std::uint64_t(attempt));
    Matrix sm = detail::apply_sketch(p.m, s, kind, rng);
    Eigen::HouseholderQR<Matrix> qr(sm);
    r_factor = qr.matrixQR().topLeftCorner(n, n).triangularView<Eigen::Upper>();
    const double dmax = r_factor.diagonal().cwiseAbs().maxCoeff();
    const double dmin = r_factor.diagonal().cwiseAbs().minCoeff();
    if (dmax > 0.0 && dmin > 1e-12 * dmax) break;
  }
  if (attempt == 3)
    throw SketchRankDeficient("solve_sketched: sketch lost rank after 3 attempts");

  const auto rtri = r_factor.triangularView<Eigen::Upper>();
  auto apply = [&](const Vector& w) -> Vector { return p.m * rtri.solve(w); };
  auto apply_t = [&](const Vector& r) -> Vector {
    return rtri.transpose().solve(Vector(p.m.transpose() * r));
  };

  // Condition estimate of the preconditioned matrix via power iteration on
  // AᵀA and on its spectral complement.
  Rng prng = Rng::stream(seed, 0xc09dULL << 32);
  auto power = [&](const std::function<Vector(const Vector&)>& op) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = prng.gaussian();
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < 8; ++it) {
      Vector w = op(v);
      lambda = v.dot(w);
      const double nw = w.norm();
      if (nw == 0.0) break;
      v = w / nw;
    }
    return lambda;
  };
  const double lmax = std::abs(power([&](const Vector& v) { return apply_t(apply(v)); }));
  const double lresid = std::abs(power([&](const Vector& v) {
    return Vector(lmax * v - apply_t(apply(v)));
  }));
  const double lmin = std::max(lmax - lresid, lmax * 1e-16);
  const double cond = std::sqrt(lmax / lmin);
  const double tol = eps / (10.0 * std::max(cond, 1.0));

  // CGLS on the preconditioned system.
  const double target = tol * p.b.norm();
  Vector w = Vector::Zero(n);
  Vector resid = p.b;
  Vector grad = apply_t(resid);
  Vector dir = grad;
  double gamma = grad.squaredNorm();
  int iters = 0;
  const int cap = 500;
  while (std::sqrt(gamma) > target) {
    if (iters >= cap)
      throw NoConvergence("solve_sketched: CGLS hit the iteration cap");
    const Vector q = apply(dir);
    const double qn = q.squaredNorm();
    if (qn == 0.0) break;
    const double alpha = gamma / qn;
    w += alpha * dir;
    resid -= alpha * q;
    grad = apply_t(resid);
    const double gamma_next = grad.squaredNorm();
    dir = grad + (gamma_next / gamma) * dir;
    gamma = gamma_next;
    ++iters;
  }

  if (stats) {
    stats->sketch_rows = int(s);
    stats->attempts = attempt + 1;
    stats->iterations = iters;
    stats->grad_norm = std::sqrt(gamma);
    stats->condition_estimate = cond;
  }
  return rtri.solve(w);
}

/// σ_max/σ_min through a full SVD; desk-scale sizes only.
inline double condition_number(const Matrix& m) {
  const Vector sv = detail::singular_values(m);
  const double smax = sv(0);
  const double smin = sv(sv.size() - 1);
  if (smax == 0.0 || smin <= 1e-12 * smax)
    throw RankDeficient("condition_number: matrix is numerically rank-deficient");
  return smax / smin;
}

enum class SolveMethod { naive, sketched };

/// One inner alternating step: builds the design matrix for the fixed factor
/// U, solves the regression with the chosen method, and reshapes the solution
/// through v = vec(V̂ᵀ) into the d×k update V̂.
inline Matrix solve_sensing_step(const Matrix& u, const MeasurementEnsemble& e,
                                 const Vector& b, SolveMethod method,
                                 double eps = 1e-6, double delta = 0.01,
                                 std::uint64_t seed = 0) {
  RegressionProblem problem(build_design_matrix(u, e), b, e.d, int(u.cols()));
  const Vector v = method == SolveMethod::naive
                       ? solve_naive(problem)
                       : solve_sketched(problem, eps, delta, seed);
  return unvectorize(v, u.cols(), e.d).transpose();
}

// ---------------------------------------------------------------------------
// Binary dump of (M, b, v) triples for offline solver debugging
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr char kProblemMagic[8] = {'R', '1', 'S', 'L', 'S', 'Q', '1', '\0'};
}

inline void dump_problem(std::ostream& os, const RegressionProblem& p,
                         const Vector& v) {
  os.write(detail::kProblemMagic, sizeof(detail::kProblemMagic));
  const std::int64_t dims[3] = {std::int64_t(p.rows()), std::int64_t(p.d),
                                std::int64_t(p.k)};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  os.write(reinterpret_cast<const char*>(p.m.data()),
           std::streamsize(sizeof(double)) * p.m.size());
  os.write(reinterpret_cast<const char*>(p.b.data()),
           std::streamsize(sizeof(double)) * p.b.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           std::streamsize(sizeof(double)) * v.size());
}

inline std::pair<RegressionProblem, Vector> load_problem(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, detail::kProblemMagic))
    throw InvalidParameter("load_problem: bad magic");
  std::int64_t dims[3];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  const Index m = dims[0], d = dims[1], k = dims[2];
  Matrix design(m, d * k);
  Vector b(m), v(d * k);
  is.read(reinterpret_cast<char*>(design.data()),
          std::streamsize(sizeof(double)) * design.size());
  is.read(reinterpret_cast<char*>(b.data()), std::streamsize(sizeof(double)) * m);
  is.read(reinterpret_cast<char*>(v.data()),
          std::streamsize(sizeof(double)) * v.size());
  if (!is) throw InvalidParameter("load_problem: truncated stream");
  return {RegressionProblem(std::move(design), std::move(b), int(d), int(k)),
          std::move(v)};
}

}  // namespace rank1sense
