#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "rank1sense/numerics.hpp"
#include "rank1sense/regression.hpp"
#include "rank1sense/sensing.hpp"
#include "rank1sense/subspace.hpp"

namespace rank1sense {

/// Spectral initialization: (1/m) Σ b_i x_i y_iᵀ.
inline Matrix init_operator(const MeasurementEnsemble& e, const Vector& b) {
  if (b.size() != e.m) throw DimensionMismatch("init_operator: |b| != m");
  return (e.x.transpose() * (b.asDiagonal() * e.y)) / double(e.m);
}

namespace detail {

inline void require_unit(const Vector& v, const char* what) {
  if (std::abs(v.norm() - 1.0) > 1e-10)
    throw NotUnit(std::string(what) + ": vector is not unit length");
}

}  // namespace detail

/// Empirical second-moment operators for unit probes u, v:
///   B_x = (1/m) Σ (y_lᵀv)² x_l x_lᵀ,   B_y = (1/m) Σ (x_lᵀu)² y_l y_lᵀ.
/// Both concentrate around the identity.
inline std::pair<Matrix, Matrix> b_operators(const MeasurementEnsemble& e,
                                             const Vector& u, const Vector& v) {
  if (u.size() != e.d || v.size() != e.d)
    throw DimensionMismatch("b_operators: probe dimension mismatch");
  detail::require_unit(u, "b_operators(u)");
  detail::require_unit(v, "b_operators(v)");
  const Vector wy = (e.y * v).array().square();
  const Vector wx = (e.x * u).array().square();
  Matrix bx = (e.x.transpose() * (wy.asDiagonal() * e.x)) / double(e.m);
  Matrix by = (e.y.transpose() * (wx.asDiagonal() * e.y)) / double(e.m);
  return {std::move(bx), std::move(by)};
}

/// Cross-moment operators for orthogonal unit pairs (u, u_perp), (v, v_perp):
///   G_x = (1/m) Σ (y_lᵀv)(y_lᵀv_perp) x_l x_lᵀ,
///   G_y = (1/m) Σ (x_lᵀu)(x_lᵀu_perp) y_l y_lᵀ.
/// Both concentrate around zero.
inline std::pair<Matrix, Matrix> g_operators(const MeasurementEnsemble& e,
                                             const Vector& u, const Vector& u_perp,
                                             const Vector& v, const Vector& v_perp) {
  if (u.size() != e.d || u_perp.size() != e.d || v.size() != e.d ||
      v_perp.size() != e.d)
    throw DimensionMismatch("g_operators: probe dimension mismatch");
  detail::require_unit(u, "g_operators(u)");
  detail::require_unit(u_perp, "g_operators(u_perp)");
  detail::require_unit(v, "g_operators(v)");
  detail::require_unit(v_perp, "g_operators(v_perp)");
  if (std::abs(u.dot(u_perp)) > 1e-10 || std::abs(v.dot(v_perp)) > 1e-10)
    throw NotOrthogonal("g_operators: probe pairs must be orthogonal");
  const Vector wy = (e.y * v).cwiseProduct(e.y * v_perp);
  const Vector wx = (e.x * u).cwiseProduct(e.x * u_perp);
  Matrix gx = (e.x.transpose() * (wy.asDiagonal() * e.x)) / double(e.m);
  Matrix gy = (e.y.transpose() * (wx.asDiagonal() * e.y)) / double(e.m);
  return {std::move(gx), std::move(gy)};
}

/// Sample budget ceil(C · eps⁻² · (d + k²) · ln(d/delta)) for a target
/// operator deviation eps at failure probability delta.
inline std::int64_t sample_size(double eps, double delta, int d, int k,
                                double c = 1.0) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidParameter("sample_size: eps in (0,1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw InvalidParameter("sample_size: delta in (0,1)");
  if (d < 1 || k < 1) throw InvalidParameter("sample_size: need d, k >= 1");
  if (!(c > 0.0)) throw InvalidParameter("sample_size: need C > 0");
  const double value = c / (eps * eps) * (double(d) + double(k) * double(k)) *
                       std::log(double(d) / delta);
  return std::int64_t(std::ceil(value));
}

struct FourthMomentResult {
  Matrix empirical;  // Monte Carlo mean of x xᵀ x xᵀ
  double deviation;  // ‖empirical − (d+2)σ⁴·I‖ / ((d+2)σ⁴)
};

/// Monte Carlo check of E[x xᵀ x xᵀ] = (d+2)σ⁴·I for x ~ N(0, σ²I_d).
inline FourthMomentResult fourth_moment_check(int d, double sigma,
                                              std::int64_t n_samples,
                                              std::uint64_t seed) {
  if (d < 1 || n_samples < 1)
    throw InvalidParameter("fourth_moment_check: need d >= 1, n_samples >= 1");
  Rng rng = Rng::stream(seed, 0x4447ULL << 32);
  Matrix acc = Matrix::Zero(d, d);
  Vector x(d);
  for (std::int64_t s = 0; s < n_samples; ++s) {
    for (int i = 0; i < d; ++i) x(i) = sigma * rng.gaussian();
    acc.selfadjointView<Eigen::Lower>().rankUpdate(x, x.squaredNorm());
  }
  FourthMomentResult out;
  out.empirical = acc.selfadjointView<Eigen::Lower>();
  out.empirical /= double(n_samples);
  const double target = (double(d) + 2.0) * std::pow(sigma, 4);
  Matrix diff = out.empirical - target * Matrix::Identity(d, d);
  out.deviation = spectral_norm(diff) / target;
  return out;
}

struct ZNormResult {
  double max_norm;  // max_i ‖Z_i‖ in the projected rank-one form
  double bound;     // C²k²σ⁴σ₁* with σ = 1
};

/// Norms of the initialization summands Z_i = x_i x_iᵀ W y_i y_iᵀ, computed
/// through the reduced form with a_i = U*ᵀx_i, b_i = V*ᵀy_i:
/// ‖U* a_i a_iᵀ Σ* b_i b_iᵀ V*ᵀ‖ = |a_iᵀ Σ* b_i| · ‖a_i‖ · ‖b_i‖.
/// No d×d product is ever formed.
inline ZNormResult z_norm_check(const GroundTruth& g, const MeasurementEnsemble& e,
                                double c = 1.0) {
  if (g.d != e.d) throw DimensionMismatch("z_norm_check: dimension mismatch");
  const Matrix a = e.x * g.u_star;  // m×k
  const Matrix b = e.y * g.v_star;  // m×k
  double max_norm = 0.0;
  for (Index i = 0; i < e.m; ++i) {
    const double mid = a.row(i).dot(g.sigma_star.asDiagonal() * b.row(i).transpose());
    max_norm = std::max(max_norm, std::abs(mid) * a.row(i).norm() * b.row(i).norm());
  }
  return {max_norm, c * c * double(g.k) * double(g.k) * g.sigma_star(0)};
}

// ---------------------------------------------------------------------------
// Proof diagnostics: block matrices of one shrinking step
// ---------------------------------------------------------------------------

/// kd×kd block matrices assembled from one ensemble and the current left
/// factor. Blocks are indexed by column pairs (p, q) of U_t / U*:
///   B_{p,q} = Σ_i y_i y_iᵀ (x_iᵀ u_{t,p})(x_iᵀ u_{t,q})   (raw sums, no 1/m)
///   C_{p,q} = Σ_i y_i y_iᵀ (x_iᵀ u_{t,p})(x_iᵀ u_{*,q})
///   D_{p,q} = (u_{t,p}ᵀ u_{*,q}) · I_d
///   S_{p,q} = δ_{pq} σ_p* · I_d
/// and the error factor F solves vec(F) = B⁻¹(BD − C)S·vec(V*) with
/// column-stacking vectorization throughout.
struct BlockMatrices {
  Matrix b, c, d, s;  // kd×kd
  Matrix f;           // d×k
};

inline BlockMatrices build_block_matrices(const GroundTruth& g, const Matrix& u_t,
                                          const MeasurementEnsemble& e) {
  const int d = g.d;
  const int k = g.k;
  if (u_t.rows() != d || u_t.cols() != k)
    throw DimensionMismatch("build_block_matrices: U_t must be d×k");
  if (e.d != d) throw DimensionMismatch("build_block_matrices: ensemble mismatch");
  if (std::int64_t(d) * k > 4096)
    throw InvalidParameter("build_block_matrices: d·k exceeds the 4096 cap");
  const Index n = Index(d) * k;

  const Matrix pt = e.x * u_t;     // m×k, projections on current columns
  const Matrix ps = e.x * g.u_star;  // m×k, projections on target columns

  BlockMatrices bm;
  bm.b = Matrix(n, n);
  bm.c = Matrix(n, n);
  bm.d = Matrix::Zero(n, n);
  bm.s = Matrix::Zero(n, n);
  for (int p = 0; p < k; ++p) {
    for (int q = 0; q < k; ++q) {
      const Vector wb = pt.col(p).cwiseProduct(pt.col(q));
      const Vector wc = pt.col(p).cwiseProduct(ps.col(q));
      bm.b.block(p * d, q * d, d, d) = e.y.transpose() * (wb.asDiagonal() * e.y);
      bm.c.block(p * d, q * d, d, d) = e.y.transpose() * (wc.asDiagonal() * e.y);
      bm.d.block(p * d, q * d, d, d) =
          u_t.col(p).dot(g.u_star.col(q)) * Matrix::Identity(d, d);
    }
    bm.s.block(p * d, p * d, d, d) = g.sigma_star(p) * Matrix::Identity(d, d);
  }

  Eigen::SelfAdjointEigenSolver<Matrix> eig(bm.b);
  if (eig.eigenvalues()(0) < 1e-10)
    throw SingularBlockMatrix("build_block_matrices: sigma_min(B) below 1e-10");
  const Vector rhs = (bm.b * bm.d - bm.c) * (bm.s * vectorize(g.v_star));
  const Vector vec_f = eig.eigenvectors() *
                       (eig.eigenvectors().transpose() * rhs)
                           .cwiseQuotient(eig.eigenvalues());
  bm.f = unvectorize(vec_f, d, k);
  return bm;
}

/// Measured quantities of one exact alternating step against the bounds the
/// induction analysis claims for them. Norm checks against ε-style bounds are
/// reported as ratios; only σ_min(B)/m ≥ 1/2 and σ_min(R) ≥ 0.2σ_k* have
/// explicit constants and carry pass flags.
struct ShrinkingStepReport {
  double dist_u = 0.0;            // dist(U_t, U*)
  double eps = 0.0;               // caller-supplied operator accuracy
  double bd_minus_c_norm = 0.0;   // ‖BD − C‖/m (1/m-normalized, as the bound)
  double bd_minus_c_bound = 0.0;  // ε·k·dist(U_t,U*)
  double f_norm = 0.0;            // ‖F‖
  double f_bound_general = 0.0;   // 2εk^{1.5}σ₁*·dist
  double f_bound_refined = 0.0;   // 0.01σ_k*·dist, valid for small ε
  double sigma_min_b_normalized = 0.0;  // σ_min(B)/m
  bool sigma_min_b_ok = false;          // ≥ 1/2
  double sigma_min_r = 0.0;
  double sigma_min_r_threshold = 0.0;  // 0.2·σ_k*
  bool sigma_min_r_ok = false;
  bool r_check_applicable = false;  // requires dist(U_t,U*) ≤ 1/10
  double f_identity_rel_residual = 0.0;  // ‖vec(W*ᵀU_t − V̂) − vec(F)‖/‖vec(F)‖
  double rewrite_residual = 0.0;  // ‖(V*⊥)ᵀV_{t+1} + (V*⊥)ᵀF R⁻¹‖
};

inline ShrinkingStepReport shrinking_step_report(const GroundTruth& g,
                                                 const Matrix& u_t,
                                                 const MeasurementEnsemble& e,
                                                 double eps) {
  const BlockMatrices bm = build_block_matrices(g, u_t, e);
  const Matrix w_star = g.reconstruct();
  const double m = double(e.m);

  ShrinkingStepReport rep;
  rep.eps = eps;
  rep.dist_u = dist(u_t, g.u_star);

  rep.bd_minus_c_norm = spectral_norm(bm.b * bm.d - bm.c) / m;
  rep.bd_minus_c_bound = eps * double(g.k) * rep.dist_u;

  rep.f_norm = spectral_norm(bm.f);
  rep.f_bound_general =
      2.0 * eps * std::pow(double(g.k), 1.5) * g.sigma_star(0) * rep.dist_u;
  rep.f_bound_refined = 0.01 * g.sigma_star(g.k - 1) * rep.dist_u;

  Eigen::SelfAdjointEigenSolver<Matrix> eig(bm.b);
  rep.sigma_min_b_normalized = eig.eigenvalues()(0) / m;
  rep.sigma_min_b_ok = rep.sigma_min_b_normalized >= 0.5;

  // One exact alternating step through a QR-based least-squares solve.
  const Vector b = evaluate(w_star, e);
  const Matrix design = build_design_matrix(u_t, e);
  const Vector v = Eigen::HouseholderQR<Matrix>(design).solve(b);
  const Matrix v_hat = unvectorize(v, g.k, g.d).transpose();

  const Matrix f_direct = w_star.transpose() * u_t - v_hat;
  const double f_scale = std::max(vectorize(bm.f).norm(), 1e-300);
  rep.f_identity_rel_residual =
      (vectorize(f_direct) - vectorize(bm.f)).norm() / f_scale;

  const ThinQr qr = thin_qr(v_hat);
  const Vector r_sv = Eigen::JacobiSVD<Matrix>(qr.r).singularValues();
  rep.sigma_min_r = r_sv(r_sv.size() - 1);
  rep.sigma_min_r_threshold = 0.2 * g.sigma_star(g.k - 1);
  rep.r_check_applicable = rep.dist_u <= 0.1 + 1e-12;
  rep.sigma_min_r_ok = rep.sigma_min_r >= rep.sigma_min_r_threshold;

  // Orthonormal basis of the complement of span(V*), from a full QR.
  Eigen::HouseholderQR<Matrix> full(g.v_star);
  const Matrix v_perp =
      (full.householderQ() * Matrix::Identity(g.d, g.d)).rightCols(g.d - g.k);
  const Matrix lhs = v_perp.transpose() * qr.q;
  const Matrix rhs = -v_perp.transpose() * bm.f *
                     qr.r.triangularView<Eigen::Upper>().solve(
                         Matrix::Identity(g.k, g.k));
  rep.rewrite_residual = spectral_norm(Matrix(lhs - rhs));
  return rep;
}

/// Orthonormal basis at principal-angle distance ≈ target_dist (never more)
/// from the given one; deterministic for a given rng state. Used to stage
/// shrinking-step experiments at a controlled distance.
inline Matrix perturb_subspace(const Matrix& basis, double target_dist, Rng& rng) {
  if (!(target_dist > 0.0 && target_dist < 1.0))
    throw InvalidParameter("perturb_subspace: target distance must be in (0,1)");
  Matrix g(basis.rows(), basis.cols());
  for (Index j = 0; j < g.cols(); ++j)
    for (Index i = 0; i < g.rows(); ++i) g(i, j) = rng.gaussian();
  double eta = target_dist / spectral_norm(g);
  Matrix candidate;
  for (int it = 0; it < 40; ++it) {
    candidate = thin_qr(Matrix(basis + eta * g)).q;
    const double achieved = dist(candidate, basis);
    if (achieved <= target_dist && achieved >= 0.5 * target_dist) return candidate;
    eta *= 0.8 * target_dist / std::max(achieved, 1e-300);
  }
  return candidate;
}

// ---------------------------------------------------------------------------
// Aggregate operator report
// ---------------------------------------------------------------------------

/// Worst-case operator deviations over a set of random probes, with per-check
/// pass flags against a single target accuracy.
struct OperatorReport {
  double epsilon_target = 0.0;
  double init_error = 0.0;  // ‖W₀ − W*‖/‖W*‖
  double b_x_error = 0.0;   // max over probes of ‖B_x − I‖
  double b_y_error = 0.0;
  double g_x_norm = 0.0;
  double g_y_norm = 0.0;
  double z_max_norm = 0.0;
  bool init_passed = false;
  bool b_x_passed = false;
  bool b_y_passed = false;
  bool g_x_passed = false;
  bool g_y_passed = false;

  bool all_passed() const {
    return init_passed && b_x_passed && b_y_passed && g_x_passed && g_y_passed;
  }
};

namespace detail {

inline Vector random_unit(int d, Rng& rng) {
  Vector v(d);
  for (int i = 0; i < d; ++i) v(i) = rng.gaussian();
  return v / v.norm();
}

inline Vector random_unit_orthogonal_to(const Vector& u, Rng& rng) {
  Vector v(u.size());
  for (Index i = 0; i < u.size(); ++i) v(i) = rng.gaussian();
  v -= u.dot(v) * u;
  return v / v.norm();
}

}  // namespace detail

inline OperatorReport check_all(const GroundTruth& g,
                                const MeasurementEnsemble& e_init,
                                const MeasurementEnsemble& e_probe, double eps,
                                int probes) {
  if (probes < 1) throw InvalidParameter("check_all: need probes >= 1");
  const Matrix w_star = g.reconstruct();
  OperatorReport rep;
  rep.epsilon_target = eps;
  rep.init_error = spectral_norm(Matrix(init_operator(e_init, evaluate(w_star, e_init)) -
                                        w_star)) /
                   spectral_norm(w_star);
  rep.z_max_norm = z_norm_check(g, e_init).max_norm;

  const Matrix identity = Matrix::Identity(g.d, g.d);
  Rng rng = Rng::stream(e_probe.seed, 0xb10bULL << 32);
  for (int p = 0; p < probes; ++p) {
    const Vector u = detail::random_unit(g.d, rng);
    const Vector u_perp = detail::random_unit_orthogonal_to(u, rng);
    const Vector v = detail::random_unit(g.d, rng);
    const Vector v_perp = detail::random_unit_orthogonal_to(v, rng);
    const auto [bx, by] = b_operators(e_probe, u, v);
    const auto [gx, gy] = g_operators(e_probe, u, u_perp, v, v_perp);
    rep.b_x_error = std::max(rep.b_x_error, spectral_norm(Matrix(bx - identity)));
    rep.b_y_error = std::max(rep.b_y_error, spectral_norm(Matrix(by - identity)));
    rep.g_x_norm = std::max(rep.g_x_norm, spectral_norm(gx));
    rep.g_y_norm = std::max(rep.g_y_norm, spectral_norm(gy));
  }
  rep.init_passed = rep.init_error <= eps;
  rep.b_x_passed = rep.b_x_error <= eps;
  rep.b_y_passed = rep.b_y_error <= eps;
  rep.g_x_passed = rep.g_x_norm <= eps;
  rep.g_y_passed = rep.g_y_norm <= eps;
  return rep;
}

inline void to_json(nlohmann::json& j, const OperatorReport& r) {
  j = nlohmann::json{{"epsilon_target", r.epsilon_target},
                     {"init_error", r.init_error},
                     {"b_x_error", r.b_x_error},
                     {"b_y_error", r.b_y_error},
                     {"g_x_norm", r.g_x_norm},
                     {"g_y_norm", r.g_y_norm},
                     {"z_max_norm", r.z_max_norm},
                     {"init_passed", r.init_passed},
                     {"b_x_passed", r.b_x_passed},
                     {"b_y_passed", r.b_y_passed},
                     {"g_x_passed", r.g_x_passed},
                     {"g_y_passed", r.g_y_passed}};
}

inline void to_json(nlohmann::json& j, const ShrinkingStepReport& r) {
  j = nlohmann::json{{"dist_u", r.dist_u},
                     {"eps", r.eps},
                     {"bd_minus_c_norm", r.bd_minus_c_norm},
                     {"bd_minus_c_bound", r.bd_minus_c_bound},
                     {"f_norm", r.f_norm},
                     {"f_bound_general", r.f_bound_general},
                     {"f_bound_refined", r.f_bound_refined},
                     {"sigma_min_b_normalized", r.sigma_min_b_normalized},
                     {"sigma_min_b_ok", r.sigma_min_b_ok},
                     {"sigma_min_r", r.sigma_min_r},
                     {"sigma_min_r_threshold", r.sigma_min_r_threshold},
                     {"sigma_min_r_ok", r.sigma_min_r_ok},
                     {"r_check_applicable", r.r_check_applicable},
                     {"f_identity_rel_residual", r.f_identity_rel_residual},
                     {"rewrite_residual", r.rewrite_residual}};
}

}  // namespace rank1sense
