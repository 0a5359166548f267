#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rank1sense/numerics.hpp"
#include "rank1sense/rng.hpp"

namespace rank1sense {

enum class SpectrumShape { geometric, linear };

/// Planted rank-k target: W = U · diag(sigma) · Vᵀ with known spectrum.
struct GroundTruth {
  int d = 0;
  int k = 0;
  Matrix u_star;       // d×k, orthonormal columns
  Vector sigma_star;   // k, sorted descending, sigma_star(k-1) = 1
  Matrix v_star;       // d×k, orthonormal columns
  double kappa = 1.0;  // sigma_star(0) / sigma_star(k-1)
  std::uint64_t seed = 0;

  Matrix reconstruct() const {
    return u_star * sigma_star.asDiagonal() * v_star.transpose();
  }
};

/// m rank-one sensing pairs (x_i, y_i), rows of X and Y, all i.i.d. N(0, I_d).
///
/// Each row is generated from its own (seed, row) stream, so regenerating any
/// sub-range with the same seed reproduces identical bits and contiguous
/// blocks are independent of how the work is scheduled.
struct MeasurementEnsemble {
  int d = 0;
  int m = 0;
  Matrix x;  // m×d, row i is x_iᵀ
  Matrix y;  // m×d, row i is y_iᵀ
  std::uint64_t seed = 0;

  /// Same measurements with the roles of x and y exchanged.
  MeasurementEnsemble swapped() const { return {d, m, y, x, seed}; }
};

inline GroundTruth make_ground_truth(int d, int k, double kappa,
                                     SpectrumShape shape, std::uint64_t seed) {
  if (k < 1 || k > d) throw InvalidParameter("make_ground_truth: need 1 <= k <= d");
  if (kappa < 1.0) throw InvalidParameter("make_ground_truth: need kappa >= 1");
  if (k == 1 && kappa != 1.0)
    throw InvalidParameter("make_ground_truth: rank-1 forces kappa == 1");

  auto random_basis = [&](std::uint64_t stream) {
    Rng rng = Rng::stream(seed, stream);
    Matrix g(d, k);
    for (Index j = 0; j < k; ++j)
      for (Index i = 0; i < d; ++i) g(i, j) = rng.gaussian();
    return thin_qr(g).q;
  };

  GroundTruth gt;
  gt.d = d;
  gt.k = k;
  gt.seed = seed;
  gt.u_star = random_basis((0x47ULL << 32) + 1);
  gt.v_star = random_basis((0x47ULL << 32) + 2);
  gt.sigma_star = Vector(k);
  for (int i = 0; i < k; ++i) {
    if (k == 1) {
      gt.sigma_star(i) = 1.0;
    } else if (shape == SpectrumShape::geometric) {
      gt.sigma_star(i) = std::pow(kappa, 1.0 - double(i) / double(k - 1));
    } else {
      gt.sigma_star(i) = kappa + (1.0 - kappa) * double(i) / double(k - 1);
    }
  }
  gt.kappa = gt.sigma_star(0) / gt.sigma_star(k - 1);
  return gt;
}

inline MeasurementEnsemble sample_ensemble(int d, int m, std::uint64_t seed) {
  if (d < 1 || m < 1) throw InvalidParameter("sample_ensemble: need d >= 1, m >= 1");
  MeasurementEnsemble e;
  e.d = d;
  e.m = m;
  e.seed = seed;
  e.x = Matrix(m, d);
  e.y = Matrix(m, d);
  for (int i = 0; i < m; ++i) {
    Rng rx = Rng::stream(seed, 2 * std::uint64_t(i));
    Rng ry = Rng::stream(seed, 2 * std::uint64_t(i) + 1);
    for (int j = 0; j < d; ++j) e.x(i, j) = rx.gaussian();
    for (int j = 0; j < d; ++j) e.y(i, j) = ry.gaussian();
  }
  return e;
}

/// Linear measurements b_i = x_iᵀ W y_i = tr[(x_i y_iᵀ)ᵀ W].
inline Vector evaluate(const Matrix& w, const MeasurementEnsemble& e) {
  if (w.rows() != e.d || w.cols() != e.d)
    throw DimensionMismatch("evaluate: W must be d×d for the ensemble");
  return ((e.x * w).cwiseProduct(e.y)).rowwise().sum();
}

/// Order-preserving partition into equally sized blocks.
inline std::vector<std::pair<MeasurementEnsemble, Vector>> split_ensemble(
    const MeasurementEnsemble& e, const Vector& b, int num_blocks) {
  if (num_blocks < 1) throw InvalidParameter("split_ensemble: need num_blocks >= 1");
  if (b.size() != e.m) throw DimensionMismatch("split_ensemble: |b| != m");
  if (e.m % num_blocks != 0)
    throw InvalidParameter("split_ensemble: m not divisible by num_blocks");
  const int block = e.m / num_blocks;
  std::vector<std::pair<MeasurementEnsemble, Vector>> out;
  out.reserve(num_blocks);
  for (int t = 0; t < num_blocks; ++t) {
    MeasurementEnsemble sub;
    sub.d = e.d;
    sub.m = block;
    sub.seed = e.seed;
    sub.x = e.x.middleRows(t * block, block);
    sub.y = e.y.middleRows(t * block, block);
    out.emplace_back(std::move(sub), b.segment(t * block, block));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON containers for experiment replay
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& a) {
  return nlohmann::json{{"rows", a.rows()},
                        {"cols", a.cols()},
                        {"data", std::vector<double>(a.data(), a.data() + a.size())}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (Index(data.size()) != rows * cols)
    throw InvalidParameter("matrix_from_json: data length mismatch");
  Matrix a(rows, cols);
  std::copy(data.begin(), data.end(), a.data());
  require_finite(a, "matrix_from_json");
  return a;
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const GroundTruth& g) {
  j = nlohmann::json{{"d", g.d},
                     {"k", g.k},
                     {"kappa", g.kappa},
                     {"seed", g.seed},
                     {"u_star", detail::matrix_to_json(g.u_star)},
                     {"sigma_star", std::vector<double>(
                                        g.sigma_star.data(),
                                        g.sigma_star.data() + g.sigma_star.size())},
                     {"v_star", detail::matrix_to_json(g.v_star)}};
}

inline void from_json(const nlohmann::json& j, GroundTruth& g) {
  g.d = j.at("d").get<int>();
  g.k = j.at("k").get<int>();
  g.kappa = j.at("kappa").get<double>();
  g.seed = j.at("seed").get<std::uint64_t>();
  g.u_star = detail::matrix_from_json(j.at("u_star"));
  const auto sig = j.at("sigma_star").get<std::vector<double>>();
  g.sigma_star = Eigen::Map<const Vector>(sig.data(), Index(sig.size()));
  g.v_star = detail::matrix_from_json(j.at("v_star"));
}

inline void to_json(nlohmann::json& j, const MeasurementEnsemble& e) {
  j = nlohmann::json{{"d", e.d},
                     {"m", e.m},
                     {"seed", e.seed},
                     {"x", detail::matrix_to_json(e.x)},
                     {"y", detail::matrix_to_json(e.y)}};
}

inline void from_json(const nlohmann::json& j, MeasurementEnsemble& e) {
  e.d = j.at("d").get<int>();
  e.m = j.at("m").get<int>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.x = detail::matrix_from_json(j.at("x"));
  e.y = detail::matrix_from_json(j.at("y"));
}

}  // namespace rank1sense
