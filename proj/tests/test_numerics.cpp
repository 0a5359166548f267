#include <catch2/catch_amalgamated.hpp>

#include "rank1sense/numerics.hpp"
#include "rank1sense/rng.hpp"

using namespace rank1sense;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, 7);
  Matrix a(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) a(i, j) = rng.gaussian();
  return a;
}

// Test-side largest singular value by long power iteration on AᵀA; kept
// independent of the SVD the library uses.
double power_norm_oracle(const Matrix& a, int iters = 4000) {
  Vector v = Vector::Ones(a.cols()).normalized();
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vector w = a.transpose() * (a * v);
    const double n = w.norm();
    if (n == 0.0) return 0.0;
    v = w / n;
    sigma = std::sqrt(n);
  }
  return sigma;
}

}  // namespace

TEST_CASE("thin_qr of an orthonormal matrix is the identity factorization") {
  const Matrix q0 = thin_qr(random_matrix(9, 3, 11)).q;
  const ThinQr qr = thin_qr(q0);
  CHECK((qr.q - q0).norm() < 1e-10);
  CHECK((qr.r - Matrix::Identity(3, 3)).norm() < 1e-10);
}

TEST_CASE("thin_qr of a scaled axis vector") {
  Matrix a = Matrix::Zero(3, 1);
  a(0, 0) = 2.0;
  const ThinQr qr = thin_qr(a);
  CHECK(qr.q(0, 0) == Catch::Approx(1.0));
  CHECK(qr.q(1, 0) == 0.0);
  CHECK(qr.q(2, 0) == 0.0);
  CHECK(qr.r(0, 0) == Catch::Approx(2.0));
}

TEST_CASE("thin_qr reconstructs and orthonormalizes random input") {
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    const Matrix a = random_matrix(20, 4, seed);
    const ThinQr qr = thin_qr(a);
    CHECK(orthonormality_defect(qr.q) < 1e-10);
    CHECK((qr.q * qr.r - a).norm() < 1e-10 * a.norm());
    for (Index j = 0; j < 4; ++j) {
      CHECK(qr.r(j, j) > 0.0);
      for (Index i = j + 1; i < 4; ++i) CHECK(qr.r(i, j) == 0.0);
    }
  }
}

TEST_CASE("thin_qr rejects rank-deficient input") {
  Matrix a = random_matrix(10, 3, 21);
  a.col(2) = 2.0 * a.col(0);
  CHECK_THROWS_AS(thin_qr(a), RankDeficient);
}

TEST_CASE("top-k left singular vectors of a diagonal matrix") {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << 5.0, 3.0, 1.0;
  const Matrix u = top_k_left_singular_vectors(a, 2);
  // Columns must span {e1, e2}: the projector equals diag(1, 1, 0).
  Matrix proj = u * u.transpose();
  Matrix expected = Matrix::Zero(3, 3);
  expected(0, 0) = expected(1, 1) = 1.0;
  CHECK((proj - expected).norm() < 1e-12);
}

TEST_CASE("top-1 left singular vector of a rank-one matrix") {
  Rng rng = Rng::stream(5, 7);
  Vector u(6), v(4);
  for (Index i = 0; i < 6; ++i) u(i) = rng.gaussian();
  for (Index i = 0; i < 4; ++i) v(i) = rng.gaussian();
  const Matrix a = u * v.transpose();
  const Matrix w = top_k_left_singular_vectors(a, 1);
  const Vector un = u / u.norm();
  const double align = std::abs(un.dot(w.col(0)));
  CHECK(align == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("top-k recovers a planted column space") {
  // Rank-2 matrix assembled from a known orthonormal basis; the planted
  // basis is the oracle.
  const Matrix basis = thin_qr(random_matrix(12, 2, 31)).q;
  const Matrix right = thin_qr(random_matrix(12, 2, 32)).q;
  Vector sv(2);
  sv << 4.0, 1.5;
  const Matrix a = basis * sv.asDiagonal() * right.transpose();
  const Matrix u = top_k_left_singular_vectors(a, 2);
  const Matrix residual = u - basis * (basis.transpose() * u);
  CHECK(residual.norm() < 1e-8);
}

TEST_CASE("top-k rejects k larger than the dimension") {
  CHECK_THROWS_AS(top_k_left_singular_vectors(Matrix::Identity(3, 3), 4),
                  DimensionMismatch);
}

TEST_CASE("spectral norm of simple matrices") {
  Matrix a = Matrix::Zero(3, 3);
  a.diagonal() << 3.0, 1.0, 0.0;
  CHECK(spectral_norm(a) == Catch::Approx(3.0));

  Vector u(2), v(2);
  u << 1.0, 2.0;
  v << 2.0, 0.0;
  CHECK(spectral_norm(u * v.transpose()) ==
        Catch::Approx(2.0 * std::sqrt(5.0)).epsilon(1e-12));

  CHECK(spectral_norm(Matrix::Zero(4, 2)) == 0.0);
}

TEST_CASE("spectral norm matches an independent power-iteration oracle") {
  const Matrix a = random_matrix(12, 7, 41);
  CHECK(spectral_norm(a) == Catch::Approx(power_norm_oracle(a)).epsilon(1e-9));
}

TEST_CASE("spectral norm properties") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Matrix a = random_matrix(9, 5, 50 + seed);
    const double n = spectral_norm(a);
    CHECK(spectral_norm(Matrix(a.transpose())) == Catch::Approx(n).epsilon(1e-10));
    CHECK(spectral_norm(Matrix(a * a.transpose())) ==
          Catch::Approx(n * n).epsilon(1e-8));
    CHECK(n <= a.norm() + 1e-12);
  }
}

TEST_CASE("block-diagonal spectral norm is the max block norm") {
  std::vector<Matrix> blocks;
  double expected = 0.0;
  Index total = 0;
  for (std::uint64_t seed : {61, 62, 63}) {
    blocks.push_back(random_matrix(4, 4, seed));
    expected = std::max(expected, spectral_norm(blocks.back()));
    total += 4;
  }
  Matrix s = Matrix::Zero(total, total);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    s.block(Index(i) * 4, Index(i) * 4, 4, 4) = blocks[i];
  CHECK(spectral_norm(s) == Catch::Approx(expected).epsilon(1e-10));
}

TEST_CASE("power-iteration norm agrees with the SVD path") {
  const Matrix a = random_matrix(200, 24, 71);
  CHECK(spectral_norm_power(a) == Catch::Approx(spectral_norm(a)).epsilon(1e-8));
}

TEST_CASE("vectorize stacks columns") {
  Matrix a(2, 2);
  a << 1.0, 3.0, 2.0, 4.0;
  const Vector v = vectorize(a);
  CHECK(v(0) == 1.0);
  CHECK(v(1) == 2.0);
  CHECK(v(2) == 3.0);
  CHECK(v(3) == 4.0);
}

TEST_CASE("unvectorize inverts vectorize") {
  const Matrix a = random_matrix(5, 3, 81);
  CHECK((unvectorize(vectorize(a), 5, 3) - a).norm() == 0.0);
  CHECK_THROWS_AS(unvectorize(vectorize(a), 4, 3), DimensionMismatch);
}

TEST_CASE("trace pairing equals the vectorized inner product") {
  for (std::uint64_t seed : {91, 92, 93}) {
    const Matrix x = random_matrix(5, 5, seed);
    const Matrix y = random_matrix(5, 5, seed + 100);
    double trace = 0.0;  // direct double loop, independent of vectorize
    for (Index i = 0; i < 5; ++i)
      for (Index j = 0; j < 5; ++j) trace += x(i, j) * y(i, j);
    CHECK(vectorize(x).dot(vectorize(y)) == Catch::Approx(trace).epsilon(1e-12));
  }
}

TEST_CASE("row_kron on a single row") {
  Matrix b(1, 1), y(1, 2);
  b << 2.0;
  y << 1.0, 3.0;
  const Matrix out = row_kron(b, y);
  REQUIRE(out.rows() == 1);
  REQUIRE(out.cols() == 2);
  CHECK(out(0, 0) == 2.0);
  CHECK(out(0, 1) == 6.0);
}

TEST_CASE("row_kron with an all-ones left factor repeats each right entry") {
  const Matrix y = random_matrix(4, 3, 101);
  const Matrix out = row_kron(Matrix::Ones(4, 2), y);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 3; ++j)
      for (Index p = 0; p < 2; ++p) CHECK(out(i, j * 2 + p) == y(i, j));
}

TEST_CASE("row_kron rejects mismatched row counts") {
  CHECK_THROWS_AS(row_kron(Matrix::Ones(3, 2), Matrix::Ones(4, 2)),
                  DimensionMismatch);
}
