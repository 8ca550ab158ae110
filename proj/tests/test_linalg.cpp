#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <random>
#include <vector>

#include "ncs/linalg.hpp"

using namespace ncs;

namespace {

MatrixXd random_matrix(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> N;
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = N(rng);
  }
  return m;
}

SymMatrix random_sym(std::mt19937_64& rng, int n) { return SymMatrix::symmetrized(random_matrix(rng, n, n)); }

// Characteristic polynomial by Faddeev-LeVerrier in extended precision, then
// roots from the eigenvalues of its companion matrix (general solver).
std::vector<double> companion_roots(const SymMatrix& s) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const int n = s.order();
  const MatL A = s.matrix().cast<long double>();
  std::vector<long double> c(n + 1);
  c[n] = 1.0L;
  MatL M = MatL::Zero(n, n);
  for (int k = 1; k <= n; ++k) {
    M = A * M + c[n - k + 1] * MatL::Identity(n, n);
    c[n - k] = -(A * M).trace() / k;
  }
  MatrixXd comp = MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
  for (int i = 0; i < n; ++i) comp(i, n - 1) = -static_cast<double>(c[i]);
  Eigen::EigenSolver<MatrixXd> es(comp);
  std::vector<double> roots;
  for (int i = 0; i < n; ++i) {
    // Newton polish on the extended-precision polynomial.
    long double x = es.eigenvalues()(i).real();
    for (int it = 0; it < 50; ++it) {
      long double p = 1.0L, dp = 0.0L;
      for (int k = n - 1; k >= 0; --k) {
        dp = dp * x + p;
        p = p * x + c[k];
      }
      if (dp == 0.0L) break;
      x -= p / dp;
    }
    roots.push_back(static_cast<double>(x));
  }
  std::sort(roots.begin(), roots.end());
  return roots;
}

double power_iteration_sigma(const MatrixXd& m) {
  const MatrixXd g = m.transpose() * m;
  VectorXd v = VectorXd::Ones(g.rows()).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 20000; ++it) {
    VectorXd w = g * v;
    const double next = v.dot(w);
    v = w.normalized();
    if (it > 100 && std::abs(next - lambda) <= 1e-15 * next) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return std::sqrt(lambda);
}

}  // namespace

TEST_SUITE("linalg") {
  TEST_CASE("symmetric storage is exact") {
    std::mt19937_64 rng(1);
    const MatrixXd m = random_matrix(rng, 5, 5);
    const SymMatrix s = SymMatrix::symmetrized(m);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) CHECK(s(i, j) == s(j, i));
    }
    CHECK_THROWS_AS(SymMatrix::from_symmetric(m), InvalidInputError);
    CHECK_THROWS_AS(SymMatrix::symmetrized(MatrixXd::Zero(2, 3)), InvalidInputError);
  }

  TEST_CASE("eigenvalues of simple matrices") {
    const VectorXd id = symmetric_eigenvalues(SymMatrix::identity(3));
    CHECK(id.isApprox(VectorXd::Ones(3)));
    VectorXd d(2);
    d << 2.0, -1.0;
    const VectorXd ev = symmetric_eigenvalues(SymMatrix::diagonal(d));
    CHECK(ev(0) == doctest::Approx(-1.0));
    CHECK(ev(1) == doctest::Approx(2.0));
    VectorXd d35(2);
    d35 << 3.0, 5.0;
    CHECK(min_eig(SymMatrix::diagonal(d35)) == doctest::Approx(3.0));
    CHECK(max_eig(SymMatrix::diagonal(d35)) == doctest::Approx(5.0));
    CHECK(min_eig(SymMatrix::identity(4) * -1.0) == doctest::Approx(-1.0));
    CHECK(max_eig(SymMatrix::identity(4) * -1.0) == doctest::Approx(-1.0));
  }

  TEST_CASE("eigen-decomposition reconstructs and is orthonormal") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 1 + trial % 12;
      const SymMatrix s = random_sym(rng, n);
      const auto e = symmetric_eigen(s);
      for (int i = 1; i < n; ++i) CHECK(e.values(i - 1) <= e.values(i));
      const MatrixXd rec = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
      CHECK((rec - s.matrix()).norm() <= 1e-10 * std::max(1.0, s.matrix().norm()));
      CHECK((e.vectors.transpose() * e.vectors - MatrixXd::Identity(n, n)).norm() <= 1e-10);
    }
  }

  TEST_CASE("eigenvalues match companion-matrix roots of the characteristic polynomial") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const SymMatrix s = random_sym(rng, 8);
      const VectorXd ev = symmetric_eigenvalues(s);
      const auto roots = companion_roots(s);
      for (int i = 0; i < 8; ++i) CHECK(std::abs(ev(i) - roots[i]) <= 1e-8);
    }
  }

  TEST_CASE("extreme eigenvalues agree with the full spectrum") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      const SymMatrix s = random_sym(rng, 7);
      const VectorXd ev = symmetric_eigen(s).values;
      CHECK(min_eig(s) == ev(0));
      CHECK(max_eig(s) == ev(6));
    }
  }

  TEST_CASE("Rayleigh quotients lie between the extreme eigenvalues") {
    std::mt19937_64 rng(5);
    const SymMatrix s = random_sym(rng, 9);
    const double lo = min_eig(s), hi = max_eig(s);
    for (int k = 0; k < 100; ++k) {
      const VectorXd x = random_matrix(rng, 9, 1);
      const double q = x.dot(s.matrix() * x) / x.squaredNorm();
      CHECK(q >= lo - 1e-12);
      CHECK(q <= hi + 1e-12);
    }
  }

  TEST_CASE("non-finite input is rejected") {
    MatrixXd m = MatrixXd::Identity(3, 3);
    m(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(symmetric_eigen(SymMatrix::symmetrized(m)), InvalidInputError);
    CHECK_THROWS_AS(max_singular_value(m), InvalidInputError);
  }

  TEST_CASE("largest singular value") {
    MatrixXd shift(2, 2);
    shift << 0, 1, 0, 0;
    CHECK(max_singular_value(shift) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(max_singular_value(MatrixXd::Zero(3, 4)) == 0.0);
    CHECK(max_singular_value(MatrixXd(0, 0)) == 0.0);

    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 10; ++trial) {
      const MatrixXd m = random_matrix(rng, 4, 6);
      const double s = max_singular_value(m);
      CHECK(std::abs(s - power_iteration_sigma(m)) <= 1e-8 * std::max(1.0, s));
      const double gram = std::sqrt(max_eig(SymMatrix::symmetrized(m.transpose() * m)));
      CHECK(std::abs(s - gram) <= 1e-10 * s);
      for (int k = 0; k < 100; ++k) {
        const VectorXd u = random_matrix(rng, 6, 1).normalized();
        CHECK((m * u).norm() <= s + 1e-8);
      }
    }
  }

  TEST_CASE("PSD projection") {
    VectorXd d(2);
    d << 1.0, -1.0;
    const SymMatrix p = psd_project(SymMatrix::diagonal(d));
    CHECK(p(0, 0) == doctest::Approx(1.0));
    CHECK(std::abs(p(1, 1)) <= 1e-15);

    std::mt19937_64 rng(7);
    const MatrixXd g = random_matrix(rng, 5, 5);
    const SymMatrix psd = SymMatrix::symmetrized(g * g.transpose());
    CHECK((psd_project(psd).matrix() - psd.matrix()).norm() <= 1e-10 * psd.matrix().norm());

    const SymMatrix m = random_sym(rng, 5);
    const SymMatrix r = psd_project(m);
    CHECK(min_eig(r) >= -1e-12);
    CHECK((psd_project(r).matrix() - r.matrix()).norm() <= 1e-10);
    const double best = (r.matrix() - m.matrix()).norm();
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(r.matrix());
    const MatrixXd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                          es.eigenvectors().transpose();
    std::normal_distribution<double> N;
    for (int k = 0; k < 1000; ++k) {
      const double scale = 0.5 * std::pow(10.0, -3.0 * (k % 4) / 3.0);
      MatrixXd x = root;
      for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) x(i, j) += scale * N(rng);
      }
      const MatrixXd candidate = x * x.transpose();
      CHECK((candidate - m.matrix()).norm() >= best - 1e-12);
    }
  }

  TEST_CASE("block matrix round trip") {
    std::mt19937_64 rng(8);
    const std::vector<int> rows{2, 3, 1}, cols{4, 1, 2};
    BlockMatrix b(rows, cols);
    b.set_block(0, 1, random_matrix(rng, 2, 1));
    b.set_block(2, 0, random_matrix(rng, 1, 4));
    b.set_block(1, 2, random_matrix(rng, 3, 2));
    const MatrixXd dense = b.to_dense();
    CHECK(dense.rows() == 6);
    CHECK(dense.cols() == 7);
    const BlockMatrix back = BlockMatrix::from_dense(dense, rows, cols);
    CHECK(back == b);
    CHECK(back.blocks().size() == 3);
    CHECK_FALSE(back.has_block(0, 0));
    CHECK(back.block(0, 0).isZero());
    CHECK_THROWS_AS(b.set_block(0, 0, MatrixXd::Zero(3, 3)), InvalidInputError);
    b.erase_block(0, 1);
    CHECK_FALSE(b.has_block(0, 1));
  }

  TEST_CASE("block diagonal helpers") {
    const SymMatrix bd = SymMatrix::block_diagonal({SymMatrix::identity(2), SymMatrix::identity(1) * 3.0});
    CHECK(bd.order() == 3);
    CHECK(bd(2, 2) == 3.0);
    CHECK(bd(0, 2) == 0.0);
    CHECK(bd.block(2, 1)(0, 0) == 3.0);
    const BlockMatrix b = BlockMatrix::block_diagonal({MatrixXd::Ones(1, 2), MatrixXd::Ones(2, 1)});
    CHECK(b.rows() == 3);
    CHECK(b.cols() == 3);
    CHECK(b.has_block(1, 1));
    CHECK_FALSE(b.has_block(0, 1));
  }
}
