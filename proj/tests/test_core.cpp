// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "tlora/core.hpp"
#include "tlora/rng.hpp"

using namespace tlora;

namespace {

MatrixXd mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (auto r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

// Plain triple loop, kept apart from Eigen's product.
MatrixXd naive_matmul(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out = MatrixXd::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

}  // namespace

TEST_CASE("rng streams are reproducible and tag-separated") {
  SeededRng a(42), b(42), c(43);
  std::vector<std::uint64_t> xa, xb, xc;
  for (int i = 0; i < 16; ++i) {
    xa.push_back(a.next_u64());
    xb.push_back(b.next_u64());
    xc.push_back(c.next_u64());
  }
  CHECK(xa == xb);
  CHECK(xa != xc);
  CHECK(derive_seed(7, "model") == derive_seed(7, "model"));
  CHECK(derive_seed(7, "model") != derive_seed(7, "task"));
  CHECK(derive_seed(7, "model", 0) != derive_seed(7, "model", 1));
}

TEST_CASE("uniform draws stay in [0, 1) and indices in range") {
  SeededRng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(rng.uniform_index(7) < 7);
  }
  CHECK(rng.uniform_index(1) == 0);
}

TEST_CASE("shuffle is a permutation") {
  SeededRng rng(3);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span(v));
  std::set<int> seen(v.begin(), v.end());
  CHECK(seen.size() == 100);
  CHECK_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST_CASE("matmul") {
  SUBCASE("worked 2x2") {
    const MatrixXd c = matmul(mat({{1, 2}, {3, 4}}), mat({{5, 6}, {7, 8}}));
    CHECK(c == mat({{19, 22}, {43, 50}}));
  }
  SUBCASE("identity and zero") {
    SeededRng rng(5);
    const MatrixXd m = gaussian_matrix(3, 3, 1.0, rng);
    CHECK(matmul(MatrixXd::Identity(3, 3), m) == m);
    CHECK(matmul(m, MatrixXd::Zero(3, 3)) == MatrixXd::Zero(3, 3));
  }
  SUBCASE("agrees with a triple loop") {
    SeededRng rng(6);
    for (int t = 0; t < 20; ++t) {
      const auto r = 1 + static_cast<Eigen::Index>(rng.uniform_index(9));
      const auto k = 1 + static_cast<Eigen::Index>(rng.uniform_index(9));
      const auto c = 1 + static_cast<Eigen::Index>(rng.uniform_index(9));
      const MatrixXd a = gaussian_matrix(r, k, 1.0, rng);
      const MatrixXd b = gaussian_matrix(k, c, 1.0, rng);
      CHECK((matmul(a, b) - naive_matmul(a, b)).norm() <= 1e-12 * (1.0 + a.norm() * b.norm()));
    }
  }
  SUBCASE("mismatch names both shapes") {
    try {
      (void)matmul(MatrixXd::Zero(2, 3), MatrixXd::Zero(2, 3));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string what = e.what();
      CHECK(what.find("2x3") != std::string::npos);
    }
  }
}

TEST_CASE("matmul associativity and transpose contract") {
  SeededRng rng(8);
  for (int t = 0; t < 50; ++t) {
    const MatrixXd a = gaussian_matrix(8, 8, 1.0, rng);
    const MatrixXd b = gaussian_matrix(8, 8, 1.0, rng);
    const MatrixXd c = gaussian_matrix(8, 8, 1.0, rng);
    const double lhs = (matmul(matmul(a, b), c) - matmul(a, matmul(b, c))).norm();
    CHECK(lhs <= 1e-9 * a.norm() * b.norm() * c.norm());
    const MatrixXd at = a.transpose();
    CHECK(MatrixXd(at.transpose()) == a);
    const MatrixXd abt = matmul(a, b).transpose();
    const MatrixXd btat = matmul(MatrixXd(b.transpose()), MatrixXd(a.transpose()));
    CHECK((abt - btat).norm() <= 1e-12 * abt.norm());
  }
}

TEST_CASE("gaussian_matrix statistics") {
  SeededRng rng(11);
  const MatrixXd m = gaussian_matrix(1000, 1000, 1.0 / 1000.0, rng);
  const double mean = m.mean();
  const double var = (m.array() - mean).square().mean();
  CHECK(std::abs(mean) <= 1e-3);
  CHECK(std::abs(var - 1e-3) <= 0.02 * 1e-3);

  const MatrixXd tiny = gaussian_matrix(100, 100, 1e-12, rng);
  CHECK(tiny.cwiseAbs().maxCoeff() < 1e-4);

  SeededRng r1(9), r2(9);
  CHECK(gaussian_matrix(5, 7, 0.5, r1) == gaussian_matrix(5, 7, 0.5, r2));

  CHECK_THROWS_AS(gaussian_matrix(2, 2, 0.0, rng), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_matrix(2, 2, -1.0, rng), std::invalid_argument);
}

TEST_CASE("sign_map, l1_norm, frobenius_inner") {
  CHECK(MatrixXd(sign_map(mat({{2, -3}, {0, 1}}))) == mat({{1, -1}, {0, 1}}));
  CHECK(MatrixXd(sign_map(MatrixXd::Zero(3, 2))) == MatrixXd::Zero(3, 2));
  CHECK(l1_norm(mat({{1, -2}, {3, -4}})) == 10.0);
  CHECK(l1_norm(MatrixXd::Zero(4, 4)) == 0.0);
  CHECK(frobenius_inner(mat({{1, 2}, {3, 4}}), mat({{1, 0}, {0, 1}})) == 5.0);
  CHECK_THROWS_AS(frobenius_inner(MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 3)), ShapeError);
  MatrixXd bad = MatrixXd::Zero(2, 2);
  CHECK(all_finite(bad));
  bad(1, 1) = std::nan("");
  CHECK_FALSE(all_finite(bad));
}
