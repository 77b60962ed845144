// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "tlora/optimizer.hpp"

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

GradTriple<double> random_grads(const TriAdapter<double>& ad, SeededRng& rng) {
  return {gaussian_matrix(ad.a().rows(), ad.a().cols(), 1.0, rng),
          gaussian_matrix(ad.b().rows(), ad.b().cols(), 1.0, rng),
          gaussian_matrix(ad.c().rows(), ad.c().cols(), 1.0, rng)};
}

}  // namespace

TEST_CASE("lr_ratios") {
  OptimizerConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.ratio_mode = RatioMode::RatioBase;
  cfg.ratio_base = 4.0;
  auto r = lr_ratios(cfg, 32, 32);
  CHECK(r.a == 1e-4);
  CHECK(std::abs(r.b - 8e-4) <= 1e-15 * 8e-4);
  CHECK(std::abs(r.c - 2e-4) <= 1e-15 * 2e-4);

  cfg.ratio_base = 1.0;
  r = lr_ratios(cfg, 7, 3);
  CHECK(r.a == cfg.base_lr);
  CHECK(r.b == cfg.base_lr);
  CHECK(r.c == cfg.base_lr);

  cfg.ratio_mode = RatioMode::PerLayer;
  cfg.base_lr = 1.0;
  r = lr_ratios(cfg, 8, 4);
  CHECK(r.a == 1.0);
  CHECK(r.b == 8.0);
  CHECK(r.c == 1.0);

  cfg.ratio_mode = RatioMode::Uniform;
  r = lr_ratios(cfg, 100, 3);
  CHECK(r.b == r.a);
  CHECK(r.c == r.a);
  CHECK_THROWS_AS(lr_ratios(cfg, 0, 3), std::invalid_argument);

  CHECK(parse_ratio_mode("eq7") == RatioMode::PerLayer);
  CHECK(parse_ratio_mode(to_string(RatioMode::RatioBase)) == RatioMode::RatioBase);
  CHECK_THROWS(parse_ratio_mode("eq9"));
}

TEST_CASE("lr_schedule") {
  OptimizerConfig cfg;
  cfg.total_steps = 100;
  cfg.warmup_ratio = 0.1;
  CHECK(lr_schedule(cfg, 0) == 0.0);
  CHECK(lr_schedule(cfg, 5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 10) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 55) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 100) == 0.0);
  CHECK_THROWS_AS(lr_schedule(cfg, -1), std::out_of_range);
  CHECK_THROWS_AS(lr_schedule(cfg, 101), std::out_of_range);
  for (std::int64_t s = 0; s <= 100; ++s) {
    const double k = lr_schedule(cfg, s);
    REQUIRE(k >= 0.0);
    REQUIRE(k <= 1.0);
  }
}

TEST_CASE("schedule multiplier preserves ratios") {
  OptimizerConfig cfg;
  cfg.base_lr = 3e-4;
  cfg.ratio_mode = RatioMode::RatioBase;
  cfg.ratio_base = 4.0;
  cfg.total_steps = 37;
  cfg.warmup_ratio = 0.2;
  const auto base = lr_ratios(cfg, 16, 16);
  for (std::int64_t s = 1; s < cfg.total_steps; ++s) {
    const auto lrs = base.scaled(lr_schedule(cfg, s));
    CHECK(lrs.b / lrs.a == doctest::Approx(8.0).epsilon(1e-14));
    CHECK(lrs.c / lrs.a == doctest::Approx(2.0).epsilon(1e-14));
  }
}

TEST_CASE("signsgd") {
  MatrixXd b = mat({{1, 1}});
  signsgd_update(b, mat({{2, -3}}), 0.1);
  CHECK(b(0, 0) == doctest::Approx(0.9));
  CHECK(b(0, 1) == doctest::Approx(1.1));

  auto ad = init_adapter(AdapterSpec{5, 4, 2, 3, TrainMode::BOnly, InitScheme::LecunAll, 1});
  const auto before = ad;
  GradTriple<double> zero{MatrixXd::Zero(3, 4), MatrixXd::Zero(2, 3), MatrixXd::Zero(5, 2)};
  signsgd_step(ad, zero, LrTriple{0.1, 0.1, 0.1});
  CHECK(ad.b() == before.b());

  SeededRng rng(3);
  for (int t = 0; t < 10; ++t) signsgd_step(ad, random_grads(ad, rng), LrTriple{0.1, 0.2, 0.3});
  CHECK(ad.a() == before.a());
  CHECK(ad.c() == before.c());
  CHECK(ad.b() != before.b());
}

TEST_CASE("adamw single-matrix arithmetic") {
  OptimizerConfig cfg;
  SUBCASE("degenerate betas give the sign step") {
    cfg.beta1 = 0.0;
    cfg.beta2 = 0.0;
    cfg.eps = 1e-12;
    MatrixXd p = MatrixXd::Zero(1, 1);
    auto mom = Moments<double>::zeros_like(p);
    adamw_update(p, MatrixXd(MatrixXd::Constant(1, 1, 2.0)), mom, cfg, 0.1, 1, "p");
    CHECK(std::abs(p(0, 0) + 0.1) <= 1e-9);
  }
  SUBCASE("first step with standard betas") {
    MatrixXd p = MatrixXd::Zero(2, 3);
    auto mom = Moments<double>::zeros_like(p);
    adamw_update(p, MatrixXd(MatrixXd::Ones(2, 3)), mom, cfg, 0.1, 1, "p");
    CHECK((p.array() + 0.1).abs().maxCoeff() <= 1e-7);
  }
  SUBCASE("zero gradient and no decay leave everything unchanged") {
    SeededRng rng(4);
    MatrixXd p = gaussian_matrix(3, 3, 1.0, rng);
    const MatrixXd p0 = p;
    auto mom = Moments<double>::zeros_like(p);
    adamw_update(p, MatrixXd(MatrixXd::Zero(3, 3)), mom, cfg, 0.1, 1, "p");
    CHECK(p == p0);
    CHECK(mom.first.isZero(0));
    CHECK(mom.second.isZero(0));
  }
  SUBCASE("decoupled weight decay") {
    cfg.weight_decay = 0.5;
    MatrixXd p = MatrixXd::Constant(1, 1, 2.0);
    auto mom = Moments<double>::zeros_like(p);
    adamw_update(p, MatrixXd(MatrixXd::Zero(1, 1)), mom, cfg, 0.1, 1, "p");
    CHECK(p(0, 0) == doctest::Approx(2.0 * (1.0 - 0.05)));
  }
  SUBCASE("non-finite gradient names the matrix") {
    MatrixXd p = MatrixXd::Zero(1, 2);
    auto mom = Moments<double>::zeros_like(p);
    MatrixXd g = MatrixXd::Zero(1, 2);
    g(0, 1) = std::numeric_limits<double>::infinity();
    try {
      adamw_update(p, g, mom, cfg, 0.1, 1, "layer3.B");
      FAIL("expected NonFiniteGradient");
    } catch (const NonFiniteGradient& e) {
      CHECK(std::string(e.what()).find("layer3.B") != std::string::npos);
    }
  }
}

TEST_CASE("adamw with zero betas matches signsgd on random inputs") {
  OptimizerConfig cfg;
  cfg.beta1 = 0.0;
  cfg.beta2 = 0.0;
  cfg.eps = 1e-12;
  SeededRng rng(5);
  for (int t = 0; t < 100; ++t) {
    auto ad = init_adapter(AdapterSpec{6, 5, 2, 3, TrainMode::ABC, InitScheme::LecunAll, rng.next_u64()});
    auto ref = ad;
    auto state = AdamState<double>::for_adapter(ad);
    const auto g = random_grads(ad, rng);
    const LrTriple lrs{rng.uniform(), rng.uniform(), rng.uniform()};
    adamw_step(ad, g, state, cfg, lrs);
    signsgd_step(ref, g, lrs);
    for (Factor f : kFactors) CHECK((ad.factor(f) - ref.factor(f)).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("frozen factors never move under adamw") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.1;
  SeededRng rng(6);
  for (auto mode : {TrainMode::BOnly, TrainMode::AB, TrainMode::CB, TrainMode::ABC}) {
    auto ad = init_adapter(AdapterSpec{7, 6, 3, 2, mode, InitScheme::LecunAll, 11});
    const auto before = ad;
    auto state = AdamState<double>::for_adapter(ad);
    for (int t = 0; t < 25; ++t) adamw_step(ad, random_grads(ad, rng), state, cfg, LrTriple{0.01, 0.02, 0.03});
    CHECK(state.step == 25);
    for (Factor f : kFactors) {
      if (is_trainable(mode, f)) {
        CHECK(ad.factor(f) != before.factor(f));
      } else {
        CHECK(ad.factor(f) == before.factor(f));
      }
    }
  }
}

TEST_CASE("equal-contribution learning rates") {
  SeededRng rng(7);
  for (int t = 0; t < 100; ++t) {
    auto ad = init_adapter(AdapterSpec{9, 8, 3, 4, TrainMode::ABC, InitScheme::LecunAll, rng.next_u64()});
    const auto g = random_grads(ad, rng);
    const auto lrs = equal_contribution_lrs(g, 1e-3);
    const auto parts = loss_delta_components(g, lrs);
    CHECK(std::abs(parts[1] - parts[0]) <= 1e-12 * std::abs(parts[0]));
    CHECK(std::abs(parts[2] - parts[0]) <= 1e-12 * std::abs(parts[0]));
  }
  GradTriple<double> zero{MatrixXd::Zero(1, 1), MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)};
  CHECK_THROWS_AS(equal_contribution_lrs(zero, 1.0), std::invalid_argument);
}

TEST_CASE("config validation") {
  OptimizerConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.beta1 = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.warmup_ratio = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.ratio_base = 0.0;
  CHECK_THROWS(cfg.validate());
}
