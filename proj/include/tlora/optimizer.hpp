// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tlora/grad.hpp"

namespace tlora {

/// How eta_A : eta_B : eta_C is derived from the base rate.
///  Uniform   1 : 1 : 1
///  PerLayer  1 : n^{3/2} : n^{3/2} / m, using each layer's own m, n
///  RatioBase 1 : lambda^{3/2} : lambda^{1/2}, one global lambda
enum class RatioMode { Uniform, PerLayer, RatioBase };

constexpr std::string_view to_string(RatioMode mode) noexcept {
  switch (mode) {
    case RatioMode::Uniform: return "uniform";
    case RatioMode::PerLayer: return "eq7";
    case RatioMode::RatioBase: return "eq8";
  }
  return "?";
}

inline RatioMode parse_ratio_mode(std::string_view s) {
  if (s == "uniform") return RatioMode::Uniform;
  if (s == "eq7") return RatioMode::PerLayer;
  if (s == "eq8") return RatioMode::RatioBase;
  throw std::invalid_argument("unknown ratio mode '" + std::string(s) +
                              "' (expected uniform, eq7 or eq8)");
}

struct OptimizerConfig {
  double base_lr = 1e-3;
  RatioMode ratio_mode = RatioMode::Uniform;
  double ratio_base = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double warmup_ratio = 0.0;
  std::int64_t total_steps = 1;

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("optimizer: " + msg); };
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) fail("base_lr must be finite and >= 0");
    if (!(ratio_base > 0.0) || !std::isfinite(ratio_base)) fail("ratio_base must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) fail("warmup_ratio must lie in [0, 1)");
    if (total_steps < 1) fail("total_steps must be >= 1");
  }
};

/// Per-matrix learning rates for an m x n layer.
inline LrTriple lr_ratios(const OptimizerConfig& cfg, std::int64_t m, std::int64_t n) {
  if (m < 1 || n < 1) throw std::invalid_argument("lr_ratios: m and n must be >= 1");
  const double eta = cfg.base_lr;
  switch (cfg.ratio_mode) {
    case RatioMode::Uniform: return {eta, eta, eta};
    case RatioMode::PerLayer: {
      const double nd = static_cast<double>(n);
      const double n32 = nd * std::sqrt(nd);
      return {eta, eta * n32, eta * n32 / static_cast<double>(m)};
    }
    case RatioMode::RatioBase: {
      const double lambda = cfg.ratio_base;
      const double root = std::sqrt(lambda);
      return {eta, eta * (lambda * root), eta * root};
    }
  }
  return {eta, eta, eta};
}

/// Learning rates that make the three sign-update loss components equal:
/// eta_X = eta_A * ||G_A||_1 / ||G_X||_1.
template <typename Scalar>
LrTriple equal_contribution_lrs(const GradTriple<Scalar>& grads, double eta_a) {
  const double na = static_cast<double>(l1_norm(grads.a));
  const double nb = static_cast<double>(l1_norm(grads.b));
  const double nc = static_cast<double>(l1_norm(grads.c));
  if (!(na > 0.0 && nb > 0.0 && nc > 0.0)) {
    throw std::invalid_argument("equal_contribution_lrs: gradient norms must be nonzero");
  }
  return {eta_a, eta_a * na / nb, eta_a * na / nc};
}

/// Multiplier in [0, 1]: linear ramp 0 -> 1 over warmup_ratio * total_steps,
/// then linear decay to 0 at total_steps.
inline double lr_schedule(const OptimizerConfig& cfg, std::int64_t step) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::out_of_range("lr_schedule: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(cfg.total_steps) + "]");
  }
  const double total = static_cast<double>(cfg.total_steps);
  const double warmup = cfg.warmup_ratio * total;
  const double s = static_cast<double>(step);
  if (s < warmup) return s / warmup;
  if (total <= warmup) return 0.0;
  return (total - s) / (total - warmup);
}

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
struct Moments {
  Matrix<Scalar> first;
  Matrix<Scalar> second;

  static Moments zeros_like(const Matrix<Scalar>& p) {
    return {Matrix<Scalar>::Zero(p.rows(), p.cols()), Matrix<Scalar>::Zero(p.rows(), p.cols())};
  }
};

/// theta <- theta - lr * sign(g).
template <typename Scalar>
void signsgd_update(Matrix<Scalar>& param, const Matrix<Scalar>& grad, double lr) {
  require_same_shape(param, grad, "signsgd_update");
  param -= static_cast<Scalar>(lr) * sign_map(grad);
}

/// One bias-corrected AdamW update on a single matrix. `step` is the
/// 1-based update index used for bias correction. Weight decay shrinks the
/// parameter by lr * weight_decay before the adaptive step.
template <typename Scalar>
void adamw_update(Matrix<Scalar>& param, const Matrix<Scalar>& grad, Moments<Scalar>& moments,
                  const OptimizerConfig& cfg, double lr, std::int64_t step,
                  std::string_view name) {
  require_same_shape(param, grad, "adamw_update");
  require_same_shape(param, moments.first, "adamw_update");
  if (!grad.allFinite()) {
    throw NonFiniteGradient("adamw: non-finite gradient entries in matrix " + std::string(name));
  }
  const auto b1 = static_cast<Scalar>(cfg.beta1);
  const auto b2 = static_cast<Scalar>(cfg.beta2);
  moments.first = b1 * moments.first + (Scalar(1) - b1) * grad;
  moments.second = b2 * moments.second + (Scalar(1) - b2) * grad.cwiseAbs2();
  const auto t = static_cast<double>(step);
  const auto bc1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, t));
  const auto bc2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, t));
  const auto eta = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(cfg.eps);
  if (cfg.weight_decay != 0.0) {
    param *= Scalar(1) - eta * static_cast<Scalar>(cfg.weight_decay);
  }
  param.array() -= eta * (moments.first.array() / bc1) /
                   ((moments.second.array() / bc2).sqrt() + eps);
}

/// Adam moments for the trainable factors of one adapter.
template <typename Scalar>
struct AdamState {
  std::array<std::optional<Moments<Scalar>>, 3> moments;
  std::int64_t step = 0;

  static AdamState for_adapter(const TriAdapter<Scalar>& ad) {
    AdamState s;
    for (Factor f : kFactors) {
      if (ad.trainable(f)) s.moments[static_cast<int>(f)] = Moments<Scalar>::zeros_like(ad.factor(f));
    }
    return s;
  }
};

/// Sign step on the trainable factors; frozen factors are not touched.
template <typename Scalar>
void signsgd_step(TriAdapter<Scalar>& ad, const GradTriple<Scalar>& grads, const LrTriple& lrs) {
  ad.for_each_trainable([&](Factor f, Matrix<Scalar>& p) {
    signsgd_update(p, grads.get(f), lrs.get(f));
  });
}

/// AdamW step on the trainable factors, each with its own learning rate.
template <typename Scalar>
void adamw_step(TriAdapter<Scalar>& ad, const GradTriple<Scalar>& grads, AdamState<Scalar>& state,
                const OptimizerConfig& cfg, const LrTriple& lrs) {
  for (Factor f : kFactors) {
    if (ad.trainable(f) && !grads.get(f).allFinite()) {
      throw NonFiniteGradient("adamw: non-finite gradient entries in matrix " +
                              std::string(to_string(f)));
    }
  }
  ++state.step;
  ad.for_each_trainable([&](Factor f, Matrix<Scalar>& p) {
    auto& slot = state.moments[static_cast<int>(f)];
    if (!slot) slot = Moments<Scalar>::zeros_like(p);
    adamw_update(p, grads.get(f), *slot, cfg, lrs.get(f), state.step, to_string(f));
  });
}

}  // namespace tlora
