// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "tlora/adapter.hpp"

namespace tlora {

/// Gradients of a scalar loss with respect to A, B and C.
template <typename Scalar>
struct GradTriple {
  Matrix<Scalar> a;
  Matrix<Scalar> b;
  Matrix<Scalar> c;

  const Matrix<Scalar>& get(Factor f) const noexcept {
    return f == Factor::A ? a : (f == Factor::B ? b : c);
  }
  Matrix<Scalar>& get(Factor f) noexcept { return f == Factor::A ? a : (f == Factor::B ? b : c); }
};

template <typename Scalar>
struct LoraGrads {
  Matrix<Scalar> a;
  Matrix<Scalar> b;
};

/// Per-matrix learning rates (eta_A, eta_B, eta_C).
struct LrTriple {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double get(Factor f) const noexcept { return f == Factor::A ? a : (f == Factor::B ? b : c); }
  LrTriple scaled(double k) const noexcept { return {a * k, b * k, c * k}; }
};

namespace detail {
template <typename Scalar, typename DX, typename DU>
void check_grad_inputs(Eigen::Index m, Eigen::Index n, const Eigen::MatrixBase<DX>& x,
                       const Eigen::MatrixBase<DU>& upstream, const char* what) {
  if (x.rows() != n || upstream.rows() != m || x.cols() != upstream.cols()) {
    throw ShapeError(std::string(what) + ": input " + shape_str(x) + " and upstream " +
                     shape_str(upstream) + " do not conform to a " + shape_str(m, n) + " layer");
  }
}
}  // namespace detail

/// Gradients of L with respect to A, B, C given X (n x b) and dL/dY (m x b):
///   dA = B^T C^T U X^T,  dB = C^T U X^T A^T,  dC = U X^T A^T B^T.
/// Evaluated through the shared factors C^T U and A X so no m x n product is
/// formed. Mode-agnostic: all three are returned.
template <typename Scalar, typename DX, typename DU>
GradTriple<Scalar> adapter_grads(const TriAdapter<Scalar>& ad, const Eigen::MatrixBase<DX>& x,
                                 const Eigen::MatrixBase<DU>& upstream) {
  detail::check_grad_inputs<Scalar>(ad.spec().m, ad.spec().n, x, upstream, "adapter_grads");
  const Matrix<Scalar> ctu = ad.c().transpose() * upstream;
  const Matrix<Scalar> ax = ad.a() * x;
  const Matrix<Scalar> bax = ad.b() * ax;
  GradTriple<Scalar> g;
  g.a = (ad.b().transpose() * ctu) * x.transpose();
  g.b = ctu * ax.transpose();
  g.c = upstream * bax.transpose();
  if (ad.spec().scale != 1.0) {
    const auto s = static_cast<Scalar>(ad.spec().scale);
    g.a *= s;
    g.b *= s;
    g.c *= s;
  }
  return g;
}

/// dA = B^T U X^T, dB = U X^T A^T.
template <typename Scalar, typename DX, typename DU>
LoraGrads<Scalar> lora_grads(const LoraAdapter<Scalar>& ad, const Eigen::MatrixBase<DX>& x,
                             const Eigen::MatrixBase<DU>& upstream) {
  detail::check_grad_inputs<Scalar>(ad.b.rows(), ad.a.cols(), x, upstream, "lora_grads");
  const Matrix<Scalar> ax = ad.a * x;
  LoraGrads<Scalar> g;
  g.a = (ad.b.transpose() * upstream) * x.transpose();
  g.b = upstream * ax.transpose();
  return g;
}

/// Gradient with respect to the layer input: (W0 + C B A)^T U, evaluated
/// as W0^T U + A^T (B^T (C^T U)).
template <typename Scalar, typename DU>
Matrix<Scalar> input_grad(const TriAdapter<Scalar>& ad, const FrozenLinear<Scalar>& layer,
                          const Eigen::MatrixBase<DU>& upstream) {
  Matrix<Scalar> dx = layer.weight().transpose() * upstream;
  const Matrix<Scalar> ctu = ad.c().transpose() * upstream;
  const Matrix<Scalar> btctu = ad.b().transpose() * ctu;
  if (ad.spec().scale != 1.0) {
    dx.noalias() += static_cast<Scalar>(ad.spec().scale) * (ad.a().transpose() * btctu);
  } else {
    dx.noalias() += ad.a().transpose() * btctu;
  }
  return dx;
}

template <typename Scalar, typename DU>
Matrix<Scalar> input_grad(const LoraAdapter<Scalar>& ad, const FrozenLinear<Scalar>& layer,
                          const Eigen::MatrixBase<DU>& upstream) {
  Matrix<Scalar> dx = layer.weight().transpose() * upstream;
  const Matrix<Scalar> btu = ad.b.transpose() * upstream;
  dx.noalias() += ad.a.transpose() * btu;
  return dx;
}

/// Central differences (L(theta + h e) - L(theta - h e)) / 2h over every
/// trainable entry. Frozen factors get zero matrices unless include_frozen
/// is set, in which case all three factors are probed.
template <typename Scalar, typename LossFn>
GradTriple<Scalar> finite_diff_grads(LossFn&& loss_fn, const TriAdapter<Scalar>& ad, double step,
                                     bool include_frozen = false) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grads: step must be positive");
  AdapterSpec probe_spec = ad.spec();
  if (include_frozen) probe_spec.mode = TrainMode::ABC;
  TriAdapter<Scalar> probe(probe_spec, ad.a(), ad.b(), ad.c());
  const auto h = static_cast<Scalar>(step);

  GradTriple<Scalar> g;
  for (Factor f : kFactors) {
    g.get(f) = Matrix<Scalar>::Zero(ad.factor(f).rows(), ad.factor(f).cols());
  }
  for (Factor f : kFactors) {
    if (!is_trainable(ad.spec().mode, f) && !include_frozen) continue;
    Matrix<Scalar>& param = probe.mutable_factor(f);
    Matrix<Scalar>& out = g.get(f);
    for (Eigen::Index i = 0; i < param.size(); ++i) {
      const Scalar orig = param.data()[i];
      param.data()[i] = orig + h;
      const Scalar up = loss_fn(std::as_const(probe));
      param.data()[i] = orig - h;
      const Scalar down = loss_fn(std::as_const(probe));
      param.data()[i] = orig;
      out.data()[i] = (up - down) / (Scalar(2) * h);
    }
  }
  return g;
}

/// First-order loss change <dL/dA, dA> + <dL/dB, dB> + <dL/dC, dC>.
template <typename Scalar>
Scalar first_order_delta(const GradTriple<Scalar>& grads, const Matrix<Scalar>& delta_a,
                         const Matrix<Scalar>& delta_b, const Matrix<Scalar>& delta_c) {
  return frobenius_inner(grads.a, delta_a) + frobenius_inner(grads.b, delta_b) +
         frobenius_inner(grads.c, delta_c);
}

/// Per-factor loss decrease under sign updates: -eta_X * ||dL/dX||_1.
template <typename Scalar>
std::array<Scalar, 3> loss_delta_components(const GradTriple<Scalar>& grads, const LrTriple& lrs) {
  if (lrs.a < 0.0 || lrs.b < 0.0 || lrs.c < 0.0) {
    throw std::invalid_argument("loss_delta_components: learning rates must be nonnegative");
  }
  return {static_cast<Scalar>(-lrs.a) * l1_norm(grads.a),
          static_cast<Scalar>(-lrs.b) * l1_norm(grads.b),
          static_cast<Scalar>(-lrs.c) * l1_norm(grads.c)};
}

/// Largest entrywise |x - y| / max(|x|, |y|, floor).
template <typename L, typename R>
double max_relative_error(const Eigen::MatrixBase<L>& x, const Eigen::MatrixBase<R>& y,
                          double floor) {
  require_same_shape(x, y, "max_relative_error");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double a = static_cast<double>(x(i, j));
      const double b = static_cast<double>(y(i, j));
      const double denom = std::max({std::abs(a), std::abs(b), floor});
      worst = std::max(worst, std::abs(a - b) / denom);
    }
  }
  return worst;
}

}  // namespace tlora
