// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "tlora/rng.hpp"

namespace tlora {

/// Dense row-major matrix. Every weight, activation and gradient in the
/// library is one of these.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixXd = Matrix<double>;
using VectorXd = Vector<double>;

/// Thrown when operand shapes do not conform. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template <typename Derived>
std::string shape_str(const Eigen::MatrixBase<Derived>& m) {
  return shape_str(m.rows(), m.cols());
}

template <typename L, typename R>
void require_same_shape(const Eigen::MatrixBase<L>& lhs, const Eigen::MatrixBase<R>& rhs,
                        const char* what) {
  if (lhs.rows() != rhs.rows() || lhs.cols() != rhs.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(lhs) + " vs " +
                     shape_str(rhs));
  }
}

/// Checked matrix product.
template <typename L, typename R>
auto matmul(const Eigen::MatrixBase<L>& lhs, const Eigen::MatrixBase<R>& rhs) {
  using Scalar = typename L::Scalar;
  if (lhs.cols() != rhs.rows()) {
    throw ShapeError("matmul: inner dimensions differ, lhs " + shape_str(lhs) + " rhs " +
                     shape_str(rhs));
  }
  Matrix<Scalar> out = lhs * rhs;
  return out;
}

/// I.i.d. zero-mean Gaussian entries with the given variance, filled in
/// row-major order from `rng`.
template <typename Scalar = double>
Matrix<Scalar> gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double variance,
                               SeededRng& rng) {
  if (!(variance > 0.0) || !std::isfinite(variance)) {
    throw std::invalid_argument("gaussian_matrix: variance must be positive and finite, got " +
                                std::to_string(variance));
  }
  const double stddev = std::sqrt(variance);
  Matrix<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  }
  return out;
}

/// Entrywise sign with sign(0) = 0.
template <typename Derived>
auto sign_map(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = m.unaryExpr([](Scalar v) {
    return static_cast<Scalar>((Scalar(0) < v) - (v < Scalar(0)));
  });
  return out;
}

/// Sum of absolute values of all entries.
template <typename Derived>
typename Derived::Scalar l1_norm(const Eigen::MatrixBase<Derived>& m) {
  return m.cwiseAbs().sum();
}

template <typename L, typename R>
typename L::Scalar frobenius_inner(const Eigen::MatrixBase<L>& a, const Eigen::MatrixBase<R>& b) {
  require_same_shape(a, b, "frobenius_inner");
  return a.cwiseProduct(b).sum();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace tlora
