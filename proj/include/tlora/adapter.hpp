// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "tlora/core.hpp"

namespace tlora {

/// Which factors of the tri-matrix update receive optimizer steps.
/// B trains in every mode.
enum class TrainMode { BOnly, AB, CB, ABC };

enum class Factor { A, B, C };

/// OutputPreserving: A, C Gaussian (LeCun), B zero, so delta W starts at zero.
/// LecunAll: A, B, C Gaussian with variances 1/n, 1/r2, 1/r1.
enum class InitScheme { OutputPreserving, LecunAll };

enum class ShapeClass { Tall, Wide, Square };

constexpr std::array<Factor, 3> kFactors{Factor::A, Factor::B, Factor::C};

constexpr bool is_trainable(TrainMode mode, Factor f) noexcept {
  switch (f) {
    case Factor::B: return true;
    case Factor::A: return mode == TrainMode::AB || mode == TrainMode::ABC;
    case Factor::C: return mode == TrainMode::CB || mode == TrainMode::ABC;
  }
  return false;
}

constexpr std::string_view to_string(Factor f) noexcept {
  switch (f) {
    case Factor::A: return "A";
    case Factor::B: return "B";
    case Factor::C: return "C";
  }
  return "?";
}

constexpr std::string_view to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::BOnly: return "b_only";
    case TrainMode::AB: return "ab";
    case TrainMode::CB: return "cb";
    case TrainMode::ABC: return "abc";
  }
  return "?";
}

constexpr std::string_view to_string(InitScheme init) noexcept {
  return init == InitScheme::OutputPreserving ? "output_preserving" : "lecun_all";
}

constexpr std::string_view to_string(ShapeClass sc) noexcept {
  switch (sc) {
    case ShapeClass::Tall: return "tall";
    case ShapeClass::Wide: return "wide";
    case ShapeClass::Square: return "square";
  }
  return "?";
}

inline TrainMode parse_train_mode(std::string_view s) {
  if (s == "b_only") return TrainMode::BOnly;
  if (s == "ab") return TrainMode::AB;
  if (s == "cb") return TrainMode::CB;
  if (s == "abc") return TrainMode::ABC;
  throw std::invalid_argument("unknown train mode '" + std::string(s) + "'");
}

inline InitScheme parse_init_scheme(std::string_view s) {
  if (s == "output_preserving") return InitScheme::OutputPreserving;
  if (s == "lecun_all") return InitScheme::LecunAll;
  throw std::invalid_argument("unknown init scheme '" + std::string(s) + "'");
}

constexpr ShapeClass classify_shape(Eigen::Index m, Eigen::Index n) noexcept {
  if (m > n) return ShapeClass::Tall;
  if (m < n) return ShapeClass::Wide;
  return ShapeClass::Square;
}

/// Shapes and options of one delta W = C B A adapter on an m x n layer.
/// C is m x r1, B is r1 x r2, A is r2 x n.
struct AdapterSpec {
  Eigen::Index m = 0;
  Eigen::Index n = 0;
  Eigen::Index r1 = 0;
  Eigen::Index r2 = 0;
  TrainMode mode = TrainMode::ABC;
  InitScheme init = InitScheme::OutputPreserving;
  std::uint64_t seed = 0;
  /// Optional multiplier on C B A. 1.0 leaves delta W = C B A exactly.
  double scale = 1.0;

  void validate() const {
    if (m < 1 || n < 1) {
      throw std::invalid_argument("adapter: layer dimensions must be positive, got " +
                                  shape_str(m, n));
    }
    if (r1 < 1 || r2 < 1) {
      throw std::invalid_argument("adapter: ranks must be >= 1, got r1=" + std::to_string(r1) +
                                  " r2=" + std::to_string(r2));
    }
    if (r1 > m || r2 > n) {
      throw std::invalid_argument("adapter: rank exceeds layer dimension (r1=" +
                                  std::to_string(r1) + ", r2=" + std::to_string(r2) +
                                  ", layer " + shape_str(m, n) + ")");
    }
    if (!std::isfinite(scale)) throw std::invalid_argument("adapter: scale must be finite");
  }
};

/// Tri-matrix adapter. Factors are reachable for writing only through
/// mutable_factor(), which refuses factors the spec's mode freezes.
template <typename Scalar>
class TriAdapter {
 public:
  using MatrixType = Matrix<Scalar>;

  TriAdapter(AdapterSpec spec, MatrixType a, MatrixType b, MatrixType c)
      : spec_(spec), a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {
    spec_.validate();
    check(a_, spec_.r2, spec_.n, "A");
    check(b_, spec_.r1, spec_.r2, "B");
    check(c_, spec_.m, spec_.r1, "C");
  }

  const AdapterSpec& spec() const noexcept { return spec_; }
  TrainMode mode() const noexcept { return spec_.mode; }
  const MatrixType& a() const noexcept { return a_; }
  const MatrixType& b() const noexcept { return b_; }
  const MatrixType& c() const noexcept { return c_; }

  const MatrixType& factor(Factor f) const noexcept {
    switch (f) {
      case Factor::A: return a_;
      case Factor::B: return b_;
      case Factor::C: break;
    }
    return c_;
  }

  bool trainable(Factor f) const noexcept { return is_trainable(spec_.mode, f); }

  MatrixType& mutable_factor(Factor f) {
    if (!trainable(f)) {
      throw std::logic_error("adapter: factor " + std::string(to_string(f)) +
                             " is frozen in mode " + std::string(to_string(spec_.mode)));
    }
    switch (f) {
      case Factor::A: return a_;
      case Factor::B: return b_;
      case Factor::C: break;
    }
    return c_;
  }

  /// Calls fn(Factor, MatrixType&) for each trainable factor, in A, B, C order.
  template <typename Fn>
  void for_each_trainable(Fn&& fn) {
    for (Factor f : kFactors) {
      if (trainable(f)) fn(f, mutable_factor(f));
    }
  }

 private:
  static void check(const MatrixType& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
    if (m.rows() != rows || m.cols() != cols) {
      throw ShapeError(std::string("adapter: factor ") + name + " is " + shape_str(m) +
                       ", expected " + shape_str(rows, cols));
    }
  }

  AdapterSpec spec_;
  MatrixType a_;
  MatrixType b_;
  MatrixType c_;
};

/// Two-factor LoRA baseline, delta W = B A with A r x n and B m x r.
template <typename Scalar>
struct LoraAdapter {
  Matrix<Scalar> a;
  Matrix<Scalar> b;

  Eigen::Index rank() const noexcept { return a.rows(); }
};

/// A pretrained weight that never receives updates.
template <typename Scalar>
class FrozenLinear {
 public:
  explicit FrozenLinear(Matrix<Scalar> w0)
      : w0_(std::move(w0)), shape_class_(classify_shape(w0_.rows(), w0_.cols())) {}

  const Matrix<Scalar>& weight() const noexcept { return w0_; }
  ShapeClass shape_class() const noexcept { return shape_class_; }
  Eigen::Index m() const noexcept { return w0_.rows(); }
  Eigen::Index n() const noexcept { return w0_.cols(); }

 private:
  Matrix<Scalar> w0_;
  ShapeClass shape_class_;
};

/// Samples A (variance 1/n), then C (variance 1/r1), then B (zero, or
/// variance 1/r2 under LecunAll) from a generator seeded with spec.seed.
template <typename Scalar = double>
TriAdapter<Scalar> init_adapter(const AdapterSpec& spec) {
  spec.validate();
  SeededRng rng(spec.seed);
  auto a = gaussian_matrix<Scalar>(spec.r2, spec.n, 1.0 / static_cast<double>(spec.n), rng);
  auto c = gaussian_matrix<Scalar>(spec.m, spec.r1, 1.0 / static_cast<double>(spec.r1), rng);
  Matrix<Scalar> b = spec.init == InitScheme::LecunAll
                         ? gaussian_matrix<Scalar>(spec.r1, spec.r2,
                                                   1.0 / static_cast<double>(spec.r2), rng)
                         : Matrix<Scalar>::Zero(spec.r1, spec.r2);
  return TriAdapter<Scalar>(spec, std::move(a), std::move(b), std::move(c));
}

/// LoRA init: A Gaussian with variance 1/n, B zero.
template <typename Scalar = double>
LoraAdapter<Scalar> init_lora(Eigen::Index m, Eigen::Index n, Eigen::Index r, std::uint64_t seed) {
  if (r < 1 || r > m || r > n) {
    throw std::invalid_argument("lora: rank " + std::to_string(r) + " invalid for layer " +
                                shape_str(m, n));
  }
  SeededRng rng(seed);
  LoraAdapter<Scalar> out;
  out.a = gaussian_matrix<Scalar>(r, n, 1.0 / static_cast<double>(n), rng);
  out.b = Matrix<Scalar>::Zero(m, r);
  return out;
}

template <typename Scalar>
Matrix<Scalar> delta_weight(const TriAdapter<Scalar>& ad) {
  Matrix<Scalar> dw = ad.c() * (ad.b() * ad.a());
  if (ad.spec().scale != 1.0) dw *= static_cast<Scalar>(ad.spec().scale);
  return dw;
}

template <typename Scalar>
Matrix<Scalar> delta_weight(const LoraAdapter<Scalar>& ad) {
  return ad.b * ad.a;
}

namespace detail {
template <typename Scalar>
void check_layer(const FrozenLinear<Scalar>& layer, Eigen::Index m, Eigen::Index n,
                 const char* what) {
  if (layer.m() != m || layer.n() != n) {
    throw ShapeError(std::string(what) + ": layer is " + shape_str(layer.m(), layer.n()) +
                     ", adapter expects " + shape_str(m, n));
  }
}

template <typename Derived>
void check_input(const Eigen::MatrixBase<Derived>& x, Eigen::Index n, const char* what) {
  if (x.rows() != n) {
    throw ShapeError(std::string(what) + ": input is " + shape_str(x) + ", expected " +
                     std::to_string(n) + " rows");
  }
}
}  // namespace detail

/// Adapter contribution C (B (A X)) without forming C B A.
template <typename Scalar, typename Derived>
Matrix<Scalar> adapter_output(const TriAdapter<Scalar>& ad, const Eigen::MatrixBase<Derived>& x) {
  detail::check_input(x, ad.spec().n, "adapter_output");
  Matrix<Scalar> ax = ad.a() * x;
  Matrix<Scalar> bax = ad.b() * ax;
  Matrix<Scalar> out = ad.c() * bax;
  if (ad.spec().scale != 1.0) out *= static_cast<Scalar>(ad.spec().scale);
  return out;
}

template <typename Scalar, typename Derived>
Matrix<Scalar> adapter_output(const LoraAdapter<Scalar>& ad, const Eigen::MatrixBase<Derived>& x) {
  detail::check_input(x, ad.a.cols(), "adapter_output");
  Matrix<Scalar> ax = ad.a * x;
  return ad.b * ax;
}

/// W0 X + C (B (A X)).
template <typename Scalar, typename Derived>
Matrix<Scalar> forward_tri(const TriAdapter<Scalar>& ad, const FrozenLinear<Scalar>& layer,
                           const Eigen::MatrixBase<Derived>& x) {
  detail::check_layer(layer, ad.spec().m, ad.spec().n, "forward_tri");
  detail::check_input(x, layer.n(), "forward_tri");
  Matrix<Scalar> y = layer.weight() * x;
  y += adapter_output(ad, x);
  return y;
}

/// W0 X + B (A X).
template <typename Scalar, typename Derived>
Matrix<Scalar> forward_lora(const LoraAdapter<Scalar>& ad, const FrozenLinear<Scalar>& layer,
                            const Eigen::MatrixBase<Derived>& x) {
  detail::check_layer(layer, ad.b.rows(), ad.a.cols(), "forward_lora");
  detail::check_input(x, layer.n(), "forward_lora");
  Matrix<Scalar> y = layer.weight() * x;
  y += adapter_output(ad, x);
  return y;
}

/// Folds the adapter into the base weight: W0 + C B A.
template <typename Scalar>
FrozenLinear<Scalar> merge(const TriAdapter<Scalar>& ad, const FrozenLinear<Scalar>& layer) {
  detail::check_layer(layer, ad.spec().m, ad.spec().n, "merge");
  Matrix<Scalar> w = layer.weight() + delta_weight(ad);
  return FrozenLinear<Scalar>(std::move(w));
}

/// Closed-form trainable entry count for a tri-matrix adapter.
inline std::int64_t trainable_param_count(const AdapterSpec& spec) {
  spec.validate();
  const std::int64_t a = spec.r2 * spec.n;
  const std::int64_t b = spec.r1 * spec.r2;
  const std::int64_t c = spec.m * spec.r1;
  switch (spec.mode) {
    case TrainMode::BOnly: return b;
    case TrainMode::AB: return b + a;
    case TrainMode::CB: return b + c;
    case TrainMode::ABC: return a + b + c;
  }
  return 0;
}

inline std::int64_t lora_param_count(std::int64_t m, std::int64_t n, std::int64_t r) {
  if (m < 1 || n < 1 || r < 1) throw std::invalid_argument("lora_param_count: sizes must be >= 1");
  return r * (m + n);
}

/// Counts trainable entries by walking the constructed adapter's factors.
template <typename Scalar>
std::int64_t count_trainable_entries(const TriAdapter<Scalar>& ad) {
  std::int64_t total = 0;
  for (Factor f : kFactors) {
    if (ad.trainable(f)) total += ad.factor(f).size();
  }
  return total;
}

template <typename Scalar>
std::int64_t count_trainable_entries(const LoraAdapter<Scalar>& ad) {
  return ad.a.size() + ad.b.size();
}

}  // namespace tlora
