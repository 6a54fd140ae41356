#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>
#include <string_view>

#include "glmmvb/errors.hpp"

namespace glmmvb {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace detail {

// Leading index whose principal minor fails to factor. Only called after a
// factorization has already failed, so the quartic cost is irrelevant.
inline Index first_failing_pivot(const Matrix& a) {
  for (Index k = 1; k <= a.rows(); ++k) {
    Eigen::LLT<Matrix> llt(a.topLeftCorner(k, k));
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
      return k - 1;
    }
  }
  return a.rows() - 1;
}

}  // namespace detail

/// Cholesky factorization that reports the failing pivot.
inline Eigen::LLT<Matrix> checked_llt(const Matrix& a, std::string_view what) {
  Eigen::LLT<Matrix> llt(a);
  const bool finite = a.allFinite();
  if (!finite || llt.info() != Eigen::Success ||
      !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
    const Index pivot = finite ? detail::first_failing_pivot(a) : 0;
    throw DecompositionError(std::string(what) + ": matrix is not positive definite (pivot " +
                                 std::to_string(pivot) + ")",
                             pivot);
  }
  return llt;
}

inline double logdet(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

inline Matrix symmetrized(const Matrix& a) { return 0.5 * (a + a.transpose()); }

inline double asymmetry(const Matrix& a) {
  if (a.size() == 0) {
    return 0.0;
  }
  return (a - a.transpose()).cwiseAbs().maxCoeff();
}

inline Matrix spd_inverse(const Matrix& a, std::string_view what) {
  const auto llt = checked_llt(a, what);
  return symmetrized(llt.solve(Matrix::Identity(a.rows(), a.cols())));
}

/// Lower triangle stacked column by column.
inline Vector vech(const Matrix& a) {
  const Index n = a.rows();
  Vector out(n * (n + 1) / 2);
  Index k = 0;
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      out(k++) = a(i, j);
    }
  }
  return out;
}

/// Precision-matrix storage usable by the fixed-form optimizer: it must blend
/// linearly, report asymmetry, and factor into something that can solve and
/// colour standard-normal draws.
template <class P>
concept PrecisionMatrix = requires(P& a, const P& b, double w, const Vector& v) {
  { b.dim() } -> std::convertible_to<Index>;
  { b.zeros_like() } -> std::same_as<P>;
  { b.asymmetry() } -> std::convertible_to<double>;
  a.blend(w, b, w);
  { b.factorize().solve(v) } -> std::convertible_to<Vector>;
  { b.factorize().draw_offset(v) } -> std::convertible_to<Vector>;
  { b.factorize().logdet() } -> std::convertible_to<double>;
};

class DenseCholesky {
 public:
  explicit DenseCholesky(Eigen::LLT<Matrix> llt) : llt_(std::move(llt)) {}

  Vector solve(const Vector& rhs) const { return llt_.solve(rhs); }

  /// L^{-T} z: a draw from N(0, P^{-1}) when z is standard normal.
  Vector draw_offset(const Vector& z) const {
    return llt_.matrixU().solve(z);
  }

  double logdet() const { return glmmvb::logdet(llt_); }

  Matrix inverse() const {
    const Index n = llt_.matrixLLT().rows();
    return symmetrized(llt_.solve(Matrix::Identity(n, n)));
  }

 private:
  Eigen::LLT<Matrix> llt_;
};

/// Dense symmetric precision.
class DensePrecision {
 public:
  using Factor = DenseCholesky;

  DensePrecision() = default;
  explicit DensePrecision(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) {
      throw DimensionError("DensePrecision: matrix is not square");
    }
  }

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }

  DensePrecision zeros_like() const { return DensePrecision(Matrix::Zero(dim(), dim())); }

  double asymmetry() const { return glmmvb::asymmetry(m_); }

  /// this <- self_weight * this + other_weight * other
  void blend(double self_weight, const DensePrecision& other, double other_weight) {
    if (other.dim() != dim()) {
      throw DimensionError("DensePrecision::blend: dimension mismatch");
    }
    m_ = self_weight * m_ + other_weight * other.m_;
  }

  DenseCholesky factorize() const { return DenseCholesky(checked_llt(m_, "DensePrecision::factorize")); }

 private:
  Matrix m_;
};

}  // namespace glmmvb
