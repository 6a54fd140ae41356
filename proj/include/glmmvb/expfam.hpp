#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "glmmvb/errors.hpp"
#include "glmmvb/linalg.hpp"

namespace glmmvb {

/// Natural parameters (h, P) = (Sigma^-1 mu, Sigma^-1) of a Gaussian.
struct GaussianNatural {
  Vector h;
  Matrix precision;
};

/// Multivariate normal stored in moment form; natural parameters are computed
/// on demand.
class GaussianFactor {
 public:
  static constexpr double kSymmetryTolerance = 1e-10;

  GaussianFactor(Vector mu, Matrix sigma) : mu_(std::move(mu)), sigma_(std::move(sigma)) {
    if (mu_.size() == 0 || sigma_.rows() != mu_.size() || sigma_.cols() != mu_.size()) {
      throw DimensionError("GaussianFactor: mean has length " + std::to_string(mu_.size()) +
                           " but covariance is " + std::to_string(sigma_.rows()) + "x" +
                           std::to_string(sigma_.cols()));
    }
    if (!mu_.allFinite()) {
      throw InvalidInputError("GaussianFactor: non-finite mean");
    }
    if (asymmetry(sigma_) > kSymmetryTolerance) {
      throw InvalidInputError("GaussianFactor: covariance is not symmetric");
    }
    checked_llt(sigma_, "GaussianFactor");
  }

  Index dim() const { return mu_.size(); }
  const Vector& mean() const { return mu_; }
  const Matrix& covariance() const { return sigma_; }

  GaussianNatural natural() const {
    Matrix precision = spd_inverse(sigma_, "gaussian_natural");
    Vector h = precision * mu_;
    return {std::move(h), std::move(precision)};
  }

  double log_density(const Vector& x) const {
    const auto llt = checked_llt(sigma_, "GaussianFactor::log_density");
    const Vector r = llt.matrixL().solve(x - mu_);
    return -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) + logdet(llt) +
                   r.squaredNorm());
  }

 private:
  Vector mu_;
  Matrix sigma_;
};

inline GaussianNatural gaussian_natural(const GaussianFactor& f) { return f.natural(); }

inline GaussianFactor gaussian_from_natural(const Vector& h, const Matrix& precision) {
  if (precision.rows() != h.size() || precision.cols() != h.size()) {
    throw DimensionError("gaussian_from_natural: dimension mismatch");
  }
  const auto llt = checked_llt(precision, "gaussian_from_natural");
  Matrix sigma = symmetrized(llt.solve(Matrix::Identity(h.size(), h.size())));
  Vector mu = llt.solve(h);
  return GaussianFactor(std::move(mu), std::move(sigma));
}

/// log of the multivariate gamma function Gamma_d(a).
inline double log_multivariate_gamma(double a, Index d) {
  double out = 0.25 * static_cast<double>(d * (d - 1)) * std::log(std::numbers::pi);
  for (Index j = 0; j < d; ++j) {
    out += std::lgamma(a - 0.5 * static_cast<double>(j));
  }
  return out;
}

/// Wishart W(nu, S) with density proportional to
/// |Q|^{(nu - d - 1)/2} exp(-tr(S^-1 Q)/2); mean nu S.
class WishartFactor {
 public:
  WishartFactor(double nu, Matrix scale) : nu_(nu), scale_(std::move(scale)) {
    if (scale_.rows() == 0 || scale_.rows() != scale_.cols()) {
      throw DimensionError("WishartFactor: scale matrix must be square and nonempty");
    }
    if (!(nu_ > static_cast<double>(dim()) - 1.0)) {
      throw InvalidInputError("WishartFactor: degrees of freedom " + std::to_string(nu_) +
                              " must exceed dim - 1 = " + std::to_string(dim() - 1));
    }
    if (asymmetry(scale_) > GaussianFactor::kSymmetryTolerance) {
      throw InvalidInputError("WishartFactor: scale matrix is not symmetric");
    }
    checked_llt(scale_, "WishartFactor");
  }

  Index dim() const { return scale_.rows(); }
  double nu() const { return nu_; }
  const Matrix& scale() const { return scale_; }
  Matrix mean() const { return nu_ * scale_; }

  /// E[Q^{-1}] = S^{-1} / (nu - d - 1), defined for nu > d + 1.
  Matrix mean_inverse() const {
    const double denom = nu_ - static_cast<double>(dim()) - 1.0;
    if (!(denom > 0.0)) {
      throw InvalidInputError("WishartFactor::mean_inverse: requires nu > dim + 1");
    }
    return spd_inverse(scale_, "WishartFactor::mean_inverse") / denom;
  }

  double log_density(const Matrix& q) const {
    const double d = static_cast<double>(dim());
    const auto q_llt = checked_llt(q, "WishartFactor::log_density");
    const auto s_llt = checked_llt(scale_, "WishartFactor::log_density");
    const double trace = s_llt.solve(q).trace();
    return 0.5 * (nu_ - d - 1.0) * logdet(q_llt) - 0.5 * trace - 0.5 * nu_ * d * std::log(2.0) -
           0.5 * nu_ * logdet(s_llt) - log_multivariate_gamma(0.5 * nu_, dim());
  }

 private:
  double nu_;
  Matrix scale_;
};

/// Product of piece posteriors divided by the prior raised to (M - 1):
/// precision sum_j P_j - (M-1) P_0 and linear term sum_j h_j - (M-1) h_0.
/// Pieces are summed in the order given.
inline GaussianFactor combine_gaussians(std::span<const GaussianFactor> pieces,
                                        const GaussianFactor& prior) {
  if (pieces.empty()) {
    throw DimensionError("combine_gaussians: no pieces");
  }
  const Index d = prior.dim();
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    if (pieces[j].dim() != d) {
      throw DimensionError("combine_gaussians: piece " + std::to_string(j) + " has dimension " +
                           std::to_string(pieces[j].dim()) + ", prior has " + std::to_string(d));
    }
  }
  if (pieces.size() == 1) {
    return pieces.front();
  }
  const double prior_weight = static_cast<double>(pieces.size() - 1);
  Matrix precision = Matrix::Zero(d, d);
  Vector h = Vector::Zero(d);
  for (const auto& piece : pieces) {
    const auto nat = piece.natural();
    precision += nat.precision;
    h += nat.h;
  }
  const auto prior_nat = prior.natural();
  precision -= prior_weight * prior_nat.precision;
  h -= prior_weight * prior_nat.h;
  precision = symmetrized(precision);
  try {
    return gaussian_from_natural(h, precision);
  } catch (const DecompositionError& e) {
    throw RecombinationError(
        "combine_gaussians: combined precision is not positive definite (pivot " +
        std::to_string(e.index()) + "); pieces are too small or too diffuse relative to the prior");
  }
}

/// W(sum_j nu_j - (M-1) nu_0, (sum_j S_j^-1 - (M-1) S_0^-1)^-1).
inline WishartFactor combine_wisharts(std::span<const WishartFactor> pieces,
                                      const WishartFactor& prior) {
  if (pieces.empty()) {
    throw DimensionError("combine_wisharts: no pieces");
  }
  const Index d = prior.dim();
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    if (pieces[j].dim() != d) {
      throw DimensionError("combine_wisharts: piece " + std::to_string(j) + " has dimension " +
                           std::to_string(pieces[j].dim()) + ", prior has " + std::to_string(d));
    }
  }
  if (pieces.size() == 1) {
    return pieces.front();
  }
  const double prior_weight = static_cast<double>(pieces.size() - 1);
  double nu = 0.0;
  Matrix inv_scale = Matrix::Zero(d, d);
  for (const auto& piece : pieces) {
    nu += piece.nu();
    inv_scale += spd_inverse(piece.scale(), "combine_wisharts");
  }
  nu -= prior_weight * prior.nu();
  inv_scale -= prior_weight * spd_inverse(prior.scale(), "combine_wisharts");
  if (!(nu > static_cast<double>(d) - 1.0)) {
    throw RecombinationError("combine_wisharts: combined degrees of freedom " + std::to_string(nu) +
                             " do not exceed dim - 1");
  }
  Matrix scale;
  try {
    scale = spd_inverse(symmetrized(inv_scale), "combine_wisharts");
  } catch (const DecompositionError& e) {
    throw RecombinationError("combine_wisharts: combined inverse scale is not positive definite (pivot " +
                             std::to_string(e.index()) + ")");
  }
  return WishartFactor(nu, std::move(scale));
}

}  // namespace glmmvb
