#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "glmmvb/block_arrow.hpp"
#include "glmmvb/errors.hpp"
#include "glmmvb/linalg.hpp"

namespace glmmvb {

/// Response family with its canonical link; the scale phi is 1 for both.
enum class Family { Bernoulli, Poisson };

inline constexpr double kFamilyScale = 1.0;

inline std::string_view to_string(Family f) {
  return f == Family::Bernoulli ? "bernoulli" : "poisson";
}

/// Accepts "bernoulli"/"binomial"/"logistic" and "poisson". A link other than
/// the canonical one ("logit", "log") is rejected.
inline Family parse_family(std::string_view name, std::string_view link = {}) {
  Family f;
  if (name == "bernoulli" || name == "binomial" || name == "logistic") {
    f = Family::Bernoulli;
  } else if (name == "poisson") {
    f = Family::Poisson;
  } else {
    throw InvalidInputError("parse_family: unknown family '" + std::string(name) + "'");
  }
  const std::string_view canonical = f == Family::Bernoulli ? "logit" : "log";
  if (!link.empty() && link != canonical) {
    throw InvalidInputError("parse_family: only the canonical link '" + std::string(canonical) +
                            "' is supported for " + std::string(to_string(f)));
  }
  return f;
}

/// b(eta), b'(eta), b''(eta) evaluated componentwise.
struct LinkValues {
  Vector b;
  Vector bdot;
  Vector bddot;
};

namespace detail {

inline double logistic(double eta) {
  if (eta >= 0.0) {
    return 1.0 / (1.0 + std::exp(-eta));
  }
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double softplus(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

}  // namespace detail

inline LinkValues family_links(Family family, const Vector& eta) {
  const Index n = eta.size();
  LinkValues out{Vector(n), Vector(n), Vector(n)};
  for (Index k = 0; k < n; ++k) {
    const double e = eta(k);
    if (std::isnan(e)) {
      throw InvalidInputError("family_links: NaN linear predictor at position " + std::to_string(k));
    }
    if (family == Family::Bernoulli) {
      const double mean = detail::logistic(e);
      out.b(k) = detail::softplus(e);
      out.bdot(k) = mean;
      // p (1 - p) written as logistic(eta) logistic(-eta) so neither factor rounds to 0.
      out.bddot(k) = mean * detail::logistic(-e);
    } else {
      const double ex = std::exp(e);
      out.b(k) = ex;
      out.bdot(k) = ex;
      out.bddot(k) = ex;
    }
  }
  return out;
}

/// c(y, phi) summed over the vector: 0 for Bernoulli, -sum log y! for Poisson.
inline double log_base_measure(Family family, const Vector& y) {
  if (family == Family::Bernoulli) {
    return 0.0;
  }
  double out = 0.0;
  for (Index k = 0; k < y.size(); ++k) {
    out -= std::lgamma(y(k) + 1.0);
  }
  return out;
}

/// One subject's observations: n_i responses, fixed design X_i (n_i x p),
/// random design Z_i (n_i x u) and additive offsets c_ij.
struct Subject {
  std::string id;
  Vector y;
  Matrix X;
  Matrix Z;
  Vector offset;

  Index n() const { return y.size(); }
};

/// Observations plus column names, as read from a CSV or produced by a
/// simulator. Family is part of the analysis, not the file.
struct Dataset {
  Family family = Family::Bernoulli;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  bool has_offset = false;
  std::vector<Subject> subjects;

  Index p() const { return static_cast<Index>(x_names.size()); }
  Index u() const { return static_cast<Index>(z_names.size()); }
};

/// beta ~ N(mu_beta, sigma_beta), Q ~ W(nu, S).
struct Prior {
  Vector mu_beta;
  Matrix sigma_beta;
  double nu = 0.0;
  Matrix S;

  static constexpr double kDefaultTau = 1000.0;

  /// mu = 0, Sigma = tau I_p, nu = u + 1, S = tau I_u.
  static Prior defaults(Index p, Index u, double tau = kDefaultTau) {
    return Prior{Vector::Zero(p), tau * Matrix::Identity(p, p), static_cast<double>(u) + 1.0,
                 tau * Matrix::Identity(u, u)};
  }
};

/// Validated GLMM: family, dimensions, subjects and prior. Immutable.
class GlmmModel {
 public:
  GlmmModel(Family family, Index p, Index u, std::vector<Subject> subjects, Prior prior)
      : family_(family), p_(p), u_(u), subjects_(std::move(subjects)), prior_(std::move(prior)) {
    validate();
    prior_sigma_inv_ = spd_inverse(prior_.sigma_beta, "GlmmModel: prior covariance of beta");
  }

  static GlmmModel from_dataset(const Dataset& data, double tau = Prior::kDefaultTau) {
    return GlmmModel(data.family, data.p(), data.u(), data.subjects, Prior::defaults(data.p(), data.u(), tau));
  }

  Family family() const { return family_; }
  Index p() const { return p_; }
  Index u() const { return u_; }
  std::size_t m() const { return subjects_.size(); }
  Index alpha_dim() const { return p_ + static_cast<Index>(m()) * u_; }
  const std::vector<Subject>& subjects() const { return subjects_; }
  const Prior& prior() const { return prior_; }
  const Matrix& prior_precision_beta() const { return prior_sigma_inv_; }

  /// Sub-model over the given subject indices, kept in the given order.
  GlmmModel subset(std::span<const std::size_t> indices) const {
    std::vector<Subject> subs;
    subs.reserve(indices.size());
    for (const std::size_t i : indices) {
      if (i >= subjects_.size()) {
        throw DimensionError("GlmmModel::subset: subject index out of range");
      }
      subs.push_back(subjects_[i]);
    }
    return GlmmModel(family_, p_, u_, std::move(subs), prior_);
  }

 private:
  void validate() const {
    if (p_ < 1 || u_ < 1) {
      throw DimensionError("GlmmModel: p and u must be positive");
    }
    if (prior_.mu_beta.size() != p_ || prior_.sigma_beta.rows() != p_ || prior_.sigma_beta.cols() != p_ ||
        prior_.S.rows() != u_ || prior_.S.cols() != u_) {
      throw DimensionError("GlmmModel: prior hyperparameters do not match (p, u)");
    }
    if (!(prior_.nu > static_cast<double>(u_) - 1.0)) {
      throw InvalidInputError("GlmmModel: prior degrees of freedom must exceed u - 1");
    }
    checked_llt(prior_.S, "GlmmModel: prior Wishart scale");
    std::unordered_set<std::string> seen;
    for (const auto& s : subjects_) {
      const Index n = s.y.size();
      if (s.X.cols() != p_ || s.Z.cols() != u_) {
        throw DimensionError("GlmmModel: subject '" + s.id + "' has design matrices with wrong column counts");
      }
      if (s.X.rows() != n || s.Z.rows() != n || s.offset.size() != n) {
        throw DimensionError("GlmmModel: subject '" + s.id + "' has inconsistent row counts");
      }
      if (!seen.insert(s.id).second) {
        throw InvalidInputError("GlmmModel: duplicate subject id '" + s.id + "'");
      }
      for (Index k = 0; k < n; ++k) {
        const double y = s.y(k);
        const bool ok = family_ == Family::Bernoulli ? (y == 0.0 || y == 1.0)
                                                    : (y >= 0.0 && y == std::floor(y));
        if (!ok) {
          throw InvalidInputError("GlmmModel: subject '" + s.id + "' has response " + std::to_string(y) +
                                  " outside the support of the " + std::string(to_string(family_)) +
                                  " family");
        }
      }
    }
  }

  Family family_;
  Index p_;
  Index u_;
  std::vector<Subject> subjects_;
  Prior prior_;
  Matrix prior_sigma_inv_;
};

struct GradHess {
  Vector gradient;
  BlockArrowMatrix hessian;
};

/// Gradient and Hessian of log p(beta) + log p(b | E[Q]) + log p(y | beta, b)
/// with respect to alpha = (beta', b_1', ..., b_m')', at `alpha`. Subjects are
/// accumulated in model order.
inline GradHess grad_hessian(const GlmmModel& model, const Vector& alpha, const Matrix& expected_q) {
  const Index p = model.p();
  const Index u = model.u();
  if (alpha.size() != model.alpha_dim()) {
    throw DimensionError("grad_hessian: alpha has length " + std::to_string(alpha.size()) + ", expected " +
                         std::to_string(model.alpha_dim()));
  }
  if (expected_q.rows() != u || expected_q.cols() != u) {
    throw DimensionError("grad_hessian: E[Q] must be u x u");
  }
  const double inv_phi = 1.0 / kFamilyScale;
  const Prior& prior = model.prior();
  const auto beta = alpha.head(p);

  GradHess out{Vector(alpha.size()), BlockArrowMatrix(p, u, model.m())};
  out.gradient.head(p) = -model.prior_precision_beta() * (beta - prior.mu_beta);
  out.hessian.corner() = -model.prior_precision_beta();

  for (std::size_t i = 0; i < model.m(); ++i) {
    const Subject& s = model.subjects()[i];
    const Index off = p + static_cast<Index>(i) * u;
    const auto bi = alpha.segment(off, u);
    const Vector eta = s.X * beta + s.Z * bi + s.offset;
    const LinkValues lv = family_links(model.family(), eta);
    const Vector resid = s.y - lv.bdot;
    out.gradient.head(p).noalias() += inv_phi * (s.X.transpose() * resid);
    out.gradient.segment(off, u) = inv_phi * (s.Z.transpose() * resid) - expected_q * bi;

    const Matrix wx = lv.bddot.asDiagonal() * s.X;
    const Matrix wz = lv.bddot.asDiagonal() * s.Z;
    out.hessian.corner().noalias() -= inv_phi * (s.X.transpose() * wx);
    out.hessian.border(i).noalias() = -inv_phi * (s.X.transpose() * wz);
    out.hessian.diag(i).noalias() = -inv_phi * (s.Z.transpose() * wz);
    out.hessian.diag(i) -= expected_q;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-subject random-effect integrals

/// log of the integrand
///   f(y_i | beta, b) N(b; 0, Q^-1)
/// as a function of b, including c(y_i, phi).
inline double subject_log_integrand(Family family, const Subject& s, const Vector& beta,
                                    const Eigen::LLT<Matrix>& q_llt, const Matrix& q, const Vector& b) {
  const Index u = b.size();
  const Vector eta = s.X * beta + s.Z * b + s.offset;
  const LinkValues lv = family_links(family, eta);
  const double loglik = (s.y.dot(eta) - lv.b.sum()) / kFamilyScale + log_base_measure(family, s.y);
  const double log_prior = -0.5 * static_cast<double>(u) * std::log(2.0 * std::numbers::pi) +
                           0.5 * logdet(q_llt) - 0.5 * b.dot(q * b);
  return loglik + log_prior;
}

/// Exact log f(y_i | beta, b) for given random effects.
inline double subject_log_likelihood(Family family, const Subject& s, const Vector& beta, const Vector& b) {
  const Vector eta = s.X * beta + s.Z * b + s.offset;
  const LinkValues lv = family_links(family, eta);
  return (s.y.dot(eta) - lv.b.sum()) / kFamilyScale + log_base_measure(family, s.y);
}

/// Maximizer of the random-effect log integrand and the curvature there.
struct SubjectMode {
  Vector mode;
  Matrix neg_hessian;      ///< -d^2 h / db db' at the mode (positive definite)
  double log_integrand = 0.0;
  int iterations = 0;
};

/// Damped Newton from b = 0: the step is halved while it fails to increase the
/// objective; stops when the gradient max-norm drops below 1e-8, or when no
/// representable increase remains and the iterate is flat to rounding.
inline SubjectMode find_subject_mode(Family family, const Subject& s, const Vector& beta, const Matrix& q,
                                     int max_iterations = 100) {
  const Index u = q.rows();
  const auto q_llt = checked_llt(q, "find_subject_mode: Q");
  const Vector fixed = s.X * beta + s.offset;
  SubjectMode out{Vector::Zero(u), Matrix(u, u), 0.0, 0};

  auto evaluate = [&](const Vector& b, Vector* grad, Matrix* neg_hess) {
    const Vector eta = fixed + s.Z * b;
    const LinkValues lv = family_links(family, eta);
    if (grad != nullptr) {
      *grad = s.Z.transpose() * (s.y - lv.bdot) / kFamilyScale - q * b;
      *neg_hess = s.Z.transpose() * lv.bddot.asDiagonal() * s.Z / kFamilyScale + q;
    }
    return (s.y.dot(eta) - lv.b.sum()) / kFamilyScale - 0.5 * b.dot(q * b);
  };

  Vector grad(u);
  Matrix neg_hess(u, u);
  double value = evaluate(out.mode, &grad, &neg_hess);
  for (int it = 0; it < max_iterations; ++it) {
    out.iterations = it;
    if (grad.cwiseAbs().maxCoeff() < 1e-8) {
      break;
    }
    const Vector step = neg_hess.llt().solve(grad);
    double t = 1.0;
    bool moved = false;
    for (int halving = 0; halving < 60; ++halving, t *= 0.5) {
      const Vector trial = out.mode + t * step;
      const double trial_value = evaluate(trial, nullptr, nullptr);
      if (trial_value > value) {
        out.mode = trial;
        value = evaluate(out.mode, &grad, &neg_hess);
        moved = true;
        break;
      }
    }
    if (!moved) {
      // No representable increase left: accept if already flat to rounding,
      // either by gradient size or by the Newton decrement relative to |h|.
      const double decrement = 0.5 * grad.dot(step);
      if (grad.cwiseAbs().maxCoeff() < 1e-6 ||
          decrement <= 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(value))) {
        break;
      }
      throw NumericalError("find_subject_mode: Newton line search failed for subject '" + s.id + "'");
    }
    if (it + 1 == max_iterations && grad.cwiseAbs().maxCoeff() >= 1e-8) {
      throw NumericalError("find_subject_mode: Newton did not converge in " + std::to_string(max_iterations) +
                           " iterations for subject '" + s.id + "'");
    }
  }
  out.neg_hessian = neg_hess;
  out.log_integrand = subject_log_integrand(family, s, beta, q_llt, q, out.mode);
  return out;
}

}  // namespace glmmvb
