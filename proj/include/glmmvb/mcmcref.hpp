#pragma once

// Reference posterior sampler for GLMMs: adaptive random-walk Metropolis on
// (beta, theta_Q) with the random effects integrated out by importance
// sampling. The likelihood estimate is unbiased, so storing it with the
// current state and never refreshing it gives a chain that targets the exact
// posterior (pseudo-marginal MH).
//
// Q is parameterized as Q = expm(Sigma) with Sigma symmetric; theta_Q holds
// the lower triangle of Sigma column by column (the vech order).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/linalg.hpp"
#include "glmmvb/random.hpp"

namespace glmmvb {

struct ChainConfig {
  int n_iter = 20000;
  int burnin = 20000;
  int is_samples = 10;
  std::uint64_t seed = 0;
  std::optional<Vector> initial_beta;  ///< defaults to zero

  void validate() const {
    if (n_iter < 1 || burnin < 1 || is_samples < 1) {
      throw ConfigError("ChainConfig: n_iter, burnin and is_samples must be positive");
    }
  }
};

// Haario et al. (2001) constants.
inline constexpr int kAdaptationStart = 1000;
inline constexpr double kInitialProposalScale = 0.1;
inline constexpr double kAdaptiveScale = 2.38;
inline constexpr double kAdaptiveJitter = 1e-10;
inline constexpr double kLowAcceptance = 0.01;

inline Index theta_q_length(Index u) { return u * (u + 1) / 2; }

namespace detail {

inline Index u_from_theta_length(Index len) {
  Index u = 0;
  while (theta_q_length(u) < len) {
    ++u;
  }
  if (theta_q_length(u) != len || len == 0) {
    throw DimensionError("theta_to_Q: " + std::to_string(len) + " is not a triangular number");
  }
  return u;
}

inline Matrix unvech(const Vector& theta) {
  const Index u = u_from_theta_length(theta.size());
  Matrix s(u, u);
  Index k = 0;
  for (Index j = 0; j < u; ++j) {
    for (Index i = j; i < u; ++i) {
      s(i, j) = theta(k);
      s(j, i) = theta(k);
      ++k;
    }
  }
  return s;
}

}  // namespace detail

/// Q = expm(Sigma(theta)), symmetric positive definite for any finite theta.
inline Matrix theta_to_Q(const Vector& theta) {
  if (!theta.allFinite()) {
    throw InvalidInputError("theta_to_Q: non-finite input");
  }
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(detail::unvech(theta));
  const Matrix& v = eig.eigenvectors();
  return symmetrized(v * eig.eigenvalues().array().exp().matrix().asDiagonal() * v.transpose());
}

/// theta = vech(logm(Q)).
inline Vector Q_to_theta(const Matrix& q) {
  if (q.rows() != q.cols() || q.rows() == 0 || !q.allFinite() || asymmetry(q) > 1e-10) {
    throw InvalidInputError("Q_to_theta: Q must be a finite symmetric matrix");
  }
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(q);
  if (!(eig.eigenvalues().array() > 0.0).all()) {
    throw InvalidInputError("Q_to_theta: Q is not positive definite");
  }
  const Matrix& v = eig.eigenvectors();
  return vech(v * eig.eigenvalues().array().log().matrix().asDiagonal() * v.transpose());
}

/// log |d vech(Q) / d theta| for Q = expm(Sigma): the Frechet derivative of
/// the matrix exponential acts in the eigenbasis as a Hadamard product with
/// the divided differences (e^l_k - e^l_j)/(l_k - l_j), so the log Jacobian
/// is the sum of their logs over k <= j.
inline double log_jacobian_theta_to_Q(const Vector& theta) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(detail::unvech(theta));
  const Vector& lam = eig.eigenvalues();
  double out = 0.0;
  for (Index k = 0; k < lam.size(); ++k) {
    out += lam(k);
    for (Index j = k + 1; j < lam.size(); ++j) {
      const double lo = std::min(lam(k), lam(j));
      const double gap = std::abs(lam(k) - lam(j));
      out += lo + (gap > 0.0 ? std::log(std::expm1(gap) / gap) : 0.0);
    }
  }
  return out;
}

/// Importance-sampling estimate of log p(y | beta, Q): for every subject the
/// proposal is the Laplace Gaussian N(b_hat, (-h''(b_hat))^-1) and
/// (1/S) sum_s w_s is an unbiased estimate of the subject's likelihood.
/// Consumes S * u standard normals per subject, in subject order.
inline double is_loglik(const GlmmModel& model, const Vector& beta, const Matrix& q, int samples, Philox& rng) {
  if (samples < 1) {
    throw ConfigError("is_loglik: need at least one importance sample");
  }
  if (beta.size() != model.p() || q.rows() != model.u() || q.cols() != model.u()) {
    throw DimensionError("is_loglik: parameter dimensions do not match the model");
  }
  const Index u = model.u();
  const auto q_llt = checked_llt(q, "is_loglik: Q");
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  std::vector<double> logw(static_cast<std::size_t>(samples));
  Vector z(u);
  for (const auto& s : model.subjects()) {
    const SubjectMode mode = find_subject_mode(model.family(), s, beta, q);
    Eigen::LLT<Matrix> prop;
    try {
      prop = checked_llt(mode.neg_hessian, "is_loglik: proposal curvature");
    } catch (const DecompositionError& e) {
      throw NumericalError(std::string(e.what()) + " for subject '" + s.id + "'");
    }
    const double prop_logdet = logdet(prop);
    double max_logw = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < samples; ++k) {
      for (Index j = 0; j < u; ++j) {
        z(j) = standard_normal(rng);
      }
      const Vector b = mode.mode + prop.matrixU().solve(z);
      const double log_q = -0.5 * static_cast<double>(u) * log_2pi + 0.5 * prop_logdet - 0.5 * z.squaredNorm();
      const double lw = subject_log_integrand(model.family(), s, beta, q_llt, q, b) - log_q;
      logw[static_cast<std::size_t>(k)] = lw;
      max_logw = std::max(max_logw, lw);
    }
    double acc = 0.0;
    for (const double lw : logw) {
      acc += std::exp(lw - max_logw);
    }
    total += max_logw + std::log(acc / static_cast<double>(samples));
  }
  return total;
}

/// log N(beta; mu0, Sigma0) + log W(Q(theta); nu0, S0) + log Jacobian.
inline double log_prior_beta_theta(const Prior& prior, const Vector& beta, const Vector& theta) {
  const GaussianFactor beta_prior(prior.mu_beta, prior.sigma_beta);
  const WishartFactor q_prior(prior.nu, prior.S);
  return beta_prior.log_density(beta) + q_prior.log_density(theta_to_Q(theta)) + log_jacobian_theta_to_Q(theta);
}

struct ChainResult {
  std::vector<std::string> names;  ///< beta1..betap, thetaQ1..
  Matrix draws;                    ///< post burn-in, one row per iteration
  double acceptance_rate = 0.0;    ///< post burn-in
  std::uint64_t likelihood_evaluations = 0;
  std::string warning;

  Vector means() const { return draws.colwise().mean().transpose(); }

  Vector sds() const {
    const Vector mu = means();
    const double n = static_cast<double>(draws.rows());
    return ((draws.rowwise() - mu.transpose()).colwise().squaredNorm().transpose() / (n - 1.0)).cwiseSqrt();
  }
};

/// Adaptive random-walk pseudo-marginal Metropolis-Hastings on (beta, theta_Q).
/// For the first kAdaptationStart iterations the proposal is
/// N(0, 0.1^2/d I); afterwards N(0, 2.38^2/d (C + 1e-10 I)) with C the
/// covariance of all previous states. Exactly one likelihood estimate is made
/// per iteration (for the proposal) plus one for the starting state.
inline ChainResult run_chain(const GlmmModel& model, const ChainConfig& config) {
  config.validate();
  const Index p = model.p();
  const Index nq = theta_q_length(model.u());
  const Index d = p + nq;
  Philox rng(config.seed);

  ChainResult result;
  for (Index k = 0; k < p; ++k) {
    result.names.push_back("beta" + std::to_string(k + 1));
  }
  for (Index k = 0; k < nq; ++k) {
    result.names.push_back("thetaQ" + std::to_string(k + 1));
  }

  Vector state = Vector::Zero(d);
  if (config.initial_beta) {
    if (config.initial_beta->size() != p) {
      throw DimensionError("run_chain: initial beta has the wrong length");
    }
    state.head(p) = *config.initial_beta;
  }

  auto log_target = [&](const Vector& psi, double* loglik) {
    const Vector beta = psi.head(p);
    const Vector theta = psi.tail(nq);
    ++result.likelihood_evaluations;
    *loglik = is_loglik(model, beta, theta_to_Q(theta), config.is_samples, rng);
    return *loglik + log_prior_beta_theta(model.prior(), beta, theta);
  };

  double current_loglik = 0.0;
  double current = log_target(state, &current_loglik);
  if (!std::isfinite(current)) {
    throw NumericalError("run_chain: log target is not finite at the starting state");
  }

  // Running mean and scatter of all states visited so far.
  Vector run_mean = Vector::Zero(d);
  Matrix run_scatter = Matrix::Zero(d, d);
  std::uint64_t visited = 0;

  const int total = config.burnin + config.n_iter;
  result.draws.resize(config.n_iter, d);
  std::uint64_t accepted = 0;
  const Matrix initial_chol =
      (kInitialProposalScale / std::sqrt(static_cast<double>(d))) * Matrix::Identity(d, d);
  const double adaptive_factor = kAdaptiveScale * kAdaptiveScale / static_cast<double>(d);

  for (int it = 0; it < total; ++it) {
    Vector z(d);
    for (Index k = 0; k < d; ++k) {
      z(k) = standard_normal(rng);
    }
    Vector step;
    if (it < kAdaptationStart) {
      step = initial_chol * z;
    } else {
      const Matrix cov = run_scatter / static_cast<double>(visited - 1);
      const Matrix prop = adaptive_factor * (cov + kAdaptiveJitter * Matrix::Identity(d, d));
      step = checked_llt(symmetrized(prop), "run_chain: proposal covariance").matrixL() * z;
    }
    const Vector candidate = state + step;

    double cand_loglik = 0.0;
    double cand = -std::numeric_limits<double>::infinity();
    try {
      cand = log_target(candidate, &cand_loglik);
    } catch (const NumericalError&) {
      // Proposal far outside the support of reasonable Q: reject.
    } catch (const DecompositionError&) {
    }
    const double log_u = std::log(1.0 - uniform01(rng));
    const bool accept = std::isfinite(cand) && log_u < cand - current;
    if (accept) {
      state = candidate;
      current = cand;
      current_loglik = cand_loglik;
    }

    ++visited;
    const Vector delta = state - run_mean;
    run_mean += delta / static_cast<double>(visited);
    run_scatter.noalias() += delta * (state - run_mean).transpose();

    if (it >= config.burnin) {
      result.draws.row(it - config.burnin) = state.transpose();
      if (accept) {
        ++accepted;
      }
    }
  }
  result.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(config.n_iter);
  if (result.acceptance_rate < kLowAcceptance) {
    result.warning = "acceptance rate " + std::to_string(result.acceptance_rate) + " is below 1% after burn-in";
  }
  return result;
}

}  // namespace glmmvb
