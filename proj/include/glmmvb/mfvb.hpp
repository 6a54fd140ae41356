#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "glmmvb/block_arrow.hpp"
#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/ffvb.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/random.hpp"

namespace glmmvb {

struct FitConfig {
  int inner_iterations = kDefaultInnerIterations;  ///< N of each fixed-form update
  double epsilon = 1e-5;
  int max_outer = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (inner_iterations < 2 || inner_iterations % 2 != 0) {
      throw ConfigError("FitConfig: inner iterations must be even and >= 2");
    }
    if (!(epsilon > 0.0)) {
      throw ConfigError("FitConfig: epsilon must be positive");
    }
    if (max_outer < 1) {
      throw ConfigError("FitConfig: max_outer must be at least 1");
    }
  }
};

struct SubjectPosterior {
  std::string id;
  Vector mean;        ///< mu_{b_i}
  Matrix cov;         ///< Sigma_{b_i}
  Matrix cross_cov;   ///< Cov(beta, b_i), p x u
};

/// Converged q(alpha) = N(mu, H^-1) with arrow-shaped precision H, and
/// q(Q) = W(nu, S).
struct VariationalFit {
  Vector q_alpha_mu;
  BlockArrowMatrix q_alpha_precision;
  GaussianFactor beta_marginal;
  std::vector<SubjectPosterior> per_subject;
  WishartFactor q_Q;
  int iterations_used = 0;
  bool converged = false;
  std::uint64_t seed = 0;
  std::vector<double> delta_history;  ///< stopping statistic after each outer iteration
};

/// Description of the stopping statistic, recorded alongside serialized fits.
inline constexpr const char* kStoppingRule =
    "mean absolute change of (mu_alpha, diag Sigma_alpha, nu_q, vech S_q)";

namespace diagnostics {
inline std::atomic<std::uint64_t>& mfvb_invocations() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}
}  // namespace diagnostics

/// Closed-form q(Q) update: nu = nu_0 + m, S = (S_0^-1 + sum_i (mu_i mu_i' + Sigma_i))^-1.
inline WishartFactor wishart_update(const Prior& prior, std::span<const Vector> means, std::span<const Matrix> covs) {
  if (means.size() != covs.size()) {
    throw DimensionError("wishart_update: means and covariances differ in count");
  }
  Matrix acc = spd_inverse(prior.S, "wishart_update: prior scale");
  for (std::size_t i = 0; i < means.size(); ++i) {
    acc.noalias() += means[i] * means[i].transpose() + covs[i];
  }
  return WishartFactor(prior.nu + static_cast<double>(means.size()),
                       spd_inverse(symmetrized(acc), "wishart_update"));
}

namespace detail {

inline Vector stack_parameters(const Vector& mu, const Vector& sigma_diag, const WishartFactor& q) {
  const Vector s = vech(q.scale());
  Vector out(mu.size() + sigma_diag.size() + 1 + s.size());
  out << mu, sigma_diag, q.nu(), s;
  return out;
}

inline double mean_abs_delta(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw DimensionError("stacked_param_delta: fits are not structurally identical");
  }
  return (a - b).cwiseAbs().sum() / static_cast<double>(a.size());
}

}  // namespace detail

/// The stacked vector compared by the stopping rule.
inline Vector stacked_parameters(const VariationalFit& fit) {
  const ArrowCholesky chol(fit.q_alpha_precision);
  return detail::stack_parameters(fit.q_alpha_mu, chol.marginals().diagonal(), fit.q_Q);
}

/// (1/d) sum |next - prev| over (mu_alpha, diag Sigma_alpha, nu_q, vech S_q).
inline double stacked_param_delta(const VariationalFit& prev, const VariationalFit& next) {
  if (!prev.q_alpha_precision.same_shape(next.q_alpha_precision) || prev.q_Q.dim() != next.q_Q.dim()) {
    throw DimensionError("stacked_param_delta: fits are not structurally identical");
  }
  return detail::mean_abs_delta(stacked_parameters(prev), stacked_parameters(next));
}

/// Hybrid VB for a GLMM: alternate the fixed-form Gaussian update of
/// q(beta, b) (with E[Q] = nu S plugged in) and the closed-form Wishart update
/// of q(Q) until the stacked-parameter delta falls below epsilon or max_outer
/// outer iterations have run.
inline VariationalFit mfvb_fit(const GlmmModel& model, const FitConfig& config) {
  config.validate();
  if (model.m() == 0) {
    throw EmptyDataError("mfvb_fit: model has no subjects");
  }
  diagnostics::mfvb_invocations().fetch_add(1, std::memory_order_relaxed);

  const Index p = model.p();
  const Index u = model.u();
  const std::size_t m = model.m();
  Philox rng(config.seed);

  Vector mu = Vector::Zero(model.alpha_dim());
  BlockArrowMatrix precision = BlockArrowMatrix::identity(p, u, m);
  // Start from E[Q] = I. Starting at the prior mean nu_0 S_0 (2000 I for the
  // default prior) pins every b_i near zero, and the Wishart step then returns
  // the same huge E[Q]: a degenerate fixed point the iteration barely leaves.
  WishartFactor q_Q(model.prior().nu, Matrix::Identity(u, u) / model.prior().nu);
  Vector previous = detail::stack_parameters(mu, Vector::Ones(model.alpha_dim()), q_Q);

  std::vector<double> history;
  bool converged = false;
  int outer = 0;
  std::optional<ArrowMarginals> marginals;
  std::vector<Vector> b_means(m);
  while (outer < config.max_outer) {
    ++outer;
    const Matrix expected_q = q_Q.mean();
    BlockTargetOracle<BlockArrowMatrix> oracle{
        {model.alpha_dim()},
        [&](std::span<const Vector> theta, std::size_t) {
          GradHess gh = grad_hessian(model, theta[0], expected_q);
          return BlockDerivatives<BlockArrowMatrix>{std::move(gh.gradient), std::move(gh.hessian)};
        }};
    std::vector<GaussianBlock<BlockArrowMatrix>> init;
    init.push_back({mu, precision});
    try {
      auto fitted = ffvb_fit<BlockArrowMatrix>(oracle, std::move(init), config.inner_iterations, rng);
      mu = std::move(fitted[0].mean);
      precision = std::move(fitted[0].precision);
      marginals = ArrowCholesky(precision).marginals();
    } catch (const DecompositionError& e) {
      throw DecompositionError("mfvb_fit: outer iteration " + std::to_string(outer) + ": " + e.what(), e.index(),
                               e.iteration());
    }

    for (std::size_t i = 0; i < m; ++i) {
      b_means[i] = mu.segment(p + static_cast<Index>(i) * u, u);
    }
    q_Q = wishart_update(model.prior(), b_means, marginals->diag_cov);

    Vector current = detail::stack_parameters(mu, marginals->diagonal(), q_Q);
    const double delta = detail::mean_abs_delta(previous, current);
    history.push_back(delta);
    previous = std::move(current);
    if (delta < config.epsilon) {
      converged = true;
      break;
    }
  }

  std::vector<SubjectPosterior> subjects;
  subjects.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    subjects.push_back({model.subjects()[i].id, b_means[i], marginals->diag_cov[i], marginals->border_cov[i]});
  }
  GaussianFactor beta(mu.head(p), marginals->corner_cov);
  return VariationalFit{std::move(mu), std::move(precision), std::move(beta), std::move(subjects),
                        std::move(q_Q),  outer,                converged,       config.seed,
                        std::move(history)};
}

}  // namespace glmmvb
