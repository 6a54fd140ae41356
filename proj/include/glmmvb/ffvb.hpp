#pragma once

// Stochastic fixed-form VB for a product of Gaussian factors q(theta_1)...q(theta_K).
//
// Each block keeps a running regression of the log target on the Gaussian
// sufficient statistics, expressed through the gradient and Hessian of
// log p(theta) p(y | theta) at draws theta* ~ q:
//
//   g_k     <- (1 - c) g_k     + c grad_k(theta*)
//   Gamma_k <- (1 - c) Gamma_k - c Hess_k(theta*)
//   t_k     <- (1 - c) t_k     + c theta*_k
//
// with c = 1/sqrt(N). The same quantities are averaged over the second half of
// the N iterations and the returned factor is
//   Sigma_k = Gamma_bar_k^-1,  mu_k = Sigma_k g_bar_k + t_bar_k.
//
// At a quadratic target the Hessian is constant and the result is exact for
// any draws.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/linalg.hpp"
#include "glmmvb/random.hpp"

namespace glmmvb {

inline constexpr int kDefaultInnerIterations = 100;

template <PrecisionMatrix P>
struct BlockDerivatives {
  Vector gradient;
  P hessian;
};

/// A Gaussian block in (mean, precision) form.
template <PrecisionMatrix P>
struct GaussianBlock {
  Vector mean;
  P precision;
};

/// Target supplying, for block k, the gradient and Hessian of
/// log p(theta) p(y | theta) at the full parameter theta = (theta_1, ..., theta_K).
template <PrecisionMatrix P>
struct BlockTargetOracle {
  std::vector<Index> block_dims;
  std::function<BlockDerivatives<P>(std::span<const Vector> theta, std::size_t block)> eval;
};

inline constexpr double kHessianSymmetryTolerance = 1e-8;

/// Runs N iterations of the block fixed-form update and returns the averaged
/// factors. `rng` advances by exactly sum_k dim_k standard normals per
/// iteration.
template <PrecisionMatrix P>
std::vector<GaussianBlock<P>> ffvb_fit(const BlockTargetOracle<P>& oracle, std::vector<GaussianBlock<P>> init,
                                       int n_iterations, Philox& rng) {
  if (n_iterations < 2 || n_iterations % 2 != 0) {
    throw ConfigError("ffvb_fit: N must be even and at least 2, got " + std::to_string(n_iterations));
  }
  const std::size_t n_blocks = oracle.block_dims.size();
  if (init.size() != n_blocks) {
    throw DimensionError("ffvb_fit: " + std::to_string(init.size()) + " initial factors for " +
                         std::to_string(n_blocks) + " blocks");
  }
  for (std::size_t k = 0; k < n_blocks; ++k) {
    if (init[k].mean.size() != oracle.block_dims[k] || init[k].precision.dim() != oracle.block_dims[k]) {
      throw DimensionError("ffvb_fit: initial factor " + std::to_string(k) + " has the wrong dimension");
    }
  }

  const double c = 1.0 / std::sqrt(static_cast<double>(n_iterations));
  const double avg_weight = 2.0 / static_cast<double>(n_iterations);
  const int half = n_iterations / 2;

  auto factorize = [](const P& m, long iteration, std::size_t block) {
    try {
      return m.factorize();
    } catch (const DecompositionError& e) {
      throw DecompositionError("ffvb_fit: iteration " + std::to_string(iteration) + ", block " +
                                   std::to_string(block) + ": " + e.what() +
                                   " (step size too large for this target?)",
                               e.index(), iteration);
    }
  };

  std::vector<Vector> mu(n_blocks);
  std::vector<typename std::decay_t<decltype(init[0].precision.factorize())>> factor;
  std::vector<Vector> g(n_blocks);
  std::vector<Vector> t(n_blocks);
  std::vector<P> gamma;
  std::vector<Vector> g_bar(n_blocks);
  std::vector<Vector> t_bar(n_blocks);
  std::vector<P> gamma_bar;
  factor.reserve(n_blocks);
  gamma.reserve(n_blocks);
  gamma_bar.reserve(n_blocks);
  for (std::size_t k = 0; k < n_blocks; ++k) {
    const Index d = oracle.block_dims[k];
    mu[k] = init[k].mean;
    factor.push_back(factorize(init[k].precision, 0, k));
    t[k] = init[k].mean;
    g[k] = Vector::Zero(d);
    gamma.push_back(init[k].precision);
    t_bar[k] = Vector::Zero(d);
    g_bar[k] = Vector::Zero(d);
    gamma_bar.push_back(init[k].precision.zeros_like());
  }

  std::vector<Vector> theta(n_blocks);
  for (int i = 1; i <= n_iterations; ++i) {
    // Draw from the factors as they stood at the end of the previous iteration.
    for (std::size_t k = 0; k < n_blocks; ++k) {
      Vector z(oracle.block_dims[k]);
      for (Index j = 0; j < z.size(); ++j) {
        z(j) = standard_normal(rng);
      }
      theta[k] = mu[k] + factor[k].draw_offset(z);
    }
    for (std::size_t k = 0; k < n_blocks; ++k) {
      factor[k] = factorize(gamma[k], i, k);
      mu[k] = factor[k].solve(g[k]) + t[k];

      BlockDerivatives<P> d = oracle.eval(std::span<const Vector>(theta), k);
      if (d.gradient.size() != oracle.block_dims[k] || d.hessian.dim() != oracle.block_dims[k]) {
        throw DimensionError("ffvb_fit: oracle returned derivatives of the wrong size for block " +
                             std::to_string(k));
      }
      if (d.hessian.asymmetry() > kHessianSymmetryTolerance) {
        throw InvalidInputError("ffvb_fit: oracle Hessian for block " + std::to_string(k) + " is not symmetric");
      }
      g[k] = (1.0 - c) * g[k] + c * d.gradient;
      gamma[k].blend(1.0 - c, d.hessian, -c);
      t[k] = (1.0 - c) * t[k] + c * theta[k];
      if (i > half) {
        g_bar[k] += avg_weight * d.gradient;
        gamma_bar[k].blend(1.0, d.hessian, -avg_weight);
        t_bar[k] += avg_weight * theta[k];
      }
    }
  }

  std::vector<GaussianBlock<P>> out;
  out.reserve(n_blocks);
  for (std::size_t k = 0; k < n_blocks; ++k) {
    const auto final_factor = factorize(gamma_bar[k], n_iterations + 1, k);
    Vector mean = final_factor.solve(g_bar[k]) + t_bar[k];
    out.push_back(GaussianBlock<P>{std::move(mean), std::move(gamma_bar[k])});
  }
  return out;
}

/// Dense convenience form: initial and returned factors in moment form.
inline std::vector<GaussianFactor> ffvb_fit(const BlockTargetOracle<DensePrecision>& oracle,
                                            std::span<const GaussianFactor> init, int n_iterations, Philox& rng) {
  std::vector<GaussianBlock<DensePrecision>> blocks;
  blocks.reserve(init.size());
  for (const auto& f : init) {
    blocks.push_back({f.mean(), DensePrecision(spd_inverse(f.covariance(), "ffvb_fit: initial covariance"))});
  }
  auto fitted = ffvb_fit<DensePrecision>(oracle, std::move(blocks), n_iterations, rng);
  std::vector<GaussianFactor> out;
  out.reserve(fitted.size());
  for (auto& b : fitted) {
    out.emplace_back(std::move(b.mean), spd_inverse(b.precision.matrix(), "ffvb_fit: final precision"));
  }
  return out;
}

/// Default starting point when the caller has none: mu = 0, Sigma = I.
inline std::vector<GaussianFactor> ffvb_default_init(std::span<const Index> block_dims) {
  std::vector<GaussianFactor> out;
  for (const Index d : block_dims) {
    out.emplace_back(Vector::Zero(d), Matrix::Identity(d, d));
  }
  return out;
}

}  // namespace glmmvb
