#pragma once

// Density grids for external plotting: closed-form marginals of a fit and
// histogram estimates from chain draws, on mean +/- 5 SD with 512 points.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/linalg.hpp"

namespace glmmvb {

inline constexpr int kGridPoints = 512;
inline constexpr double kGridHalfWidthSds = 5.0;

struct DensityGrid {
  std::string parameter;
  std::vector<double> x;
  std::vector<double> density;
};

inline double trapezoid(const DensityGrid& g) {
  double out = 0.0;
  for (std::size_t k = 1; k < g.x.size(); ++k) {
    out += 0.5 * (g.x[k] - g.x[k - 1]) * (g.density[k] + g.density[k - 1]);
  }
  return out;
}

namespace detail {

inline std::vector<double> grid_points(double lo, double hi, int points) {
  std::vector<double> x(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    x[static_cast<std::size_t>(k)] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
  }
  return x;
}

}  // namespace detail

inline DensityGrid gaussian_grid(std::string parameter, double mean, double sd, int points = kGridPoints) {
  if (!(sd > 0.0) || !std::isfinite(mean) || !std::isfinite(sd)) {
    throw InvalidInputError("gaussian_grid: need finite mean and positive sd for '" + parameter + "'");
  }
  DensityGrid g{std::move(parameter), detail::grid_points(mean - kGridHalfWidthSds * sd, mean + kGridHalfWidthSds * sd, points), {}};
  const double norm = 1.0 / (sd * std::sqrt(2.0 * std::numbers::pi));
  for (const double x : g.x) {
    const double z = (x - mean) / sd;
    g.density.push_back(norm * std::exp(-0.5 * z * z));
  }
  return g;
}

/// Marginal grids of every coordinate of a Gaussian factor, named by `names`.
inline std::vector<DensityGrid> gaussian_marginal_grids(const GaussianFactor& f, const std::vector<std::string>& names) {
  if (static_cast<Index>(names.size()) != f.dim()) {
    throw DimensionError("gaussian_marginal_grids: one name per coordinate required");
  }
  std::vector<DensityGrid> out;
  for (Index k = 0; k < f.dim(); ++k) {
    out.push_back(gaussian_grid(names[static_cast<std::size_t>(k)], f.mean()(k), std::sqrt(f.covariance()(k, k))));
  }
  return out;
}

/// Density of sigma^2 = 1/Q when Q ~ W(nu, S) with u = 1, i.e. Q is gamma with
/// shape nu/2 and scale 2S, so sigma^2 is inverse gamma with shape a = nu/2 and
/// scale b = 1/(2S). The range is clamped below at 0. Requires a > 2 so that
/// the standard deviation exists.
inline DensityGrid sigma2_grid(const WishartFactor& q, std::string parameter = "sigma2", int points = kGridPoints) {
  if (q.dim() != 1) {
    throw DimensionError("sigma2_grid: only defined for a single random effect (u = 1)");
  }
  const double a = 0.5 * q.nu();
  const double b = 0.5 / q.scale()(0, 0);
  if (!(a > 2.0)) {
    throw InvalidInputError("sigma2_grid: nu_q must exceed 4 for a finite variance");
  }
  const double mean = b / (a - 1.0);
  const double sd = mean / std::sqrt(a - 2.0);
  const double lo = std::max(0.0, mean - kGridHalfWidthSds * sd);
  DensityGrid g{std::move(parameter), detail::grid_points(lo, mean + kGridHalfWidthSds * sd, points), {}};
  const double log_norm = a * std::log(b) - std::lgamma(a);
  for (const double x : g.x) {
    g.density.push_back(x > 0.0 ? std::exp(log_norm - (a + 1.0) * std::log(x) - b / x) : 0.0);
  }
  return g;
}

/// Histogram estimate on the same grid layout: each grid point gets the count
/// of draws in a bin of one grid spacing centred on it, over n * spacing.
inline DensityGrid histogram_grid(std::string parameter, const Vector& draws, int points = kGridPoints) {
  if (draws.size() < 2) {
    throw EmptyDataError("histogram_grid: need at least two draws for '" + parameter + "'");
  }
  const double n = static_cast<double>(draws.size());
  const double mean = draws.mean();
  const double sd = std::sqrt((draws.array() - mean).square().sum() / (n - 1.0));
  if (!(sd > 0.0)) {
    throw InvalidInputError("histogram_grid: draws of '" + parameter + "' are constant");
  }
  const double lo = mean - kGridHalfWidthSds * sd;
  const double hi = mean + kGridHalfWidthSds * sd;
  DensityGrid g{std::move(parameter), detail::grid_points(lo, hi, points), {}};
  const double h = (hi - lo) / static_cast<double>(points - 1);
  std::vector<double> counts(static_cast<std::size_t>(points), 0.0);
  for (Index k = 0; k < draws.size(); ++k) {
    const double pos = std::round((draws(k) - lo) / h);
    if (pos >= 0.0 && pos < static_cast<double>(points)) {
      counts[static_cast<std::size_t>(pos)] += 1.0;
    }
  }
  for (const double c : counts) {
    g.density.push_back(c / (n * h));
  }
  return g;
}

}  // namespace glmmvb
