#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "glmmvb/errors.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/random.hpp"

namespace glmmvb {

/// Simulation designs with a random intercept b_i ~ N(0, sigma2):
///
///  * LogisticIntercept: logit P(y_ij = 1) = beta0 + beta1 j/n_i + b_i.
///  * LogisticModelSelect: as above, plus decoy covariates x2 (fixed) and
///    z1 (random), each uniform on {-1, 0, 1}, that do not enter the response.
///  * PoissonIntercept: log E y_ij = beta0 + beta1 x_ij + b_i, x_ij ~ U(0, 1).
enum class SimKind { LogisticIntercept, LogisticModelSelect, PoissonIntercept };

inline std::string_view to_string(SimKind k) {
  switch (k) {
    case SimKind::LogisticIntercept:
      return "logistic";
    case SimKind::LogisticModelSelect:
      return "logistic-select";
    case SimKind::PoissonIntercept:
      return "poisson";
  }
  return "";
}

inline SimKind parse_sim_kind(std::string_view s) {
  if (s == "logistic") {
    return SimKind::LogisticIntercept;
  }
  if (s == "logistic-select") {
    return SimKind::LogisticModelSelect;
  }
  if (s == "poisson") {
    return SimKind::PoissonIntercept;
  }
  throw InvalidInputError("parse_sim_kind: unknown design '" + std::string(s) + "'");
}

struct SimDesign {
  SimKind kind = SimKind::LogisticIntercept;
  std::size_t m = 1000;
  std::size_t n_i = 8;
  Vector beta = (Vector(2) << -1.5, 2.5).finished();
  double sigma2 = 1.5;
  std::uint64_t seed = 0;

  /// beta = (-1.5, 2.5) throughout; logistic designs use n_i = 8, sigma2 = 1.5
  /// and the Poisson design n_i = 5, sigma2 = 0.2.
  static SimDesign defaults(SimKind kind, std::size_t m = 1000, std::uint64_t seed = 0) {
    SimDesign d;
    d.kind = kind;
    d.m = m;
    d.seed = seed;
    if (kind == SimKind::PoissonIntercept) {
      d.n_i = 5;
      d.sigma2 = 0.2;
    }
    return d;
  }

  void validate() const {
    if (m < 1 || n_i < 1) {
      throw InvalidInputError("SimDesign: m and n_i must be at least 1");
    }
    if (!(sigma2 > 0.0)) {
      throw InvalidInputError("SimDesign: sigma2 must be positive");
    }
    if (beta.size() != 2) {
      throw InvalidInputError("SimDesign: beta must have two entries (intercept, slope)");
    }
  }
};

/// Deterministic in `design.seed`. Per subject the draw order is b_i, then for
/// each observation its covariates and response. Intercept columns are named
/// x1 and z1; subject ids are "s1", "s2", ...
inline Dataset generate(const SimDesign& design) {
  design.validate();
  Philox rng(design.seed);
  const bool select = design.kind == SimKind::LogisticModelSelect;
  const bool poisson = design.kind == SimKind::PoissonIntercept;
  const Index n = static_cast<Index>(design.n_i);
  const Index p = select ? 3 : 2;
  const Index u = select ? 2 : 1;
  const double sd = std::sqrt(design.sigma2);

  Dataset out;
  out.family = poisson ? Family::Poisson : Family::Bernoulli;
  out.x_names = select ? std::vector<std::string>{"x1", "x2", "x3"} : std::vector<std::string>{"x1", "x2"};
  out.z_names = select ? std::vector<std::string>{"z1", "z2"} : std::vector<std::string>{"z1"};
  out.subjects.reserve(design.m);

  auto ternary = [&rng] { return static_cast<double>(uniform_index(rng, 3)) - 1.0; };

  for (std::size_t i = 0; i < design.m; ++i) {
    Subject s{"s" + std::to_string(i + 1), Vector(n), Matrix(n, p), Matrix(n, u), Vector::Zero(n)};
    const double b = sd * standard_normal(rng);
    for (Index j = 0; j < n; ++j) {
      const double x = poisson ? uniform01(rng) : static_cast<double>(j + 1) / static_cast<double>(n);
      s.X(j, 0) = 1.0;
      s.X(j, 1) = x;
      s.Z(j, 0) = 1.0;
      if (select) {
        s.X(j, 2) = ternary();
        s.Z(j, 1) = ternary();
      }
      const double eta = design.beta(0) + design.beta(1) * x + b;
      if (poisson) {
        s.y(j) = static_cast<double>(poisson_variate(rng, std::exp(eta)));
      } else {
        s.y(j) = bernoulli(rng, detail::logistic(eta)) ? 1.0 : 0.0;
      }
    }
    out.subjects.push_back(std::move(s));
  }
  return out;
}

}  // namespace glmmvb
