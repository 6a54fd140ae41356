#pragma once

// Independent reference computations for tests: dense reconstructions,
// finite differences, quadrature and direct density formulas. Nothing here
// calls the library code it is used to check.

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "glmmvb/block_arrow.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/random.hpp"

namespace oracle {

using glmmvb::Index;
using glmmvb::Matrix;
using glmmvb::Vector;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Dense (p + m u) square matrix represented by an arrow.
inline Matrix dense(const glmmvb::BlockArrowMatrix& a) {
  const Index p = a.p();
  const Index u = a.u();
  Matrix out = Matrix::Zero(a.dim(), a.dim());
  out.topLeftCorner(p, p) = a.corner();
  for (std::size_t i = 0; i < a.blocks(); ++i) {
    const Index off = p + static_cast<Index>(i) * u;
    out.block(0, off, p, u) = a.border(i);
    out.block(off, 0, u, p) = a.border(i).transpose();
    out.block(off, off, u, u) = a.diag(i);
  }
  return out;
}

inline Matrix random_matrix(Index r, Index c, glmmvb::Philox& rng) {
  Matrix a(r, c);
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < r; ++i) {
      a(i, j) = glmmvb::standard_normal(rng);
    }
  }
  return a;
}

/// A A' / n + ridge I: well conditioned SPD.
inline Matrix random_spd(Index n, glmmvb::Philox& rng, double ridge = 0.5) {
  const Matrix a = random_matrix(n, n + 2, rng);
  Matrix out = a * a.transpose() / static_cast<double>(n) + ridge * Matrix::Identity(n, n);
  return 0.5 * (out + out.transpose());
}

/// Random SPD arrow built from a dense SPD matrix masked to arrow shape plus
/// a diagonal shift that keeps it definite.
inline glmmvb::BlockArrowMatrix random_spd_arrow(Index p, Index u, std::size_t m, glmmvb::Philox& rng) {
  glmmvb::BlockArrowMatrix a(p, u, m);
  a.corner() = random_spd(p, rng) + static_cast<double>(m) * Matrix::Identity(p, p);
  for (std::size_t i = 0; i < m; ++i) {
    a.border(i) = 0.5 * random_matrix(p, u, rng);
    a.diag(i) = random_spd(u, rng) + Matrix::Identity(u, u);
  }
  return a;
}

/// Central differences of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
  Vector g(x.size());
  for (Index k = 0; k < x.size(); ++k) {
    Vector xp = x;
    Vector xm = x;
    xp(k) += h;
    xm(k) -= h;
    g(k) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

/// Central differences of a vector function: column k is d g / d x_k.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& g, const Vector& x, double h) {
  const Index n = x.size();
  Matrix jac(g(x).size(), n);
  for (Index k = 0; k < n; ++k) {
    Vector xp = x;
    Vector xm = x;
    xp(k) += h;
    xm(k) -= h;
    jac.col(k) = (g(xp) - g(xm)) / (2.0 * h);
  }
  return jac;
}

/// log p(y | beta, b) + log p(b | Q) + log p(beta) written out per
/// observation, with Q = expected_q.
inline double log_joint(const glmmvb::GlmmModel& model, const Vector& alpha, const Matrix& expected_q) {
  const Index p = model.p();
  const Index u = model.u();
  const Vector beta = alpha.head(p);
  double out = 0.0;
  for (std::size_t i = 0; i < model.m(); ++i) {
    const auto& s = model.subjects()[i];
    const Vector b = alpha.segment(p + static_cast<Index>(i) * u, u);
    for (Index j = 0; j < s.n(); ++j) {
      const double eta = s.X.row(j).dot(beta) + s.Z.row(j).dot(b) + s.offset(j);
      const double y = s.y(j);
      if (model.family() == glmmvb::Family::Bernoulli) {
        out += y * eta - std::log1p(std::exp(eta));
      } else {
        out += y * eta - std::exp(eta) - std::lgamma(y + 1.0);
      }
    }
    out += -0.5 * b.dot(expected_q * b);
  }
  const Vector d = beta - model.prior().mu_beta;
  out += -0.5 * d.dot(model.prior().sigma_beta.inverse() * d);
  return out;
}

/// Small random GLMM with responses drawn from the model itself.
inline glmmvb::GlmmModel random_model(glmmvb::Family family, std::size_t m, Index n, Index p, Index u,
                                      glmmvb::Philox& rng, double tau = 1000.0) {
  std::vector<glmmvb::Subject> subjects;
  for (std::size_t i = 0; i < m; ++i) {
    glmmvb::Subject s{"s" + std::to_string(i), Vector(n), random_matrix(n, p, rng), random_matrix(n, u, rng),
                      Vector::Zero(n)};
    s.X.col(0).setOnes();
    s.Z.col(0).setOnes();
    s.X *= 0.5;
    s.Z *= 0.5;
    for (Index j = 0; j < n; ++j) {
      const double eta = 0.3 * glmmvb::standard_normal(rng);
      if (family == glmmvb::Family::Bernoulli) {
        s.y(j) = glmmvb::uniform01(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
      } else {
        s.y(j) = static_cast<double>(glmmvb::poisson_variate(rng, std::exp(eta)));
      }
    }
    subjects.push_back(std::move(s));
  }
  return glmmvb::GlmmModel(family, p, u, std::move(subjects), glmmvb::Prior::defaults(p, u, tau));
}

/// Composite Simpson rule for integral_a^b exp(f(x)) dx, computed as
/// exp(shift) * integral exp(f - shift) to avoid underflow. n must be even.
inline double log_integral_exp(const std::function<double(double)>& f, double a, double b, int n) {
  std::vector<double> v(static_cast<std::size_t>(n + 1));
  double shift = -std::numeric_limits<double>::infinity();
  const double h = (b - a) / n;
  for (int k = 0; k <= n; ++k) {
    v[static_cast<std::size_t>(k)] = f(a + h * k);
    shift = std::max(shift, v[static_cast<std::size_t>(k)]);
  }
  double acc = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    acc += w * std::exp(v[static_cast<std::size_t>(k)] - shift);
  }
  return shift + std::log(acc * h / 3.0);
}

/// Gauss-Hermite nodes and weights for integral exp(-x^2) g(x) dx
/// (Golub-Welsch).
struct GaussHermite {
  Vector nodes;
  Vector weights;
};

inline GaussHermite gauss_hermite(int n) {
  Matrix jac = Matrix::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jac(k, k - 1) = jac(k - 1, k) = std::sqrt(k / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(jac);
  GaussHermite gh{eig.eigenvalues(), Vector(n)};
  for (int k = 0; k < n; ++k) {
    const double v0 = eig.eigenvectors()(0, k);
    gh.weights(k) = std::sqrt(std::numbers::pi) * v0 * v0;
  }
  return gh;
}

/// Wishart log density in its textbook form, with determinants from LU and
/// the multivariate gamma expanded inline.
inline double wishart_logpdf(const Matrix& x, double nu, const Matrix& s) {
  const double d = static_cast<double>(x.rows());
  double lmg = d * (d - 1.0) / 4.0 * std::log(std::numbers::pi);
  for (Index j = 0; j < x.rows(); ++j) {
    lmg += std::lgamma((nu - static_cast<double>(j)) / 2.0);
  }
  const double logdet_x = std::log(x.partialPivLu().determinant());
  const double logdet_s = std::log(s.partialPivLu().determinant());
  return 0.5 * (nu - d - 1.0) * logdet_x - 0.5 * (s.partialPivLu().solve(x)).trace() - 0.5 * nu * d * std::log(2.0) -
         0.5 * nu * logdet_s - lmg;
}

inline double gaussian_logpdf(const Vector& x, const Vector& mu, const Matrix& sigma) {
  const Vector d = x - mu;
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * std::log(sigma.partialPivLu().determinant()) -
         0.5 * d.dot(sigma.partialPivLu().solve(d));
}

}  // namespace oracle
