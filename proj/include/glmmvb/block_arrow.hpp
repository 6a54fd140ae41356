#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "glmmvb/errors.hpp"
#include "glmmvb/linalg.hpp"
#include "glmmvb/random.hpp"

namespace glmmvb {

class ArrowCholesky;

/// Symmetric matrix
///
///     [ A    B_1  B_2 ... B_m ]
///     [ B_1' D_1              ]
///     [ B_2'      D_2         ]
///     [ ...            ...    ]
///     [ B_m'              D_m ]
///
/// with a dense p x p corner A, p x u border blocks B_i and u x u diagonal
/// blocks D_i. This is the shape of the joint (fixed effects, random effects)
/// precision in a GLMM with subject-level random effects. Only the blocks are
/// stored; nothing in the library forms the dense (p + m u)^2 matrix.
class BlockArrowMatrix {
 public:
  using Factor = ArrowCholesky;

  BlockArrowMatrix() = default;

  /// All-zero matrix with the given block structure.
  BlockArrowMatrix(Index p, Index u, std::size_t m)
      : p_(p),
        u_(u),
        corner_(Matrix::Zero(p, p)),
        border_(m, Matrix::Zero(p, u)),
        diag_(m, Matrix::Zero(u, u)) {}

  BlockArrowMatrix(Matrix corner, std::vector<Matrix> border, std::vector<Matrix> diag)
      : p_(corner.rows()), u_(diag.empty() ? 0 : diag.front().rows()),
        corner_(std::move(corner)), border_(std::move(border)), diag_(std::move(diag)) {
    if (corner_.cols() != p_ || border_.size() != diag_.size()) {
      throw DimensionError("BlockArrowMatrix: inconsistent block structure");
    }
    for (std::size_t i = 0; i < diag_.size(); ++i) {
      if (diag_[i].rows() != u_ || diag_[i].cols() != u_ || border_[i].rows() != p_ ||
          border_[i].cols() != u_) {
        throw DimensionError("BlockArrowMatrix: block " + std::to_string(i) + " has wrong shape");
      }
    }
  }

  static BlockArrowMatrix identity(Index p, Index u, std::size_t m) {
    BlockArrowMatrix out(p, u, m);
    out.corner_.setIdentity();
    for (auto& d : out.diag_) {
      d.setIdentity();
    }
    return out;
  }

  Index p() const { return p_; }
  Index u() const { return u_; }
  std::size_t blocks() const { return diag_.size(); }
  Index dim() const { return p_ + static_cast<Index>(diag_.size()) * u_; }

  const Matrix& corner() const { return corner_; }
  Matrix& corner() { return corner_; }
  const Matrix& border(std::size_t i) const { return border_[i]; }
  Matrix& border(std::size_t i) { return border_[i]; }
  const Matrix& diag(std::size_t i) const { return diag_[i]; }
  Matrix& diag(std::size_t i) { return diag_[i]; }

  bool same_shape(const BlockArrowMatrix& other) const {
    return p_ == other.p_ && u_ == other.u_ && blocks() == other.blocks();
  }

  BlockArrowMatrix zeros_like() const { return BlockArrowMatrix(p_, u_, blocks()); }

  double asymmetry() const {
    double worst = glmmvb::asymmetry(corner_);
    for (const auto& d : diag_) {
      worst = std::max(worst, glmmvb::asymmetry(d));
    }
    return worst;
  }

  /// this <- self_weight * this + other_weight * other
  void blend(double self_weight, const BlockArrowMatrix& other, double other_weight) {
    if (!same_shape(other)) {
      throw DimensionError("BlockArrowMatrix::blend: block structure mismatch");
    }
    corner_ = self_weight * corner_ + other_weight * other.corner_;
    for (std::size_t i = 0; i < blocks(); ++i) {
      border_[i] = self_weight * border_[i] + other_weight * other.border_[i];
      diag_[i] = self_weight * diag_[i] + other_weight * other.diag_[i];
    }
  }

  /// y = H x without densifying.
  Vector multiply(const Vector& x) const {
    if (x.size() != dim()) {
      throw DimensionError("BlockArrowMatrix::multiply: vector length mismatch");
    }
    Vector y(dim());
    y.head(p_) = corner_ * x.head(p_);
    for (std::size_t i = 0; i < blocks(); ++i) {
      const Index off = p_ + static_cast<Index>(i) * u_;
      y.head(p_) += border_[i] * x.segment(off, u_);
      y.segment(off, u_) = border_[i].transpose() * x.head(p_) + diag_[i] * x.segment(off, u_);
    }
    return y;
  }

  /// Diagonal of the matrix (not of its inverse).
  Vector diagonal() const {
    Vector out(dim());
    out.head(p_) = corner_.diagonal();
    for (std::size_t i = 0; i < blocks(); ++i) {
      out.segment(p_ + static_cast<Index>(i) * u_, u_) = diag_[i].diagonal();
    }
    return out;
  }

  inline ArrowCholesky factorize() const;

 private:
  Index p_ = 0;
  Index u_ = 0;
  Matrix corner_;
  std::vector<Matrix> border_;
  std::vector<Matrix> diag_;
};

/// Blocks of the inverse of a block-arrow precision.
struct ArrowMarginals {
  Matrix corner_cov;               ///< (H^-1)_{beta beta}
  std::vector<Matrix> border_cov;  ///< (H^-1)_{beta b_i}, p x u
  std::vector<Matrix> diag_cov;    ///< (H^-1)_{b_i b_i}, u x u

  /// Diagonal of the full inverse.
  Vector diagonal() const {
    const Index p = corner_cov.rows();
    const Index u = diag_cov.empty() ? 0 : diag_cov.front().rows();
    Vector out(p + static_cast<Index>(diag_cov.size()) * u);
    out.head(p) = corner_cov.diagonal();
    for (std::size_t i = 0; i < diag_cov.size(); ++i) {
      out.segment(p + static_cast<Index>(i) * u, u) = diag_cov[i].diagonal();
    }
    return out;
  }
};

/// Factorization H = F F' with
///
///     F = [ F_c  W   ]      W = [W_1 ... W_m],  W_i = B_i L_i^{-T},
///         [ 0    L_D ]      L_D = diag(L_i),    D_i = L_i L_i',
///
/// and F_c the Cholesky factor of the Schur complement C = A - sum_i W_i W_i'.
/// The random-effect blocks are eliminated first so no fill-in occurs: cost is
/// m factorizations of u x u blocks plus one p x p factorization.
class ArrowCholesky {
 public:
  explicit ArrowCholesky(const BlockArrowMatrix& h) : p_(h.p()), u_(h.u()) {
    const std::size_t m = h.blocks();
    diag_llt_.reserve(m);
    w_.reserve(m);
    Matrix schur = h.corner();
    for (std::size_t i = 0; i < m; ++i) {
      Eigen::LLT<Matrix> llt(h.diag(i));
      if (!h.diag(i).allFinite() || llt.info() != Eigen::Success ||
          !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
        throw DecompositionError("arrow_cholesky: diagonal block " + std::to_string(i) +
                                     " is not positive definite",
                                 static_cast<std::ptrdiff_t>(i));
      }
      // W_i' = L_i^{-1} B_i'
      Matrix wt = llt.matrixL().solve(h.border(i).transpose());
      schur.noalias() -= wt.transpose() * wt;
      w_.push_back(wt.transpose());
      diag_llt_.push_back(std::move(llt));
    }
    corner_llt_.compute(schur);
    if (!schur.allFinite() || corner_llt_.info() != Eigen::Success ||
        !(corner_llt_.matrixLLT().diagonal().array() > 0.0).all()) {
      throw DecompositionError("arrow_cholesky: Schur complement of the corner block is not positive definite",
                               static_cast<std::ptrdiff_t>(m));
    }
  }

  Index dim() const { return p_ + static_cast<Index>(diag_llt_.size()) * u_; }
  std::size_t blocks() const { return diag_llt_.size(); }

  /// F^{-T} z. For standard-normal z the result has covariance H^{-1}.
  Vector draw_offset(const Vector& z) const {
    check_length(z, "draw_offset");
    Vector x(dim());
    x.head(p_) = corner_llt_.matrixU().solve(z.head(p_));
    for (std::size_t i = 0; i < blocks(); ++i) {
      const Index off = offset(i);
      Vector r = z.segment(off, u_) - w_[i].transpose() * x.head(p_);
      x.segment(off, u_) = diag_llt_[i].matrixU().solve(r);
    }
    return x;
  }

  /// H^{-1} rhs.
  Vector solve(const Vector& rhs) const {
    check_length(rhs, "solve");
    // F y = rhs
    Vector y(dim());
    Vector top = rhs.head(p_);
    for (std::size_t i = 0; i < blocks(); ++i) {
      const Index off = offset(i);
      y.segment(off, u_) = diag_llt_[i].matrixL().solve(rhs.segment(off, u_));
      top.noalias() -= w_[i] * y.segment(off, u_);
    }
    y.head(p_) = corner_llt_.matrixL().solve(top);
    return draw_offset(y);
  }

  double logdet() const {
    double out = glmmvb::logdet(corner_llt_);
    for (const auto& llt : diag_llt_) {
      out += glmmvb::logdet(llt);
    }
    return out;
  }

  /// Corner, border and diagonal blocks of H^{-1} via the Schur complement:
  ///   (H^-1)_bb = C^-1,  (H^-1)_{b b_i} = -C^-1 B_i D_i^-1,
  ///   (H^-1)_{b_i b_i} = D_i^-1 + D_i^-1 B_i' C^-1 B_i D_i^-1.
  ArrowMarginals marginals() const {
    ArrowMarginals out;
    out.corner_cov = symmetrized(corner_llt_.solve(Matrix::Identity(p_, p_)));
    out.border_cov.reserve(blocks());
    out.diag_cov.reserve(blocks());
    for (std::size_t i = 0; i < blocks(); ++i) {
      const auto& upper = diag_llt_[i].matrixU();
      // E_i = D_i^-1 B_i' = L_i^{-T} W_i'
      const Matrix e = upper.solve(w_[i].transpose());
      Matrix linv = diag_llt_[i].matrixL().solve(Matrix::Identity(u_, u_));
      const Matrix cross = -out.corner_cov * e.transpose();
      Matrix block = linv.transpose() * linv - e * cross;
      out.border_cov.push_back(cross);
      out.diag_cov.push_back(symmetrized(block));
    }
    return out;
  }

 private:
  Index offset(std::size_t i) const { return p_ + static_cast<Index>(i) * u_; }

  void check_length(const Vector& v, const char* op) const {
    if (v.size() != dim()) {
      throw DimensionError(std::string("arrow_cholesky::") + op + ": vector length mismatch");
    }
  }

  Index p_;
  Index u_;
  std::vector<Eigen::LLT<Matrix>> diag_llt_;
  std::vector<Matrix> w_;
  Eigen::LLT<Matrix> corner_llt_;
};

inline ArrowCholesky BlockArrowMatrix::factorize() const { return ArrowCholesky(*this); }

struct ArrowSolution {
  Vector solution;
  Matrix corner_cov;
  std::vector<Matrix> border_cov;
  std::vector<Matrix> diag_cov;
  double logdet = 0.0;
};

/// Solves H x = rhs and returns the blocks of H^{-1} that the arrow shape
/// makes cheap, plus log det H.
inline ArrowSolution arrow_solve_and_marginals(const BlockArrowMatrix& h, const Vector& rhs) {
  const ArrowCholesky chol(h);
  auto marg = chol.marginals();
  return ArrowSolution{chol.solve(rhs), std::move(marg.corner_cov), std::move(marg.border_cov),
                       std::move(marg.diag_cov), chol.logdet()};
}

/// mu + F^{-T} z with z standard normal, drawn in coordinate order.
inline Vector sample_gaussian_arrow(const Vector& mu, const BlockArrowMatrix& h, Philox& rng) {
  if (mu.size() != h.dim()) {
    throw DimensionError("sample_gaussian_arrow: mean length mismatch");
  }
  const ArrowCholesky chol(h);
  Vector z(mu.size());
  for (Index k = 0; k < z.size(); ++k) {
    z(k) = standard_normal(rng);
  }
  return mu + chol.draw_offset(z);
}

}  // namespace glmmvb
