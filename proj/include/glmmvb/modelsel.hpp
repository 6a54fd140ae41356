#pragma once

// M-fold cross-validated log predictive density scores computed from one set
// of piece fits: for fold j, the posterior given all data except piece j is
// the recombination of the other M - 1 pieces, and the held-out piece is
// scored at the plug-in posterior means with the random effects integrated
// out by the Laplace method.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "glmmvb/dnr.hpp"
#include "glmmvb/errors.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/mfvb.hpp"
#include "glmmvb/parallel.hpp"

namespace glmmvb {

/// Column subsets of a dataset's fixed (X) and random (Z) designs. Column 0
/// of each design is the intercept and is always included.
struct CandidateModel {
  std::vector<Index> fixed_columns;
  std::vector<Index> random_columns;
  Family family = Family::Bernoulli;

  std::size_t covariate_count() const { return fixed_columns.size() + random_columns.size(); }

  void validate(const Dataset& data) const {
    auto check = [](const std::vector<Index>& cols, Index available, const char* which) {
      if (cols.empty() || cols.front() != 0) {
        throw ConfigError(std::string("CandidateModel: ") + which + " columns must start with the intercept (0)");
      }
      for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] < 0 || cols[k] >= available) {
          throw ConfigError(std::string("CandidateModel: ") + which + " column " + std::to_string(cols[k]) +
                            " out of range");
        }
        if (k > 0 && cols[k] <= cols[k - 1]) {
          throw ConfigError(std::string("CandidateModel: ") + which + " columns must be strictly increasing");
        }
      }
    };
    check(fixed_columns, data.p(), "fixed");
    check(random_columns, data.u(), "random");
  }
};

struct LpdsEntry {
  CandidateModel candidate;
  double lpds = 0.0;
  std::vector<double> per_fold;
};

struct LpdsReport {
  std::vector<LpdsEntry> per_model;
  std::size_t best_index = 0;
};

inline constexpr std::size_t kMaxCandidates = 4096;

/// All subsets of the pools added to the intercepts: fixed-pool subsets vary
/// slowest, each in binary counting order.
inline std::vector<CandidateModel> enumerate_candidates(std::span<const Index> fixed_pool,
                                                        std::span<const Index> random_pool, Family family) {
  const std::size_t bits = fixed_pool.size() + random_pool.size();
  if (bits >= 63 || (std::size_t{1} << bits) > kMaxCandidates) {
    throw ConfigError("enumerate_candidates: 2^" + std::to_string(bits) + " candidates exceeds the limit of " +
                      std::to_string(kMaxCandidates));
  }
  auto subset = [](std::span<const Index> pool, std::size_t mask) {
    std::vector<Index> cols{0};
    for (std::size_t k = 0; k < pool.size(); ++k) {
      if ((mask >> k) & 1u) {
        cols.push_back(pool[k]);
      }
    }
    std::sort(cols.begin(), cols.end());
    return cols;
  };
  for (const Index c : fixed_pool) {
    if (c == 0) {
      throw ConfigError("enumerate_candidates: pools must not contain the intercept");
    }
  }
  for (const Index c : random_pool) {
    if (c == 0) {
      throw ConfigError("enumerate_candidates: pools must not contain the intercept");
    }
  }
  std::vector<CandidateModel> out;
  for (std::size_t f = 0; f < (std::size_t{1} << fixed_pool.size()); ++f) {
    for (std::size_t r = 0; r < (std::size_t{1} << random_pool.size()); ++r) {
      out.push_back({subset(fixed_pool, f), subset(random_pool, r), family});
    }
  }
  return out;
}

/// The dataset restricted to a candidate's columns.
inline Dataset select_columns(const Dataset& data, const CandidateModel& candidate) {
  candidate.validate(data);
  Dataset out;
  out.family = candidate.family;
  out.has_offset = data.has_offset;
  for (const Index c : candidate.fixed_columns) {
    out.x_names.push_back(data.x_names[static_cast<std::size_t>(c)]);
  }
  for (const Index c : candidate.random_columns) {
    out.z_names.push_back(data.z_names[static_cast<std::size_t>(c)]);
  }
  const auto fixed = Eigen::Map<const Eigen::Matrix<Index, Eigen::Dynamic, 1>>(
      candidate.fixed_columns.data(), static_cast<Index>(candidate.fixed_columns.size()));
  const auto random = Eigen::Map<const Eigen::Matrix<Index, Eigen::Dynamic, 1>>(
      candidate.random_columns.data(), static_cast<Index>(candidate.random_columns.size()));
  out.subjects.reserve(data.subjects.size());
  for (const auto& s : data.subjects) {
    out.subjects.push_back({s.id, s.y, s.X(Eigen::all, fixed), s.Z(Eigen::all, random), s.offset});
  }
  return out;
}

/// Posterior given all pieces except `leave_out`: the other M - 1 pieces are
/// recombined, dividing out the prior M - 2 times.
inline CombinedPosterior loo_combine(std::span<const VariationalFit> fits, std::size_t leave_out,
                                     const GlmmModel& model) {
  if (fits.size() < 2) {
    throw ConfigError("loo_combine: need at least two pieces to hold one out");
  }
  if (leave_out >= fits.size()) {
    throw ConfigError("loo_combine: held-out piece " + std::to_string(leave_out) + " out of range");
  }
  std::vector<VariationalFit> kept;
  kept.reserve(fits.size() - 1);
  for (std::size_t j = 0; j < fits.size(); ++j) {
    if (j != leave_out) {
      kept.push_back(fits[j]);
    }
  }
  return recombine(std::move(kept), model);
}

/// Laplace approximation of
///   log  integral f(y_i | beta_hat, b) N(b; 0, Q_hat^-1) db
/// = h(b_hat) + (u/2) log 2 pi - (1/2) log det(-h''(b_hat)).
inline double laplace_predictive(const Subject& subject, const Vector& beta_hat, const Matrix& q_hat, Family family) {
  if (beta_hat.size() != subject.X.cols() || q_hat.rows() != subject.Z.cols() || q_hat.cols() != subject.Z.cols()) {
    throw DimensionError("laplace_predictive: dimension mismatch for subject '" + subject.id + "'");
  }
  const SubjectMode mode = find_subject_mode(family, subject, beta_hat, q_hat);
  const auto curvature = checked_llt(mode.neg_hessian, "laplace_predictive: curvature");
  const double u = static_cast<double>(q_hat.rows());
  return mode.log_integrand + 0.5 * u * std::log(2.0 * std::numbers::pi) - 0.5 * logdet(curvature);
}

struct LpdsOptions {
  unsigned jobs = 1;
  double tau = Prior::kDefaultTau;
  std::atomic<std::size_t>* fit_counter = nullptr;  ///< incremented once per piece fit, if set
};

/// Argmax of lpds; ties go to the candidate with fewer covariates, then to the
/// lower index.
inline std::size_t select_best(std::span<const LpdsEntry> entries) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < entries.size(); ++c) {
    const auto& a = entries[c];
    const auto& b = entries[best];
    if (a.lpds > b.lpds || (a.lpds == b.lpds && a.candidate.covariate_count() < b.candidate.covariate_count())) {
      best = c;
    }
  }
  return best;
}

/// Fits every candidate once per piece (candidates x M fits in total) and
/// scores each fold against the leave-one-piece-out recombination.
inline LpdsReport cross_validated_lpds(std::span<const CandidateModel> candidates, const Dataset& data,
                                       const Partition& partition, const FitConfig& config,
                                       const LpdsOptions& options = {}) {
  if (candidates.empty()) {
    throw ConfigError("cross_validated_lpds: no candidate models");
  }
  const std::size_t n_pieces = partition.pieces();
  if (n_pieces < 2) {
    throw ConfigError("cross_validated_lpds: need at least two pieces");
  }
  config.validate();

  std::vector<GlmmModel> models;
  models.reserve(candidates.size());
  for (const auto& cand : candidates) {
    models.push_back(GlmmModel::from_dataset(select_columns(data, cand), options.tau));
  }
  std::vector<std::vector<std::size_t>> members(n_pieces);
  for (std::size_t i = 0; i < data.subjects.size(); ++i) {
    members[partition.piece_of(data.subjects[i].id)].push_back(i);
  }

  std::vector<std::vector<std::optional<VariationalFit>>> fits(candidates.size(),
                                                               std::vector<std::optional<VariationalFit>>(n_pieces));
  parallel_for(candidates.size() * n_pieces, options.jobs, [&](std::size_t item) {
    const std::size_t c = item / n_pieces;
    const std::size_t j = item % n_pieces;
    try {
      FitConfig cfg = config;
      cfg.seed = piece_seed(config.seed, j);
      fits[c][j] = mfvb_fit(models[c].subset(members[j]), cfg);
      if (options.fit_counter != nullptr) {
        ++*options.fit_counter;
      }
    } catch (const Error& e) {
      throw Error("cross_validated_lpds: candidate " + std::to_string(c) + ", piece " + std::to_string(j) + ": " +
                  e.what());
    }
  });

  LpdsReport report;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    std::vector<VariationalFit> cand_fits;
    cand_fits.reserve(n_pieces);
    for (auto& f : fits[c]) {
      cand_fits.push_back(std::move(*f));
    }
    LpdsEntry entry{candidates[c], 0.0, {}};
    for (std::size_t j = 0; j < n_pieces; ++j) {
      try {
        const CombinedPosterior held = loo_combine(cand_fits, j, models[c]);
        const Vector beta_hat = held.beta.mean();
        const Matrix q_hat = held.Q.mean();
        double fold = 0.0;
        for (const std::size_t i : members[j]) {
          fold += laplace_predictive(models[c].subjects()[i], beta_hat, q_hat, models[c].family());
        }
        entry.per_fold.push_back(fold);
      } catch (const Error& e) {
        throw Error("cross_validated_lpds: candidate " + std::to_string(c) + ", fold " + std::to_string(j) + ": " +
                    e.what());
      }
    }
    double sum = 0.0;
    for (const double f : entry.per_fold) {
      sum += f;
    }
    entry.lpds = sum / static_cast<double>(n_pieces);
    report.per_model.push_back(std::move(entry));
  }
  report.best_index = select_best(report.per_model);
  return report;
}

}  // namespace glmmvb
