#pragma once

// Divide and recombine: fit disjoint groups of subjects independently, then
// multiply the piece posteriors of the shared parameters and divide out the
// surplus copies of the prior. Random effects live in exactly one piece, so
// their piece posteriors are final.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "glmmvb/errors.hpp"
#include "glmmvb/expfam.hpp"
#include "glmmvb/glmm.hpp"
#include "glmmvb/mfvb.hpp"
#include "glmmvb/parallel.hpp"
#include "glmmvb/random.hpp"

namespace glmmvb {

inline constexpr std::size_t kDefaultPieceSize = 200;

/// Balanced random assignment of subjects to M pieces.
class Partition {
 public:
  Partition(std::vector<std::string> ids, std::vector<std::size_t> assignment, std::size_t pieces,
            std::uint64_t seed)
      : ids_(std::move(ids)), assignment_(std::move(assignment)), pieces_(pieces), seed_(seed) {
    if (ids_.size() != assignment_.size()) {
      throw DimensionError("Partition: ids and assignment differ in length");
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (assignment_[i] >= pieces_) {
        throw InvalidInputError("Partition: piece index out of range for subject '" + ids_[i] + "'");
      }
      if (!index_.emplace(ids_[i], i).second) {
        throw InvalidInputError("Partition: duplicate subject id '" + ids_[i] + "'");
      }
    }
  }

  std::size_t pieces() const { return pieces_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<std::string>& subject_ids() const { return ids_; }
  const std::vector<std::size_t>& assignment() const { return assignment_; }

  std::size_t piece_of(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
      throw InvalidInputError("Partition: unknown subject '" + id + "'");
    }
    return assignment_[it->second];
  }

  /// Positions (in subject_ids order) of the members of `piece`, ascending.
  std::vector<std::size_t> members(std::size_t piece) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i) {
      if (assignment_[i] == piece) {
        out.push_back(i);
      }
    }
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out(pieces_, 0);
    for (const auto a : assignment_) {
      ++out[a];
    }
    return out;
  }

 private:
  std::vector<std::string> ids_;
  std::vector<std::size_t> assignment_;
  std::size_t pieces_;
  std::uint64_t seed_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// M = max(1, round(m / target)); a seeded Fisher-Yates shuffle of the
/// subjects is dealt round-robin to the pieces, so sizes differ by at most one.
inline Partition make_partition(std::span<const std::string> subject_ids,
                                std::size_t target_piece_size = kDefaultPieceSize, std::uint64_t seed = 0) {
  if (subject_ids.empty()) {
    throw EmptyDataError("make_partition: no subjects");
  }
  if (target_piece_size < 1) {
    throw ConfigError("make_partition: target piece size must be at least 1");
  }
  const std::size_t m = subject_ids.size();
  const auto rounded = std::llround(static_cast<double>(m) / static_cast<double>(target_piece_size));
  const std::size_t pieces = std::max<std::size_t>(1, static_cast<std::size_t>(rounded));

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  Philox rng(seed);
  for (std::size_t i = m - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i + 1));
    std::swap(order[i], order[j]);
  }
  std::vector<std::size_t> assignment(m);
  for (std::size_t k = 0; k < m; ++k) {
    assignment[order[k]] = k % pieces;
  }
  return Partition({subject_ids.begin(), subject_ids.end()}, std::move(assignment), pieces, seed);
}

inline std::vector<std::string> subject_ids(const GlmmModel& model) {
  std::vector<std::string> ids;
  ids.reserve(model.m());
  for (const auto& s : model.subjects()) {
    ids.push_back(s.id);
  }
  return ids;
}

/// Subject indices of `model` that belong to `piece`, in model order.
inline std::vector<std::size_t> piece_subjects(const GlmmModel& model, const Partition& partition, std::size_t piece) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.m(); ++i) {
    if (partition.piece_of(model.subjects()[i].id) == piece) {
      out.push_back(i);
    }
  }
  return out;
}

/// Seed of piece j's fit.
inline std::uint64_t piece_seed(std::uint64_t seed, std::size_t piece) { return derive_seed(seed, piece); }

/// One hybrid VB fit per piece, each seeded with piece_seed(config.seed, j).
/// The result does not depend on `jobs`.
inline std::vector<VariationalFit> fit_pieces(const GlmmModel& model, const Partition& partition,
                                              const FitConfig& config, unsigned jobs = 1) {
  config.validate();
  if (partition.subject_ids().size() != model.m()) {
    throw DimensionError("fit_pieces: partition covers " + std::to_string(partition.subject_ids().size()) +
                         " subjects, model has " + std::to_string(model.m()));
  }
  std::vector<std::vector<std::size_t>> members(partition.pieces());
  for (std::size_t i = 0; i < model.m(); ++i) {
    members[partition.piece_of(model.subjects()[i].id)].push_back(i);
  }
  std::vector<std::optional<VariationalFit>> fits(partition.pieces());
  parallel_for(partition.pieces(), jobs, [&](std::size_t j) {
    try {
      if (members[j].empty()) {
        throw EmptyDataError("piece has no subjects");
      }
      FitConfig cfg = config;
      cfg.seed = piece_seed(config.seed, j);
      fits[j] = mfvb_fit(model.subset(members[j]), cfg);
    } catch (const Error& e) {
      throw PieceError(j, e.what(), std::current_exception());
    }
  });
  std::vector<VariationalFit> out;
  out.reserve(fits.size());
  for (auto& f : fits) {
    out.push_back(std::move(*f));
  }
  return out;
}

struct CombinedPosterior {
  GaussianFactor beta;
  WishartFactor Q;
  std::vector<VariationalFit> pieces;
};

inline GaussianFactor beta_prior(const Prior& prior) { return GaussianFactor(prior.mu_beta, prior.sigma_beta); }
inline WishartFactor q_prior(const Prior& prior) { return WishartFactor(prior.nu, prior.S); }

/// Recombines beta marginals and q(Q) factors of the given pieces; the prior
/// is divided out (count - 1) times.
inline CombinedPosterior recombine(std::vector<VariationalFit> fits, const GlmmModel& model) {
  if (fits.empty()) {
    throw DimensionError("recombine: no fits");
  }
  std::vector<GaussianFactor> betas;
  std::vector<WishartFactor> qs;
  for (std::size_t j = 0; j < fits.size(); ++j) {
    if (fits[j].beta_marginal.dim() != model.p() || fits[j].q_Q.dim() != model.u()) {
      throw DimensionError("recombine: fit " + std::to_string(j) + " does not match the model's (p, u)");
    }
    betas.push_back(fits[j].beta_marginal);
    qs.push_back(fits[j].q_Q);
  }
  GaussianFactor beta = combine_gaussians(betas, beta_prior(model.prior()));
  WishartFactor q = combine_wisharts(qs, q_prior(model.prior()));
  return CombinedPosterior{std::move(beta), std::move(q), std::move(fits)};
}

}  // namespace glmmvb
