#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "stimfeat/distributions.hpp"
#include "stimfeat/forward_backward.hpp"
#include "stimfeat/gamma_updates.hpp"

namespace stimfeat {

/// Variational posterior q(z_k) of one binary feature chain, stored together
/// with the potentials (η, Ã, π̃, ν) that produced it.
struct ChainPosterior {
  /// P(z_t = 1), length T.
  Eigen::VectorXd xi;
  /// Two-slice marginals, T - 1 entries.
  std::vector<Eigen::Matrix2d> Xi;
  double logZ = 0.0;
  /// T x 2 emission log-potentials; column 0 (off) is identically 0.
  Eigen::MatrixX2d eta;
  Eigen::Matrix2d logA_tilde = Eigen::Matrix2d::Zero();
  Eigen::Vector2d logpi_tilde = Eigen::Vector2d::Zero();
  /// Semi-Markov only: D x 2 expected completed-dwell counts and the dwell
  /// log-potentials ν used in the smoothing pass.
  Eigen::MatrixX2d duration_counts;
  Eigen::MatrixX2d duration_log_potential;

  Eigen::Index length() const { return xi.size(); }
  bool semi_markov() const { return duration_counts.size() > 0; }
  /// D x 2 dwell distribution conditioned on entering each state.
  Eigen::MatrixX2d duration_stats() const;
  /// Σ_t Xi_t.
  Eigen::Matrix2d transition_counts() const;
  /// (1 - ξ_0, ξ_0).
  Eigen::Vector2d initial_marginal() const { return {1.0 - xi(0), xi(0)}; }
  /// Mean binary entropy of ξ in nats.
  double mean_entropy() const;
};

ChainPosterior smooth_markov(const Eigen::MatrixX2d& eta, const Eigen::Matrix2d& logA_tilde,
                             const Eigen::Vector2d& logpi_tilde);
ChainPosterior smooth_semi_markov(const Eigen::MatrixX2d& eta, const Eigen::Matrix2d& logA_tilde,
                                  const Eigen::Vector2d& logpi_tilde, const Eigen::MatrixX2d& duration_log_potential);

/// Log transition matrix for chains whose persistence lives entirely in the dwell law.
Eigen::Matrix2d forced_alternation_log_transition();

/// On-state emission log-potential per t:
///   Σ_u N_tu E[log λ_zuk] - Σ_u W_tu H_u F_tuk G_tu (E[λ_zuk] - 1),
/// which is E[log p | z_tk = 1] - E[log p | z_tk = 0]; the off column is 0.
Eigen::MatrixX2d compute_emissions(const SufficientStats& stats, const Eigen::ArrayXd& H,
                                   const Eigen::ArrayXXd& F_excluding, const Eigen::ArrayXXd& G,
                                   const GammaArray& gains);

/// Dirichlet posteriors over π_k and the rows of A_k.
struct MarkovPosterior {
  DirichletPosterior initial;
  std::array<DirichletPosterior, 2> transition;
  /// Semi-Markov chains alternate states deterministically; transition rows are unused.
  bool forced_alternation = false;

  static MarkovPosterior from_prior(const Eigen::Vector2d& initial_prior, const Eigen::Matrix2d& transition_prior,
                                    bool forced_alternation);

  Eigen::Vector2d expected_log_initial() const { return initial.expected_log(); }
  Eigen::Matrix2d expected_log_transition() const;
  double neg_kl(const Eigen::Vector2d& initial_prior, const Eigen::Matrix2d& transition_prior) const;
};

/// Pseudo-counts = prior + Σ_t Xi_t (transition rows) and prior + (1 - ξ_0, ξ_0).
MarkovPosterior update_chain_priors(const ChainPosterior& chain, const Eigen::Vector2d& initial_prior,
                                    const Eigen::Matrix2d& transition_prior, bool forced_alternation);

/// E_q[LogNormal(d | m, 1/τ)] under a Normal-Gamma q; throws std::domain_error for d < 1.
double duration_pmf_expectation(const NormalGamma& ng, int d);
/// E_q[log LogNormal(d | m, 1/τ)].
double duration_expected_log_pmf(const NormalGamma& ng, int d);
/// ν(d, j) = E_q[log p(d | j)] - log Σ_{d'=1..D} E_q[p(d' | j)], D x 2.
Eigen::MatrixX2d duration_log_potentials(const std::array<NormalGamma, 2>& dwell, int D);

}  // namespace stimfeat
