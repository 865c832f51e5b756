#pragma once

// Blocks without closed-form updates: covariate gain rates and the
// Normal-Gamma dwell posteriors of semi-Markov chains.

#include <array>

#include <Eigen/Dense>

#include "stimfeat/config.hpp"
#include "stimfeat/distributions.hpp"
#include "stimfeat/lbfgs.hpp"
#include "stimfeat/observations.hpp"

namespace stimfeat {

/// Covariate gains q(λ_xur) = Ga(α_ur, α_ur e^{-ε_ur}), so E[λ_xur] = e^{ε_ur}.
/// The ε-dependent part of the ELBO is
///   Σ_ur [α_ur ε_ur - b_r e^{ε_ur}] - Σ_tu w_tu exp(Σ_r ε_ur x_tr)
/// with w_tu = W_tu H_u F_tu (times the exact-Γ correction when enabled).
struct CovariateProblem {
  Eigen::MatrixXd X;          // T x R
  Eigen::ArrayXXd weights;    // T x U
  Eigen::ArrayXXd shape;      // U x R, α
  Eigen::VectorXd prior_rate; // R, b
};

/// α_ur = a_r + Σ_t N_tu x_tr.
Eigen::ArrayXXd covariate_shape_update(const ObservationSet& obs, const Priors& priors);

/// Value of the ε objective over the full U x R table; fills `grad` (U x R) when non-null.
double covariate_objective(const CovariateProblem& p, const Eigen::MatrixXd& eps, Eigen::MatrixXd* grad = nullptr);
/// The same objective restricted to unit u (the problem separates across units).
double covariate_unit_objective(const CovariateProblem& p, Eigen::Index u, const Eigen::VectorXd& eps,
                                Eigen::VectorXd* grad = nullptr);

struct CovariateUpdate {
  GammaArray posterior;   // U x R
  Eigen::MatrixXd eps;    // U x R
  int unconverged_units = 0;
};

/// Maximizes each unit's block jointly over r, starting from ε = 0 (β = α). A unit
/// keeps `eps_previous` when the optimizer's point scores lower.
CovariateUpdate update_covariate_rates(const CovariateProblem& p, const Eigen::MatrixXd& eps_previous,
                                       const LbfgsOptions& opt = {});

/// Dwell block of one chain. `counts` is D x 2 expected completed dwells.
struct DurationProblem {
  Eigen::MatrixX2d counts;
  NormalGamma prior;
};

/// Σ_dj C(d,j) [E log p(d|j) - log Σ_d' E p(d'|j)] - Σ_j KL(q_j || prior).
double duration_objective(const DurationProblem& p, const std::array<NormalGamma, 2>& dwell);

/// Packs (μ, log λ, log α, log β) for both states into 8 numbers.
Eigen::VectorXd pack_duration(const std::array<NormalGamma, 2>& dwell);
std::array<NormalGamma, 2> unpack_duration(const Eigen::VectorXd& params);

/// Objective on packed parameters with its analytic gradient.
double duration_objective_packed(const DurationProblem& p, const Eigen::VectorXd& params,
                                 Eigen::VectorXd* grad = nullptr);

/// Quasi-Newton ascent on the 8 packed parameters from `current`; returns the
/// prior when the chain has no completed dwells.
std::array<NormalGamma, 2> update_duration_hyperparams(const DurationProblem& p,
                                                       const std::array<NormalGamma, 2>& current,
                                                       const LbfgsOptions& opt = {});

}  // namespace stimfeat
