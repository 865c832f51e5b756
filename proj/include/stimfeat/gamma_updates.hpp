#pragma once

// Gamma coordinate updates. Each returns the coordinate maximizer of the
// (shape-bounded) ELBO in its site, holding all other factors fixed.

#include <Eigen/Dense>

#include "stimfeat/config.hpp"
#include "stimfeat/distributions.hpp"
#include "stimfeat/observations.hpp"

namespace stimfeat {

/// Lower bound on E_q[c log c - log Γ(c)] for one site whose shape c has posterior q.
double shape_normalizer_bound(const GammaPosterior& q, ShapeBound bound);

/// Maximizes n * shape_normalizer_bound(q) + linear * E[c] - KL(q || Ga(a, b)) over gamma q.
/// `linear` collects Σ E[log λ - dλ + log d] over the n sites sharing c and is <= 0.
/// When `current` is given the result never scores below it.
GammaPosterior update_shape_site(double linear, double n, double a, double b, ShapeBound bound,
                                 const GammaPosterior* current = nullptr);
double shape_site_objective(const GammaPosterior& q, double linear, double n, double a, double b, ShapeBound bound);

/// Per-cell statistics shared by the rate updates.
struct SufficientStats {
  /// N_tu: summed counts per (t, u).
  Eigen::ArrayXXd counts;
  /// Σ_{m in cell} E[θ_m]: overdispersion-weighted exposure per (t, u).
  Eigen::ArrayXXd exposure;
};

/// Posterior over one population hierarchy (c, d).
struct HyperPosterior {
  GammaPosterior c;
  GammaPosterior d;

  /// Prior expectations fed to the sites: (E[c], E[c] E[d]).
  double site_shape() const { return c.mean(); }
  double site_rate() const { return c.mean() * d.mean(); }
};

/// E[θ_m] summed into cells.
Eigen::ArrayXXd cell_exposure(const ObservationSet& obs, const Eigen::ArrayXd& theta_mean);

/// θ_m ~ Ga(E[s_u] + N_m, E[s_u] + E[Λ_{t(m)u(m)}]). `expected_rate` is the T x U table H F G.
GammaArray update_overdispersion(const ObservationSet& obs, const Eigen::ArrayXd& unit_shape_mean,
                                 const Eigen::ArrayXXd& expected_rate);

/// q(s_u) from the per-unit statistics of θ. Under kStirling this is
/// Ga(a + #obs(u)/2, b + Σ_m (E[θ_m] - E[log θ_m] - 1)). Works for any per-observation
/// gamma table (θ or the autocorrelated innovations φ).
GammaArray update_unit_shape(const ObservationSet& obs, const GammaArray& theta, double a, double b,
                             ShapeBound bound = ShapeBound::kStirling, const GammaArray* current = nullptr);

/// λ0u ~ Ga(E[c0] + Σ_t N_tu, E[c0 d0] + Σ_t W_tu F_tu G_tu). Returns U x 1.
GammaArray update_baselines(const SufficientStats& stats, const Eigen::ArrayXXd& F, const Eigen::ArrayXXd& G,
                            const HyperPosterior& hyper);

/// λzuk ~ Ga(E[c] + Σ_t N_tu ξ_tk, E[c d] + H_u Σ_t ξ_tk W_tu F_tuk G_tu), F_tuk excluding chain k.
/// Returns U x 1.
GammaArray update_feature_gains(const SufficientStats& stats, const Eigen::ArrayXd& H,
                                const Eigen::ArrayXXd& F_excluding, const Eigen::ArrayXXd& G,
                                const Eigen::VectorXd& xi, const HyperPosterior& hyper);

/// c then d update from the bounded hierarchy. `sites` is a single column. Under kStirling
/// c ~ Ga(a_c + n/2, b_c + Σ E[dλ - log λ - log d - 1]); d ~ Ga(a_d + n E[c], b_d + E[c] Σ E[λ]).
/// Throws NumericalError when the c-rate increment is negative beyond round-off.
HyperPosterior update_population_hyperparams(const GammaArray& sites, const HyperPosterior& current,
                                             const HierarchyPrior& prior, ShapeBound bound = ShapeBound::kStirling);

/// ELBO contribution of one hierarchy: bounded E[log p(λ|c,d)] + H[q(λ)] plus -KL for c and d.
double hierarchy_elbo(const GammaArray& sites, const HyperPosterior& hyper, const HierarchyPrior& prior,
                      ShapeBound bound = ShapeBound::kStirling);

/// Bounded E[log p(θ_m | s_u)] + H[q(θ_m)] summed over observations, plus -KL for each s_u.
double overdispersion_elbo(const ObservationSet& obs, const GammaArray& theta, const GammaArray& unit_shape,
                           double a, double b, ShapeBound bound = ShapeBound::kStirling);

// Autocorrelated noise: θ_τu = Π_{τ' ≤ τ} φ_τ'u along each unit's record order,
// with φ ~ Ga(s_u, s_u) a priori.

/// E[θ] per observation from innovation posteriors.
Eigen::ArrayXd autocorrelated_theta_mean(const ObservationSet& obs, const GammaArray& phi);
/// E[log θ] per observation from innovation posteriors.
Eigen::ArrayXd autocorrelated_theta_expected_log(const ObservationSet& obs, const GammaArray& phi);

/// Sequential conjugate sweep over the innovations of every unit:
/// φ_ju ~ Ga(E[s_u] + Σ_{τ≥j} N_τu, E[s_u] + Σ_{τ≥j} E[Λ_τ] Π_{τ'≤τ, τ'≠j} E[φ_τ']).
GammaArray update_autocorrelated_gains(const ObservationSet& obs, const GammaArray& phi,
                                       const Eigen::ArrayXd& unit_shape_mean, const Eigen::ArrayXXd& expected_rate);

}  // namespace stimfeat
