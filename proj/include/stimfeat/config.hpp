#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "stimfeat/distributions.hpp"

namespace stimfeat {

/// Lower bound used for E[c log c - log Γ(c)] wherever a gamma shape is itself uncertain
/// (population hierarchies and overdispersion shapes).
///  - kStirling: c - 1 + ½ log c. Keeps q(c) conjugate but holds only for c >= 1.
///  - kRobbins: c + ½ log c - ½ log 2π - 1/(12c). Valid for every c > 0; q(c) is
///    then found by a one-dimensional search.
enum class ShapeBound { kRobbins, kStirling };

/// Starting point for each restart's chain marginals.
///  - kUniform: ξ_tk iid Uniform(0.2, 0.8).
///  - kSpectral: chains are seeded, in order, from the leading principal components of
///    the standardized rate matrix (covariates projected out), keeping those above the
///    Marchenko-Pastur noise edge up to the widest eigengap. Those components are
///    unmixed by skewness ICA, oriented to positive skew and rank-mapped onto
///    [0.2, 0.8]. Remaining chains fall back to kUniform.
enum class ChainInit { kSpectral, kUniform };

/// Gamma-gamma population prior: sites ~ Ga(c, c d), c ~ Ga(a_c, b_c), d ~ Ga(a_d, b_d).
struct HierarchyPrior {
  double a_c = 1.0;
  double b_c = 1.0;
  double a_d = 1.0;
  double b_d = 1.0;
};

struct Priors {
  HierarchyPrior baseline{1.0, 1.0, 1.0, 1.0};
  /// Sparse: large c keeps gains near 1 unless the data say otherwise.
  HierarchyPrior feature{2.0, 0.1, 1.0, 1.0};
  /// Independent Ga(a_x, b_x) per covariate; empty vectors mean 1 for every r.
  Eigen::VectorXd covariate_a;
  Eigen::VectorXd covariate_b;
  /// Ga(a, b) prior on the per-unit overdispersion shape s_u.
  double overdispersion_a = 4.0;
  double overdispersion_b = 4.0;
  Eigen::Vector2d initial_state{1.0, 1.0};
  Eigen::Matrix2d transition = Eigen::Matrix2d::Ones();
  /// Dwell prior, shared by both states of every chain.
  NormalGamma duration{std::log(5.0), 1.0, 2.0, 2.0};

  double covariate_shape(int r) const { return covariate_a.size() > r ? covariate_a(r) : 1.0; }
  double covariate_rate(int r) const { return covariate_b.size() > r ? covariate_b(r) : 1.0; }
};

struct Convergence {
  double tolerance = 1e-4;
  int max_sweeps = 500;
  int restarts = 10;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  int K = 1;
  bool semi_markov = false;
  int D = 50;
  bool overdispersion = true;
  bool autocorrelated_noise = false;
  bool pin_initial_state = false;
  /// Use Γ(α+x)/(Γ(α)β^x) instead of (α/β)^x for covariate factors.
  bool exact_gamma_ratio = false;
  /// Evaluate the ELBO after every coordinate block and record the deltas.
  bool monitor_blocks = false;
  /// Relative scale of the multiplicative jitter on initial gamma means; 0 disables.
  double init_jitter = 0.1;
  int threads = 1;
  ShapeBound shape_bound = ShapeBound::kRobbins;
  ChainInit chain_init = ChainInit::kSpectral;
  Priors priors;
  Convergence convergence;

  /// Throws ConfigError on the first violated constraint.
  void validate() const;

  /// Initial-state pseudo-counts after applying pin_initial_state.
  Eigen::Vector2d initial_state_prior() const;
};

ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelConfig& cfg);

}  // namespace stimfeat
