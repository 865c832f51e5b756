#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stimfeat/chain.hpp"
#include "stimfeat/config.hpp"
#include "stimfeat/distributions.hpp"
#include "stimfeat/gamma_updates.hpp"
#include "stimfeat/observations.hpp"

namespace stimfeat {

/// Every variational factor of the model.
struct VariationalState {
  /// Per-observation overdispersion θ_m, or the innovations φ when noise is autocorrelated.
  GammaArray theta;
  GammaArray unit_shape;  // U x 1, s_u
  GammaArray baseline;    // U x 1, λ0u
  HyperPosterior baseline_hyper;
  GammaArray gain;        // U x K, λzuk
  std::vector<HyperPosterior> gain_hyper;
  Eigen::ArrayXXd covariate_shape;  // U x R, α_xur
  Eigen::MatrixXd covariate_eps;    // U x R, β_xur = α_xur e^{-ε_ur}
  std::vector<ChainPosterior> chains;
  std::vector<MarkovPosterior> markov;
  std::vector<std::array<NormalGamma, 2>> dwell;

  int K() const { return static_cast<int>(chains.size()); }
  GammaArray covariate_gain() const;
  /// T x K matrix of ξ.
  Eigen::MatrixXd xi() const;
};

/// Expected-rate factorization E[Λ_tu] = H_u F_tu G_tu and the overdispersion
/// statistics derived from the current state.
struct RateCache {
  Eigen::ArrayXd H;           // U
  Eigen::ArrayXXd F;          // T x U
  Eigen::ArrayXXd G;          // T x U
  Eigen::ArrayXd theta_mean;  // per observation
  Eigen::ArrayXd theta_elog;  // per observation
  Eigen::ArrayXXd exposure;   // T x U, Σ_{m in cell} E[θ_m]

  double expected_rate(int t, int u) const { return H(u) * F(t, u) * G(t, u); }
  Eigen::ArrayXXd expected_rate() const { return F.rowwise() * H.transpose() * G; }
};

/// Π_{k ≠ exclude} (1 - ξ_tk + ξ_tk E[λ_zuk]); pass exclude = -1 for the full product.
Eigen::ArrayXXd feature_product(const Eigen::MatrixXd& xi, const Eigen::ArrayXXd& gain_mean, int exclude = -1);
/// Π_{r ≠ exclude} E[λ_xur^{x_tr}] under the (α/β)^x approximation, or exactly.
Eigen::ArrayXXd covariate_product(const Eigen::MatrixXd& X, const Eigen::ArrayXXd& shape, const Eigen::MatrixXd& eps,
                                  bool exact, int exclude = -1);

RateCache build_rate_cache(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state);

/// Maximum absolute difference between `cache` and a full rebuild.
double cache_incoherence(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                         const RateCache& cache);

/// ELBO broken into blocks. Terms that depend only on the counts (log N_m!) are omitted.
struct ElboTerms {
  double poisson = 0.0;
  double overdispersion = 0.0;
  double baseline = 0.0;
  double features = 0.0;
  double covariates = 0.0;
  double markov = 0.0;
  double chains = 0.0;
  double durations = 0.0;

  double total() const {
    return poisson + overdispersion + baseline + features + covariates + markov + chains + durations;
  }
};

ElboTerms compute_elbo_terms(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                             const RateCache& cache);
/// Throws NumericalError naming the first non-finite block.
double compute_elbo(const ObservationSet& obs, const ModelConfig& cfg, const VariationalState& state,
                    const RateCache& cache);

/// Seed-determined starting point: gamma sites at their prior means times
/// exp(jitter * N(0,1)); chains per cfg.chain_init.
VariationalState init_posteriors(const ObservationSet& obs, const ModelConfig& cfg, std::uint64_t seed);

struct BlockDelta {
  std::string block;
  double delta = 0.0;
};

/// One restart's coordinate-ascent state.
class Engine {
 public:
  Engine(const ObservationSet& obs, const ModelConfig& cfg, std::uint64_t seed);
  Engine(const ObservationSet& obs, const ModelConfig& cfg, VariationalState state);

  const VariationalState& state() const { return state_; }
  const RateCache& cache() const { return cache_; }
  double elbo() const { return compute_elbo(obs_, cfg_, state_, cache_); }

  /// One full pass in the fixed block order. With `blocks` non-null the ELBO is
  /// evaluated after each block and the change recorded.
  void sweep(std::vector<BlockDelta>* blocks = nullptr);

  void update_baselines();
  void update_baseline_hyper();
  void update_gains(int k);
  void update_gain_hyper(int k);
  void update_markov(int k);
  void update_chain(int k);
  void update_dwell(int k);
  void update_covariates();
  void update_overdispersion();
  void update_unit_shape();

 private:
  void refresh_theta();
  void refresh_F();
  void refresh_G();
  SufficientStats stats() const;

  const ObservationSet& obs_;
  const ModelConfig& cfg_;
  VariationalState state_;
  RateCache cache_;
};

struct TraceRecord {
  int restart = 0;
  int sweep = 0;
  double elbo = 0.0;
  double wall_seconds = 0.0;
  std::vector<BlockDelta> blocks;
};

struct RestartDiagnostics {
  int restart = 0;
  std::uint64_t seed = 0;
  double initial_elbo = 0.0;
  double final_elbo = 0.0;
  int sweeps = 0;
  bool converged = false;
  int unconverged_covariate_solves = 0;
  std::string error;
};

struct FitResult {
  VariationalState state;
  /// Trace of every restart, in restart then sweep order.
  std::vector<TraceRecord> trace;
  std::vector<RestartDiagnostics> restarts;
  int best_restart = -1;

  bool converged() const { return restarts.at(static_cast<std::size_t>(best_restart)).converged; }
  double final_elbo() const { return restarts.at(static_cast<std::size_t>(best_restart)).final_elbo; }
  /// ELBO per sweep (sweep 0 = initialization) of the chosen restart.
  std::vector<double> elbo_trace(int restart = -1) const;
};

/// Seed for restart r derived from the base seed.
std::uint64_t restart_seed(std::uint64_t base, int restart);

/// Runs one restart to convergence or max sweeps.
RestartDiagnostics run_restart(const ObservationSet& obs, const ModelConfig& cfg, int restart,
                               VariationalState* final_state, std::vector<TraceRecord>* trace);

/// All restarts (in parallel up to cfg.threads), keeping the highest final ELBO.
/// Throws NumericalError if every restart failed.
FitResult fit(const ObservationSet& obs, const ModelConfig& cfg);

}  // namespace stimfeat
