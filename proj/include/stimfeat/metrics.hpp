#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "stimfeat/engine.hpp"

namespace stimfeat {

/// Î = I / sqrt(H_true H_inferred) from the plug-in joint p(i, j) = mean_t [z_t = i] q_t(j),
/// with q_t(1) = ξ_t. Zero when either marginal entropy vanishes. Throws InputError on a
/// length mismatch.
double normalized_mutual_info(const Eigen::VectorXd& xi, const Eigen::VectorXi& z_true);

/// Shannon entropy in nats of a Bernoulli(p).
double binary_entropy(double p);

struct NmiReport {
  Eigen::MatrixXd nmi;           // K_true x K
  std::vector<int> assignment;   // per true feature: inferred index, or -1 when unmatched
  std::vector<bool> matched;     // per inferred feature
  Eigen::VectorXd true_entropy;      // per true feature
  Eigen::VectorXd inferred_entropy;  // per inferred feature, of the time-averaged ξ
  double total = 0.0;
};

Eigen::MatrixXd nmi_matrix(const Eigen::MatrixXd& xi, const Eigen::MatrixXi& z_true);

/// Maximum-total injective assignment of rows to columns (or of columns to rows when
/// there are more rows). Returns the column of each row, -1 for unmatched rows.
std::vector<int> match_features(const Eigen::MatrixXd& score);

NmiReport nmi_report(const Eigen::MatrixXd& xi, const Eigen::MatrixXi& z_true);

struct UnusedRule {
  double gain_low = 0.9;
  double gain_high = 1.1;
  double min_entropy = 0.6;
};

/// Population gain mean of feature k, taken as 1 / E[d] = b_d / a_d of its hierarchy.
double population_gain_mean(const HyperPosterior& hyper);

/// Gain mean within [gain_low, gain_high] and mean ξ entropy above min_entropy.
bool is_unused_feature(const HyperPosterior& hyper, const Eigen::VectorXd& xi, const UnusedRule& rule = {});

struct RateSummary {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  /// Set when fewer than 100 draws were requested.
  bool few_draws = false;
};

/// Monte Carlo summary of Λ_tu under the variational posterior: draws λ0, λz, z_t ~ Bernoulli(ξ_t)
/// and λx, returning the mean and central 95% interval. Features listed in `exclude` are
/// left out of the product.
RateSummary predicted_rate(const VariationalState& state, const Eigen::MatrixXd& covariates, int t, int u,
                           int n_draws, std::uint64_t seed, const std::vector<int>& exclude = {});

}  // namespace stimfeat
