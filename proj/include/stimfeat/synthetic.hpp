#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "stimfeat/observations.hpp"

namespace stimfeat {

struct GeneratorConfig {
  int U = 100;
  int T = 10000;
  int K = 3;
  int R = 3;
  /// Presentations of every (t, u) pair.
  int presentations = 1;
  double dt = 0.0333;
  double baseline_hz = 10.0;
  /// Per-unit baselines ~ Ga(shape, shape / (baseline_hz dt)); <= 0 gives every unit exactly baseline_hz.
  double baseline_shape = 4.0;
  double gain_shape = 1.0;
  double gain_rate = 1.0;
  /// Markov chains: P(off -> on) and P(on -> off) per bin.
  double p_on = 0.05;
  double p_off = 0.2;
  /// Semi-Markov chains alternate with dwell pmf ∝ LogNormal(d; mu_j, sigma_j) on 1..D.
  bool semi_markov = false;
  int D = 50;
  double dwell_mu_off = 2.5;
  double dwell_mu_on = 1.5;
  double dwell_sigma = 0.4;
  double covariate_p_on = 0.05;
  double covariate_p_off = 0.2;
  double covariate_amplitude = 1.0;
  double covariate_gain_shape = 2.0;
  double covariate_gain_rate = 2.0;
  /// θ ~ Ga(s, s); infinity means θ ≡ 1.
  double overdispersion = 4.0;

  void validate() const;
};

GeneratorConfig generator_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorConfig& cfg);

struct GroundTruth {
  Eigen::MatrixXi z;                        // T x K
  std::vector<Eigen::Matrix2d> transition;  // per chain, rows = from state
  std::vector<Eigen::Vector2d> initial;
  Eigen::VectorXd baseline;                 // U, expected count per bin
  Eigen::MatrixXd gains;                    // U x K
  Eigen::MatrixXd covariates;               // T x R
  Eigen::MatrixXd covariate_gains;          // U x R
  Eigen::VectorXd theta;                    // per observation
  /// T x U expected counts before overdispersion.
  Eigen::MatrixXd rate;
};

struct SyntheticData {
  std::vector<CountRecord> records;
  ObservationSet obs;
  GroundTruth truth;
};

/// Pure function of (cfg, seed).
SyntheticData generate(const GeneratorConfig& cfg, std::uint64_t seed);

}  // namespace stimfeat
