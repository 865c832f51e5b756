#pragma once

#include <Eigen/Dense>

namespace stimfeat {

/// Gamma(shape, rate) variational factor.
struct GammaPosterior {
  double shape = 1.0;
  double rate = 1.0;

  double mean() const { return shape / rate; }
  double expected_log() const;
  double entropy() const;
  /// E_q[log Ga(y | a, b)] for a fixed prior.
  double expected_log_prior(double a, double b) const;
  /// -KL(q || Ga(a, b)).
  double neg_kl(double a, double b) const;

  bool valid() const;
};

/// A table of independent gamma factors sharing one layout (per unit, per
/// unit and chain, ...).
struct GammaArray {
  Eigen::ArrayXXd shape;
  Eigen::ArrayXXd rate;

  GammaArray() = default;
  GammaArray(Eigen::Index rows, Eigen::Index cols, double a, double b)
      : shape(Eigen::ArrayXXd::Constant(rows, cols, a)),
        rate(Eigen::ArrayXXd::Constant(rows, cols, b)) {}

  Eigen::Index rows() const { return shape.rows(); }
  Eigen::Index cols() const { return shape.cols(); }

  Eigen::ArrayXXd mean() const { return shape / rate; }
  Eigen::ArrayXXd expected_log() const;
  Eigen::ArrayXXd entropy() const;

  GammaPosterior at(Eigen::Index i, Eigen::Index j = 0) const { return {shape(i, j), rate(i, j)}; }
  void set(Eigen::Index i, Eigen::Index j, const GammaPosterior& g) {
    shape(i, j) = g.shape;
    rate(i, j) = g.rate;
  }

  bool valid() const;
};

/// Dirichlet pseudo-counts over a categorical (one row of a transition matrix
/// or an initial-state distribution).
struct DirichletPosterior {
  Eigen::VectorXd counts;

  Eigen::VectorXd expected_log() const;
  /// -KL(q || Dir(prior)).
  double neg_kl(const Eigen::VectorXd& prior) const;
};

/// Normal-Gamma over (mean m, precision tau) of a log-normal dwell law:
/// tau ~ Ga(alpha, beta), m | tau ~ N(mu, 1 / (lambda tau)).
struct NormalGamma {
  double mu = 0.0;
  double lambda = 1.0;
  double alpha = 1.0;
  double beta = 1.0;

  double expected_precision() const { return alpha / beta; }
  double expected_log_precision() const;
  /// E_q[log N(x | m, 1/tau)].
  double expected_log_normal(double x) const;
  /// -KL(q || prior).
  double neg_kl(const NormalGamma& prior) const;

  bool valid() const;
};

}  // namespace stimfeat
