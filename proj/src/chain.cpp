#include "stimfeat/chain.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "stimfeat/error.hpp"
#include "stimfeat/special.hpp"

namespace stimfeat {

Eigen::MatrixX2d ChainPosterior::duration_stats() const {
  Eigen::MatrixX2d c = duration_counts;
  for (int j = 0; j < 2; ++j) {
    const double total = c.col(j).sum();
    if (total > 0.0) c.col(j) /= total;
  }
  return c;
}

Eigen::Matrix2d ChainPosterior::transition_counts() const {
  Eigen::Matrix2d total = Eigen::Matrix2d::Zero();
  for (const auto& x : Xi) total += x;
  return total;
}

double ChainPosterior::mean_entropy() const {
  double h = 0.0;
  for (Eigen::Index t = 0; t < xi.size(); ++t) {
    const double p = xi(t);
    if (p > 0.0 && p < 1.0) h -= p * std::log(p) + (1.0 - p) * std::log1p(-p);
  }
  return xi.size() > 0 ? h / static_cast<double>(xi.size()) : 0.0;
}

namespace {
template <typename Marginals>
ChainPosterior pack(const Marginals& m, const Eigen::MatrixX2d& eta, const Eigen::Matrix2d& logA,
                    const Eigen::Vector2d& logpi) {
  ChainPosterior c;
  c.xi = m.xi.col(1);
  c.Xi = m.Xi;
  c.logZ = m.logZ;
  c.eta = eta;
  c.logA_tilde = logA;
  c.logpi_tilde = logpi;
  return c;
}
}  // namespace

ChainPosterior smooth_markov(const Eigen::MatrixX2d& eta, const Eigen::Matrix2d& logA_tilde,
                             const Eigen::Vector2d& logpi_tilde) {
  return pack(forward_backward<2>(eta, logA_tilde, logpi_tilde), eta, logA_tilde, logpi_tilde);
}

ChainPosterior smooth_semi_markov(const Eigen::MatrixX2d& eta, const Eigen::Matrix2d& logA_tilde,
                                  const Eigen::Vector2d& logpi_tilde, const Eigen::MatrixX2d& duration_log_potential) {
  const auto m = hsmm_forward_backward<2>(eta, logA_tilde, logpi_tilde, duration_log_potential);
  ChainPosterior c = pack(m, eta, logA_tilde, logpi_tilde);
  c.duration_counts = m.duration_counts;
  c.duration_log_potential = duration_log_potential;
  return c;
}

Eigen::Matrix2d forced_alternation_log_transition() {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  Eigen::Matrix2d a;
  a << kNegInf, 0.0, 0.0, kNegInf;
  return a;
}

Eigen::MatrixX2d compute_emissions(const SufficientStats& stats, const Eigen::ArrayXd& H,
                                   const Eigen::ArrayXXd& F_excluding, const Eigen::ArrayXXd& G,
                                   const GammaArray& gains) {
  const Eigen::VectorXd elog = gains.expected_log().col(0);
  const Eigen::VectorXd rate_weight = (H * (gains.mean().col(0) - 1.0)).matrix();
  Eigen::MatrixX2d eta(stats.counts.rows(), 2);
  eta.col(0).setZero();
  eta.col(1) = stats.counts.matrix() * elog - (stats.exposure * F_excluding * G).matrix() * rate_weight;
  if (!eta.allFinite()) throw NumericalError("non-finite emission potential");
  return eta;
}

MarkovPosterior MarkovPosterior::from_prior(const Eigen::Vector2d& initial_prior,
                                            const Eigen::Matrix2d& transition_prior, bool forced_alternation) {
  MarkovPosterior p;
  p.initial.counts = initial_prior;
  p.transition[0].counts = transition_prior.row(0).transpose();
  p.transition[1].counts = transition_prior.row(1).transpose();
  p.forced_alternation = forced_alternation;
  return p;
}

Eigen::Matrix2d MarkovPosterior::expected_log_transition() const {
  if (forced_alternation) return forced_alternation_log_transition();
  Eigen::Matrix2d out;
  out.row(0) = transition[0].expected_log().transpose();
  out.row(1) = transition[1].expected_log().transpose();
  return out;
}

double MarkovPosterior::neg_kl(const Eigen::Vector2d& initial_prior, const Eigen::Matrix2d& transition_prior) const {
  double total = initial.neg_kl(initial_prior);
  if (!forced_alternation) {
    total += transition[0].neg_kl(transition_prior.row(0).transpose());
    total += transition[1].neg_kl(transition_prior.row(1).transpose());
  }
  return total;
}

MarkovPosterior update_chain_priors(const ChainPosterior& chain, const Eigen::Vector2d& initial_prior,
                                    const Eigen::Matrix2d& transition_prior, bool forced_alternation) {
  MarkovPosterior p = MarkovPosterior::from_prior(initial_prior, transition_prior, forced_alternation);
  p.initial.counts += chain.initial_marginal();
  if (!forced_alternation) {
    const Eigen::Matrix2d counts = chain.transition_counts();
    p.transition[0].counts += counts.row(0).transpose();
    p.transition[1].counts += counts.row(1).transpose();
  }
  return p;
}

double duration_pmf_expectation(const NormalGamma& ng, int d) {
  if (d < 1) throw std::domain_error("dwell length must be at least 1, got " + std::to_string(d));
  const double kappa = ng.lambda / (1.0 + ng.lambda);
  const double dx = std::log(static_cast<double>(d)) - ng.mu;
  const double beta_hat = 1.0 + 0.5 * kappa * dx * dx / ng.beta;
  const double log_value = -0.5 * std::log(2.0 * std::numbers::pi) - std::log(static_cast<double>(d)) +
                           0.5 * std::log(kappa) + log_gamma(ng.alpha + 0.5) - log_gamma(ng.alpha) -
                           0.5 * std::log(ng.beta) - (ng.alpha + 0.5) * std::log(beta_hat);
  return std::exp(log_value);
}

double duration_expected_log_pmf(const NormalGamma& ng, int d) {
  if (d < 1) throw std::domain_error("dwell length must be at least 1, got " + std::to_string(d));
  const double x = std::log(static_cast<double>(d));
  return ng.expected_log_normal(x) - x;
}

Eigen::MatrixX2d duration_log_potentials(const std::array<NormalGamma, 2>& dwell, int D) {
  Eigen::MatrixX2d nu(D, 2);
  for (int j = 0; j < 2; ++j) {
    double mass = 0.0;
    for (int d = 1; d <= D; ++d) {
      mass += duration_pmf_expectation(dwell[static_cast<std::size_t>(j)], d);
      nu(d - 1, j) = duration_expected_log_pmf(dwell[static_cast<std::size_t>(j)], d);
    }
    nu.col(j).array() -= std::log(mass);
  }
  return nu;
}

}  // namespace stimfeat
