#include "stimfeat/distributions.hpp"

#include <cmath>
#include <numbers>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "stimfeat/special.hpp"

namespace stimfeat {

double digamma(double x) { return boost::math::digamma(x); }
double trigamma(double x) { return boost::math::trigamma(x); }
double log_gamma(double x) { return boost::math::lgamma(x); }

double GammaPosterior::expected_log() const { return digamma(shape) - std::log(rate); }

double GammaPosterior::entropy() const {
  return shape - std::log(rate) + log_gamma(shape) + (1.0 - shape) * digamma(shape);
}

double GammaPosterior::expected_log_prior(double a, double b) const {
  return a * std::log(b) - log_gamma(a) + (a - 1.0) * expected_log() - b * mean();
}

double GammaPosterior::neg_kl(double a, double b) const { return expected_log_prior(a, b) + entropy(); }

bool GammaPosterior::valid() const {
  return std::isfinite(shape) && std::isfinite(rate) && shape > 0.0 && rate > 0.0;
}

Eigen::ArrayXXd GammaArray::expected_log() const { return stimfeat::digamma(shape) - rate.log(); }

Eigen::ArrayXXd GammaArray::entropy() const {
  return shape - rate.log() + stimfeat::log_gamma(shape) + (1.0 - shape) * stimfeat::digamma(shape);
}

bool GammaArray::valid() const {
  return shape.allFinite() && rate.allFinite() && (shape > 0.0).all() && (rate > 0.0).all();
}

Eigen::VectorXd DirichletPosterior::expected_log() const {
  const double total = digamma(counts.sum());
  return counts.unaryExpr([total](double c) { return digamma(c) - total; });
}

namespace {
double log_beta(const Eigen::VectorXd& a) { return stimfeat::log_gamma(a.array()).sum() - log_gamma(a.sum()); }
}  // namespace

double DirichletPosterior::neg_kl(const Eigen::VectorXd& prior) const {
  // E_q log p - E_q log q
  return log_beta(counts) - log_beta(prior) + (prior - counts).dot(expected_log());
}

double NormalGamma::expected_log_precision() const { return digamma(alpha) - std::log(beta); }

double NormalGamma::expected_log_normal(double x) const {
  const double dx = x - mu;
  return -0.5 * std::log(2.0 * std::numbers::pi) + 0.5 * expected_log_precision() -
         0.5 * (expected_precision() * dx * dx + 1.0 / lambda);
}

namespace {
// E_q[log NG(m, tau | p)] where the expectation is over q.
double expected_log_ng(const NormalGamma& q, const NormalGamma& p) {
  const double elog_tau = q.expected_log_precision();
  const double e_tau = q.expected_precision();
  const double dm = q.mu - p.mu;
  return p.alpha * std::log(p.beta) - log_gamma(p.alpha) + (p.alpha - 0.5) * elog_tau - p.beta * e_tau +
         0.5 * std::log(p.lambda) - 0.5 * std::log(2.0 * std::numbers::pi) -
         0.5 * p.lambda * (e_tau * dm * dm + 1.0 / q.lambda);
}
}  // namespace

double NormalGamma::neg_kl(const NormalGamma& prior) const {
  return expected_log_ng(*this, prior) - expected_log_ng(*this, *this);
}

bool NormalGamma::valid() const {
  return std::isfinite(mu) && std::isfinite(lambda) && std::isfinite(alpha) && std::isfinite(beta) &&
         lambda > 0.0 && alpha > 0.0 && beta > 0.0;
}

}  // namespace stimfeat
