#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace stimfeat {

double digamma(double x);
double trigamma(double x);
double log_gamma(double x);

template <typename Derived>
auto digamma(const Eigen::ArrayBase<Derived>& a) {
  return a.unaryExpr([](double v) { return digamma(v); });
}

template <typename Derived>
auto log_gamma(const Eigen::ArrayBase<Derived>& a) {
  return a.unaryExpr([](double v) { return log_gamma(v); });
}

/// log(sum(exp(v))) over a dense expression; returns -inf for an all -inf input.
template <typename Derived>
double log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  const double m = v.maxCoeff();
  if (!(m > -std::numeric_limits<double>::infinity())) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

}  // namespace stimfeat
