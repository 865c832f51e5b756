#pragma once

// Limited-memory BFGS with Armijo backtracking. Every accepted iterate has a
// strictly lower objective than the one before it, so callers can rely on
// monotone progress.

#include <cmath>
#include <deque>
#include <vector>

#include <Eigen/Dense>

namespace stimfeat {

struct LbfgsOptions {
  int memory = 8;
  int max_iterations = 100;
  /// Stop when ||grad||_inf falls below this.
  double gradient_tolerance = 1e-8;
  double armijo = 1e-4;
  int max_backtracks = 50;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimizes `f`, called as `f(x, grad)` returning the value and filling `grad`.
/// Non-finite values are treated as +inf and rejected by the line search.
template <typename Objective>
LbfgsResult minimize_lbfgs(Objective&& f, Eigen::VectorXd x, const LbfgsOptions& opt = {}) {
  const Eigen::Index n = x.size();
  LbfgsResult result;
  Eigen::VectorXd g(n);
  double fx = f(x, g);
  result.x = x;
  result.value = fx;
  if (n == 0) {
    result.converged = true;
    return result;
  }
  if (!std::isfinite(fx) || !g.allFinite()) return result;

  std::deque<Eigen::VectorXd> s_hist;
  std::deque<Eigen::VectorXd> y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd g_new(n);

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) {
      result.converged = true;
      break;
    }
    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> a(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      a[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= a[i] * y_hist[i];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double b = rho_hist[i] * y_hist[i].dot(q);
      q += (a[i] - b) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      dir = -g;
      slope = -g.squaredNorm();
    }

    double step = s_hist.empty() ? std::min(1.0, 1.0 / g.lpNorm<Eigen::Infinity>()) : 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int bt = 0; bt < opt.max_backtracks; ++bt) {
      x_new = x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= fx + opt.armijo * step * slope && f_new < fx) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    result.iterations = iter + 1;
    if (!accepted) {
      // No decrease available along the search direction: treat as stationary.
      result.converged = g.lpNorm<Eigen::Infinity>() < std::sqrt(opt.gradient_tolerance);
      break;
    }

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    x = x_new;
    g = g_new;
    fx = f_new;
    result.x = x;
    result.value = fx;
  }
  if (g.lpNorm<Eigen::Infinity>() < opt.gradient_tolerance) result.converged = true;
  return result;
}

}  // namespace stimfeat
