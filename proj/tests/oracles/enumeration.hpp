#pragma once

// Brute-force smoothing by listing every state path (HMM) or every
// segmentation into dwells (HSMM). Exponential cost; for T of a handful.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

struct Enumerated {
  Eigen::MatrixXd xi;                  // T x S
  std::vector<Eigen::MatrixXd> Xi;     // T-1 of S x S
  Eigen::MatrixXd duration_counts;     // D x S (segmentations only)
  double logZ = 0.0;
};

inline double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Enumerates all S^T paths.
inline Enumerated enumerate_paths(const Eigen::MatrixXd& eta, const Eigen::MatrixXd& logA, const Eigen::VectorXd& logpi) {
  const int T = static_cast<int>(eta.rows());
  const int S = static_cast<int>(eta.cols());
  std::vector<int> z(static_cast<std::size_t>(T), 0);
  std::vector<double> scores;
  std::vector<std::vector<int>> paths;
  double logZ = -INFINITY;
  while (true) {
    double s = logpi(z[0]) + eta(0, z[0]);
    for (int t = 1; t < T; ++t) s += logA(z[t - 1], z[t]) + eta(t, z[t]);
    scores.push_back(s);
    paths.push_back(z);
    logZ = log_add(logZ, s);
    int t = 0;
    while (t < T && ++z[t] == S) z[t++] = 0;
    if (t == T) break;
  }
  Enumerated out;
  out.logZ = logZ;
  out.xi = Eigen::MatrixXd::Zero(T, S);
  out.Xi.assign(static_cast<std::size_t>(std::max(T - 1, 0)), Eigen::MatrixXd::Zero(S, S));
  for (std::size_t p = 0; p < paths.size(); ++p) {
    const double w = std::exp(scores[p] - logZ);
    for (int t = 0; t < T; ++t) out.xi(t, paths[p][t]) += w;
    for (int t = 0; t + 1 < T; ++t) out.Xi[t](paths[p][t], paths[p][t + 1]) += w;
  }
  return out;
}

/// Enumerates every sequence of (state, length <= D) dwells covering 0..T-1,
/// the first state weighted by logpi and consecutive dwells joined through logA.
/// Row d-1 of log_duration is the potential of a dwell of length d.
inline Enumerated enumerate_segmentations(const Eigen::MatrixXd& eta, const Eigen::MatrixXd& logA,
                                          const Eigen::VectorXd& logpi, const Eigen::MatrixXd& log_duration) {
  const int T = static_cast<int>(eta.rows());
  const int S = static_cast<int>(eta.cols());
  const int D = static_cast<int>(log_duration.rows());
  struct Seg {
    int state, start, length;
  };
  std::vector<std::pair<double, std::vector<Seg>>> all;
  std::vector<Seg> cur;
  std::function<void(int, double)> rec = [&](int start, double score) {
    if (start == T) {
      all.emplace_back(score, cur);
      return;
    }
    for (int j = 0; j < S; ++j) {
      const double enter = cur.empty() ? logpi(j) : logA(cur.back().state, j);
      for (int d = 1; d <= D && start + d <= T; ++d) {
        double s = score + enter + log_duration(d - 1, j);
        for (int t = start; t < start + d; ++t) s += eta(t, j);
        cur.push_back({j, start, d});
        rec(start + d, s);
        cur.pop_back();
      }
    }
  };
  rec(0, 0.0);

  Enumerated out;
  out.logZ = -INFINITY;
  for (const auto& a : all) out.logZ = log_add(out.logZ, a.first);
  out.xi = Eigen::MatrixXd::Zero(T, S);
  out.Xi.assign(static_cast<std::size_t>(std::max(T - 1, 0)), Eigen::MatrixXd::Zero(S, S));
  out.duration_counts = Eigen::MatrixXd::Zero(D, S);
  for (const auto& [score, segs] : all) {
    const double w = std::exp(score - out.logZ);
    std::vector<int> z(static_cast<std::size_t>(T));
    for (const auto& s : segs) {
      out.duration_counts(s.length - 1, s.state) += w;
      for (int t = s.start; t < s.start + s.length; ++t) z[t] = s.state;
    }
    for (int t = 0; t < T; ++t) out.xi(t, z[t]) += w;
    for (int t = 0; t + 1 < T; ++t) out.Xi[t](z[t], z[t + 1]) += w;
  }
  return out;
}

}  // namespace oracle
