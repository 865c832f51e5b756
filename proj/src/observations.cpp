#include "stimfeat/observations.hpp"

#include <algorithm>
#include <string>

#include "stimfeat/error.hpp"

namespace stimfeat {

Eigen::ArrayXd ObservationSet::unit_observation_counts() const {
  Eigen::ArrayXd out(U_);
  for (int u = 0; u < U_; ++u) out(u) = static_cast<double>(by_unit_[u].size());
  return out;
}

namespace {
std::string describe(std::size_t i, const CountRecord& r) {
  return "record " + std::to_string(i) + " (t=" + std::to_string(r.t) + ", u=" + std::to_string(r.u) +
         ", n=" + std::to_string(r.n) + ")";
}
}  // namespace

ObservationSet build_observation_set(const std::vector<CountRecord>& records, const Eigen::MatrixXd& covariates,
                                     std::optional<Dims> dims) {
  if (records.empty()) throw InputError("no count records");

  int max_t = 0;
  int max_u = 0;
  for (const auto& r : records) {
    max_t = std::max(max_t, r.t);
    max_u = std::max(max_u, r.u);
  }

  int T = max_t + 1;
  int U = max_u + 1;
  const bool has_covariate_rows = covariates.rows() > 0;
  if (dims) {
    T = dims->T;
    U = dims->U;
  } else if (has_covariate_rows) {
    T = static_cast<int>(covariates.rows());
  }
  if (T <= 0 || U <= 0) throw InputError("dimensions must be positive");
  if (has_covariate_rows && covariates.rows() != T) {
    throw InputError("covariate table has " + std::to_string(covariates.rows()) + " rows, expected T=" +
                     std::to_string(T));
  }
  if (!covariates.allFinite()) throw InputError("covariate table contains non-finite values");

  ObservationSet obs;
  obs.T_ = T;
  obs.U_ = U;
  const auto M = static_cast<Eigen::Index>(records.size());
  obs.time_.resize(M);
  obs.unit_.resize(M);
  obs.count_.resize(M);
  obs.covariates_ = has_covariate_rows ? covariates : Eigen::MatrixXd(T, covariates.cols());
  obs.cell_counts_ = Eigen::ArrayXXd::Zero(T, U);
  obs.presentations_ = Eigen::ArrayXXd::Zero(T, U);
  obs.by_unit_.assign(U, {});
  obs.by_time_.assign(T, {});

  for (Eigen::Index m = 0; m < M; ++m) {
    const auto& r = records[static_cast<std::size_t>(m)];
    if (r.t < 0 || r.t >= T) throw InputError("time index out of range: " + describe(m, r));
    if (r.u < 0 || r.u >= U) throw InputError("unit index out of range: " + describe(m, r));
    if (r.n < 0) throw InputError("negative count: " + describe(m, r));
    obs.time_(m) = r.t;
    obs.unit_(m) = r.u;
    obs.count_(m) = static_cast<double>(r.n);
    obs.cell_counts_(r.t, r.u) += static_cast<double>(r.n);
    obs.presentations_(r.t, r.u) += 1.0;
    obs.by_unit_[r.u].push_back(m);
    obs.by_time_[r.t].push_back(m);
  }
  return obs;
}

}  // namespace stimfeat
