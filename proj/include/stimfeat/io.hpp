#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stimfeat/engine.hpp"
#include "stimfeat/observations.hpp"
#include "stimfeat/synthetic.hpp"

namespace stimfeat {

namespace fs = std::filesystem;

/// Parsed numeric CSV with a header row.
struct Table {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
  /// Source line of each data row.
  std::vector<std::size_t> lines;
};

/// Reads a comma-delimited numeric table. Throws InputError carrying "path:line".
Table read_table(const fs::path& path);
void write_table(const fs::path& path, const std::vector<std::string>& header, const Eigen::MatrixXd& values);

/// Counts file, header `t,u,n`.
std::vector<CountRecord> read_counts(const fs::path& path);
void write_counts(const fs::path& path, const std::vector<CountRecord>& records);

/// Covariates file, header `x0..x{R-1}`, one row per stimulus time.
Eigen::MatrixXd read_covariates(const fs::path& path);
void write_covariates(const fs::path& path, const Eigen::MatrixXd& X);

/// T x K 0/1 table, header `z0..z{K-1}`.
Eigen::MatrixXi read_binary_matrix(const fs::path& path);
void write_truth(const fs::path& dir, const GroundTruth& truth);

/// Fit artifacts: posterior tables, ξ (T rows), ELBO trace and restart summary.
void write_fit(const fs::path& dir, const FitResult& fit, Eigen::Index T);
/// Reads back what the metrics need. Chains carry ξ only.
VariationalState read_fit(const fs::path& dir);

/// 64-bit FNV-1a of the file bytes as 16 hex digits.
std::string file_digest(const fs::path& path);
std::string string_digest(const std::string& s);

/// Shortest round-trip decimal text for a double.
std::string format_double(double v);

}  // namespace stimfeat
