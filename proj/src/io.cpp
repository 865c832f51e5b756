#include "stimfeat/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "stimfeat/error.hpp"

namespace stimfeat {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string where(const fs::path& path, std::size_t line) { return path.string() + ":" + std::to_string(line) + ": "; }

double parse_double(const std::string& s, const fs::path& path, std::size_t line) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    if (s == "inf" || s == "-inf" || s == "nan") return std::strtod(s.c_str(), nullptr);
    throw InputError(where(path, line) + "not a number: '" + s + "'");
  }
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

std::vector<std::string> numbered(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> h;
  for (Eigen::Index i = 0; i < n; ++i) h.push_back(prefix + std::to_string(i));
  return h;
}

void expect_header(const Table& t, const std::vector<std::string>& want, const fs::path& path) {
  if (t.header != want) {
    std::string w;
    for (const auto& s : want) w += (w.empty() ? "" : ",") + s;
    throw InputError(where(path, 1) + "expected header '" + w + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Table read_table(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  Table t;
  std::string line;
  std::size_t lineno = 0;
  std::vector<double> data;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (t.header.empty()) {
      t.header = split(line);
      continue;
    }
    const auto fields = split(line);
    if (fields.size() != t.header.size()) {
      throw InputError(where(path, lineno) + "expected " + std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
    }
    for (const auto& f : fields) data.push_back(parse_double(f, path, lineno));
    t.lines.push_back(lineno);
    ++rows;
  }
  if (t.header.empty()) throw InputError(path.string() + ": empty file, missing header");
  const auto cols = static_cast<Eigen::Index>(t.header.size());
  t.values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      data.data(), static_cast<Eigen::Index>(rows), cols);
  return t;
}

void write_table(const fs::path& path, const std::vector<std::string>& header, const Eigen::MatrixXd& values) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << '\n';
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) out << (c ? "," : "") << format_double(values(r, c));
    out << '\n';
  }
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<CountRecord> read_counts(const fs::path& path) {
  const Table t = read_table(path);
  expect_header(t, {"t", "u", "n"}, path);
  std::vector<CountRecord> records;
  records.reserve(static_cast<std::size_t>(t.values.rows()));
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    const double tv = t.values(r, 0), uv = t.values(r, 1), nv = t.values(r, 2);
    if (tv != std::floor(tv) || uv != std::floor(uv) || nv != std::floor(nv) || !std::isfinite(nv)) {
      throw InputError(where(path, t.lines[static_cast<std::size_t>(r)]) + "t, u and n must be integers");
    }
    records.push_back({static_cast<int>(tv), static_cast<int>(uv), static_cast<std::int64_t>(nv)});
  }
  return records;
}

void write_counts(const fs::path& path, const std::vector<CountRecord>& records) {
  auto out = open_out(path);
  out << "t,u,n\n";
  for (const auto& r : records) out << r.t << ',' << r.u << ',' << r.n << '\n';
  if (!out) throw InputError("failed writing " + path.string());
}

Eigen::MatrixXd read_covariates(const fs::path& path) {
  const Table t = read_table(path);
  expect_header(t, numbered("x", static_cast<Eigen::Index>(t.header.size())), path);
  return t.values;
}

void write_covariates(const fs::path& path, const Eigen::MatrixXd& X) { write_table(path, numbered("x", X.cols()), X); }

Eigen::MatrixXi read_binary_matrix(const fs::path& path) {
  const Table t = read_table(path);
  expect_header(t, numbered("z", static_cast<Eigen::Index>(t.header.size())), path);
  for (Eigen::Index r = 0; r < t.values.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.values.cols(); ++c) {
      const double v = t.values(r, c);
      if (v != 0.0 && v != 1.0) throw InputError(where(path, t.lines[static_cast<std::size_t>(r)]) + "entries must be 0 or 1");
    }
  }
  return t.values.cast<int>();
}

void write_truth(const fs::path& dir, const GroundTruth& truth) {
  write_table(dir / "truth_z.csv", numbered("z", truth.z.cols()), truth.z.cast<double>());
  const Eigen::Index U = truth.baseline.size();
  std::vector<std::string> header{"u", "baseline"};
  for (const auto& h : numbered("gain", truth.gains.cols())) header.push_back(h);
  for (const auto& h : numbered("covariate_gain", truth.covariate_gains.cols())) header.push_back(h);
  Eigen::MatrixXd table(U, 2 + truth.gains.cols() + truth.covariate_gains.cols());
  for (Eigen::Index u = 0; u < U; ++u) table(u, 0) = static_cast<double>(u);
  table.col(1) = truth.baseline;
  table.middleCols(2, truth.gains.cols()) = truth.gains;
  table.rightCols(truth.covariate_gains.cols()) = truth.covariate_gains;
  write_table(dir / "truth_gains.csv", header, table);
  Eigen::MatrixXd chains(static_cast<Eigen::Index>(truth.transition.size()), 7);
  for (std::size_t k = 0; k < truth.transition.size(); ++k) {
    const auto& A = truth.transition[k];
    const auto& p = truth.initial[k];
    chains.row(static_cast<Eigen::Index>(k)) << static_cast<double>(k), p(0), p(1), A(0, 0), A(0, 1), A(1, 0), A(1, 1);
  }
  write_table(dir / "truth_chains.csv", {"k", "pi0", "pi1", "a00", "a01", "a10", "a11"}, chains);
}

void write_fit(const fs::path& dir, const FitResult& fit, Eigen::Index T) {
  const VariationalState& s = fit.state;
  const Eigen::Index U = s.baseline.rows();
  const int K = s.K();

  Eigen::MatrixXd base(U, 4);
  for (Eigen::Index u = 0; u < U; ++u) base.row(u) << static_cast<double>(u), s.baseline.shape(u), s.baseline.rate(u), s.baseline.shape(u) / s.baseline.rate(u);
  write_table(dir / "baseline.csv", {"u", "shape", "rate", "mean"}, base);

  Eigen::MatrixXd gains(U * K, 5);
  for (int k = 0; k < K; ++k) {
    for (Eigen::Index u = 0; u < U; ++u) {
      gains.row(k * U + u) << static_cast<double>(u), k, s.gain.shape(u, k), s.gain.rate(u, k),
          s.gain.shape(u, k) / s.gain.rate(u, k);
    }
  }
  write_table(dir / "gains.csv", {"u", "k", "shape", "rate", "mean"}, gains);

  const GammaArray cov = s.covariate_gain();
  const Eigen::Index R = cov.cols();
  Eigen::MatrixXd covs(U * R, 6);
  for (Eigen::Index r = 0; r < R; ++r) {
    for (Eigen::Index u = 0; u < U; ++u) {
      covs.row(r * U + u) << static_cast<double>(u), static_cast<double>(r), cov.shape(u, r), cov.rate(u, r),
          s.covariate_eps(u, r), std::exp(s.covariate_eps(u, r));
    }
  }
  write_table(dir / "covariate_gains.csv", {"u", "r", "shape", "rate", "log_mean", "mean"}, covs);

  // Hierarchy rows: -1 = baseline, k = feature k.
  Eigen::MatrixXd hyper(K + 1, 5);
  auto hrow = [&](Eigen::Index i, double block, const HyperPosterior& h) {
    hyper.row(i) << block, h.c.shape, h.c.rate, h.d.shape, h.d.rate;
  };
  hrow(0, -1.0, s.baseline_hyper);
  for (int k = 0; k < K; ++k) hrow(k + 1, k, s.gain_hyper[static_cast<std::size_t>(k)]);
  write_table(dir / "hyperparameters.csv", {"block", "c_shape", "c_rate", "d_shape", "d_rate"}, hyper);

  Eigen::MatrixXd theta(s.theta.rows(), 3);
  for (Eigen::Index m = 0; m < s.theta.rows(); ++m) theta.row(m) << static_cast<double>(m), s.theta.shape(m), s.theta.rate(m);
  write_table(dir / "overdispersion.csv", {"m", "shape", "rate"}, theta);
  Eigen::MatrixXd ushape(s.unit_shape.rows(), 3);
  for (Eigen::Index u = 0; u < s.unit_shape.rows(); ++u) ushape.row(u) << static_cast<double>(u), s.unit_shape.shape(u), s.unit_shape.rate(u);
  write_table(dir / "unit_shape.csv", {"u", "shape", "rate"}, ushape);

  // The leading time column keeps the table well formed when K = 0.
  Eigen::MatrixXd xi(T, K + 1);
  xi.col(0) = Eigen::VectorXd::LinSpaced(T, 0.0, static_cast<double>(T - 1));
  if (K > 0) xi.rightCols(K) = s.xi();
  std::vector<std::string> xi_header{"t"};
  for (const auto& h : numbered("xi", K)) xi_header.push_back(h);
  write_table(dir / "xi.csv", xi_header, xi);

  Eigen::MatrixXd markov(K, 7);
  for (int k = 0; k < K; ++k) {
    const auto& m = s.markov[static_cast<std::size_t>(k)];
    markov.row(k) << k, m.initial.counts(0), m.initial.counts(1), m.transition[0].counts(0), m.transition[0].counts(1),
        m.transition[1].counts(0), m.transition[1].counts(1);
  }
  write_table(dir / "markov.csv", {"k", "pi0", "pi1", "a00", "a01", "a10", "a11"}, markov);

  if (!s.dwell.empty()) {
    Eigen::MatrixXd dwell(2 * K, 6);
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < 2; ++j) {
        const auto& ng = s.dwell[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        dwell.row(2 * k + j) << k, j, ng.mu, ng.lambda, ng.alpha, ng.beta;
      }
    }
    write_table(dir / "durations.csv", {"k", "state", "mu", "lambda", "alpha", "beta"}, dwell);
  }

  {
    auto out = open_out(dir / "elbo_trace.csv");
    std::vector<std::string> blocks;
    for (const auto& rec : fit.trace) {
      if (!rec.blocks.empty()) {
        for (const auto& b : rec.blocks) blocks.push_back(b.block);
        break;
      }
    }
    out << "restart,sweep,elbo,delta,wall_seconds";
    for (const auto& b : blocks) out << ",d_" << b;
    out << '\n';
    double previous = 0.0;
    for (const auto& rec : fit.trace) {
      const double delta = rec.sweep == 0 ? 0.0 : rec.elbo - previous;
      previous = rec.elbo;
      out << rec.restart << ',' << rec.sweep << ',' << format_double(rec.elbo) << ',' << format_double(delta) << ','
          << format_double(rec.wall_seconds);
      for (std::size_t i = 0; i < blocks.size(); ++i) {
        out << ',' << (i < rec.blocks.size() ? format_double(rec.blocks[i].delta) : "");
      }
      out << '\n';
    }
  }

  {
    auto out = open_out(dir / "restarts.csv");
    out << "restart,seed,initial_elbo,final_elbo,sweeps,converged,chosen,error\n";
    for (const auto& r : fit.restarts) {
      std::string err = r.error;
      for (auto& ch : err) {
        if (ch == ',' || ch == '\n') ch = ';';
      }
      out << r.restart << ',' << r.seed << ',' << format_double(r.initial_elbo) << ',' << format_double(r.final_elbo)
          << ',' << r.sweeps << ',' << (r.converged ? 1 : 0) << ',' << (r.restart == fit.best_restart ? 1 : 0) << ','
          << err << '\n';
    }
  }
}

VariationalState read_fit(const fs::path& dir) {
  VariationalState s;
  const Table base = read_table(dir / "baseline.csv");
  expect_header(base, {"u", "shape", "rate", "mean"}, dir / "baseline.csv");
  const Eigen::Index U = base.values.rows();
  s.baseline.shape = base.values.col(1);
  s.baseline.rate = base.values.col(2);

  const Table xi = read_table(dir / "xi.csv");
  if (xi.header.empty() || xi.header.front() != "t") throw InputError((dir / "xi.csv").string() + ": first column must be 't'");
  const auto K = static_cast<Eigen::Index>(xi.header.size()) - 1;
  for (Eigen::Index k = 0; k < K; ++k) {
    ChainPosterior c;
    c.xi = xi.values.col(k + 1);
    s.chains.push_back(std::move(c));
  }

  const Table gains = read_table(dir / "gains.csv");
  expect_header(gains, {"u", "k", "shape", "rate", "mean"}, dir / "gains.csv");
  s.gain = GammaArray(U, K, 1.0, 1.0);
  for (Eigen::Index i = 0; i < gains.values.rows(); ++i) {
    const auto u = static_cast<Eigen::Index>(gains.values(i, 0));
    const auto k = static_cast<Eigen::Index>(gains.values(i, 1));
    if (u < 0 || u >= U || k < 0 || k >= K) throw InputError(where(dir / "gains.csv", gains.lines[static_cast<std::size_t>(i)]) + "index out of range");
    s.gain.shape(u, k) = gains.values(i, 2);
    s.gain.rate(u, k) = gains.values(i, 3);
  }

  const Table cov = read_table(dir / "covariate_gains.csv");
  expect_header(cov, {"u", "r", "shape", "rate", "log_mean", "mean"}, dir / "covariate_gains.csv");
  const Eigen::Index R = cov.values.rows() == 0 ? 0 : static_cast<Eigen::Index>(cov.values.col(1).maxCoeff()) + 1;
  s.covariate_shape = Eigen::ArrayXXd::Ones(U, R);
  s.covariate_eps = Eigen::MatrixXd::Zero(U, R);
  for (Eigen::Index i = 0; i < cov.values.rows(); ++i) {
    const auto u = static_cast<Eigen::Index>(cov.values(i, 0));
    const auto r = static_cast<Eigen::Index>(cov.values(i, 1));
    if (u < 0 || u >= U || r < 0) throw InputError(where(dir / "covariate_gains.csv", cov.lines[static_cast<std::size_t>(i)]) + "index out of range");
    s.covariate_shape(u, r) = cov.values(i, 2);
    s.covariate_eps(u, r) = cov.values(i, 4);
  }

  const Table hyper = read_table(dir / "hyperparameters.csv");
  expect_header(hyper, {"block", "c_shape", "c_rate", "d_shape", "d_rate"}, dir / "hyperparameters.csv");
  s.gain_hyper.resize(static_cast<std::size_t>(K));
  for (Eigen::Index i = 0; i < hyper.values.rows(); ++i) {
    const auto block = static_cast<Eigen::Index>(hyper.values(i, 0));
    const HyperPosterior h{{hyper.values(i, 1), hyper.values(i, 2)}, {hyper.values(i, 3), hyper.values(i, 4)}};
    if (block < 0) {
      s.baseline_hyper = h;
    } else if (block < K) {
      s.gain_hyper[static_cast<std::size_t>(block)] = h;
    }
  }
  return s;
}

std::string string_digest(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return string_digest(ss.str());
}

}  // namespace stimfeat
