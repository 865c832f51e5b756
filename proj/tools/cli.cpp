#include "cli.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "stimfeat/config.hpp"
#include "stimfeat/engine.hpp"
#include "stimfeat/error.hpp"
#include "stimfeat/io.hpp"
#include "stimfeat/metrics.hpp"
#include "stimfeat/synthetic.hpp"

namespace stimfeat::cli {

namespace {

using nlohmann::json;

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir.string());
}

int default_threads() {
  if (const char* env = std::getenv("STIMFEAT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("STIMFEAT_THREADS must be a positive integer, got '") + env + "'");
  }
  return 0;
}

struct Manifest {
  std::string command;
  json config;
  json seeds = json::array();
  json inputs = json::object();
  json outputs = json::object();
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void input(const std::string& role, const fs::path& p) {
    inputs[role] = {{"path", p.string()}, {"fnv1a64", file_digest(p)}};
  }
  void output(const std::string& role, const fs::path& p) {
    outputs[role] = {{"path", p.string()}, {"fnv1a64", file_digest(p)}};
  }
  void write(const fs::path& path) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json(path, {{"command", command},
                      {"config", config},
                      {"config_hash", string_digest(config.dump())},
                      {"seeds", seeds},
                      {"inputs", inputs},
                      {"outputs", outputs},
                      {"wall_seconds", wall},
                      {"version", STIMFEAT_VERSION}});
  }
};

/// A path to a manifest written by `generate` stands in for the file it lists under `role`.
fs::path resolve(const fs::path& p, const std::string& role, bool required = true) {
  if (p.extension() != ".json") return p;
  const json m = read_json(p);
  if (m.contains("outputs") && m["outputs"].contains(role)) {
    const fs::path listed = m["outputs"][role]["path"].get<std::string>();
    return listed.is_absolute() ? listed : p.parent_path() / listed.filename();
  }
  if (required) throw InputError(p.string() + ": manifest lists no '" + role + "' output");
  return {};
}

struct GenerateArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  Manifest m;
  m.command = "generate";
  m.input("config", a.config);
  const GeneratorConfig cfg = generator_config_from_json(read_json(a.config));
  m.config = to_json(cfg);
  m.seeds.push_back(a.seed);
  const SyntheticData data = generate(cfg, a.seed);
  const fs::path dir = a.out;
  make_dir(dir);
  write_counts(dir / "counts.csv", data.records);
  m.output("counts", dir / "counts.csv");
  if (cfg.R > 0) {
    write_covariates(dir / "covariates.csv", data.truth.covariates);
    m.output("covariates", dir / "covariates.csv");
  }
  write_truth(dir, data.truth);
  m.output("truth_z", dir / "truth_z.csv");
  m.output("truth_gains", dir / "truth_gains.csv");
  m.output("truth_chains", dir / "truth_chains.csv");
  m.write(dir / "manifest.json");
  out << "wrote " << data.records.size() << " count records (U=" << cfg.U << ", T=" << cfg.T << ", K=" << cfg.K
      << ", R=" << cfg.R << ") to " << dir.string() << '\n';
  return kOk;
}

struct FitArgs {
  std::string data;
  std::string covariates;
  std::string config;
  std::string out;
  std::optional<int> restarts;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
};

int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  Manifest m;
  m.command = "fit";
  ModelConfig cfg = model_config_from_json(read_json(a.config));
  m.input("config", a.config);
  if (a.restarts) cfg.convergence.restarts = *a.restarts;
  if (a.seed) cfg.convergence.seed = *a.seed;
  if (a.threads) {
    cfg.threads = *a.threads;
  } else if (const int env = default_threads(); env > 0) {
    cfg.threads = env;
  }
  cfg.validate();

  const fs::path counts_path = resolve(a.data, "counts");
  fs::path cov_path = a.covariates;
  if (cov_path.empty() && fs::path(a.data).extension() == ".json") cov_path = resolve(a.data, "covariates", false);
  m.input("counts", counts_path);
  const auto records = read_counts(counts_path);
  Eigen::MatrixXd X;
  if (!cov_path.empty()) {
    m.input("covariates", cov_path);
    X = read_covariates(cov_path);
  }
  const ObservationSet obs = build_observation_set(records, X);
  m.config = to_json(cfg);

  const FitResult result = fit(obs, cfg);
  for (const auto& r : result.restarts) m.seeds.push_back(r.seed);

  const fs::path dir = a.out;
  make_dir(dir);
  write_fit(dir, result, obs.T());
  for (const char* name : {"baseline", "gains", "covariate_gains", "hyperparameters", "overdispersion", "unit_shape",
                           "xi", "markov", "elbo_trace", "restarts"}) {
    m.output(name, dir / (std::string(name) + ".csv"));
  }
  if (cfg.semi_markov) m.output("durations", dir / "durations.csv");
  m.write(dir / "manifest.json");

  for (const auto& r : result.restarts) {
    if (!r.error.empty()) err << "restart " << r.restart << " failed: " << r.error << '\n';
  }
  out << "best restart " << result.best_restart << " of " << result.restarts.size() << ", ELBO "
      << format_double(result.final_elbo()) << " after " << result.restarts[static_cast<std::size_t>(result.best_restart)].sweeps
      << " sweeps\n";
  if (!result.converged()) {
    err << "warning: best restart reached max_sweeps=" << cfg.convergence.max_sweeps << " without converging\n";
    return kNotConverged;
  }
  return kOk;
}

struct EvaluateArgs {
  std::string fit;
  std::string truth;
  std::string covariates;
  std::string out;
  int rate_draws = 0;
  int rate_time = 0;
  std::uint64_t seed = 0;
};

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = a.fit;
  if (!fs::is_directory(dir)) throw InputError("fit directory not found: " + dir.string());
  const VariationalState state = read_fit(dir);
  const int K = state.K();
  json report = {{"K", K}};

  json unused = json::array();
  json gain_means = json::array();
  json entropies = json::array();
  for (int k = 0; k < K; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Eigen::VectorXd& xi = state.chains[ks].xi;
    double h = 0.0;
    for (Eigen::Index t = 0; t < xi.size(); ++t) h += binary_entropy(xi(t));
    gain_means.push_back(population_gain_mean(state.gain_hyper[ks]));
    entropies.push_back(xi.size() ? h / static_cast<double>(xi.size()) : 0.0);
    unused.push_back(is_unused_feature(state.gain_hyper[ks], xi));
  }
  report["unused"] = unused;
  report["population_gain_mean"] = gain_means;
  report["mean_xi_entropy"] = entropies;

  if (!a.truth.empty()) {
    const fs::path truth_path = resolve(a.truth, "truth_z");
    if (!fs::exists(truth_path)) throw InputError("truth file not found: " + truth_path.string());
    const Eigen::MatrixXi z = read_binary_matrix(truth_path);
    const Eigen::MatrixXd xi = state.xi();
    if (z.rows() != xi.rows()) {
      throw InputError("truth has " + std::to_string(z.rows()) + " rows but the fit has T=" + std::to_string(xi.rows()));
    }
    const NmiReport r = nmi_report(xi, z);
    json matrix = json::array();
    for (Eigen::Index i = 0; i < r.nmi.rows(); ++i) matrix.push_back(to_std(r.nmi.row(i).transpose()));
    json matched_nmi = json::array();
    json unmatched_true = json::array();
    for (std::size_t i = 0; i < r.assignment.size(); ++i) {
      const int j = r.assignment[i];
      if (j < 0) {
        unmatched_true.push_back(i);
        matched_nmi.push_back(nullptr);
      } else {
        matched_nmi.push_back(r.nmi(static_cast<Eigen::Index>(i), j));
      }
    }
    report["K_true"] = z.cols();
    report["nmi"] = matrix;
    report["assignment"] = r.assignment;
    report["matched_nmi"] = matched_nmi;
    report["unmatched_true"] = unmatched_true;
    report["matched_inferred"] = r.matched;
    report["true_entropy"] = to_std(r.true_entropy);
    report["inferred_entropy"] = to_std(r.inferred_entropy);
    report["total_nmi"] = r.total;
  }

  if (a.rate_draws > 0) {
    Eigen::MatrixXd X;
    fs::path cov = a.covariates;
    if (cov.empty() && fs::exists(dir / "manifest.json")) {
      const json m = read_json(dir / "manifest.json");
      if (m["inputs"].contains("covariates")) cov = m["inputs"]["covariates"]["path"].get<std::string>();
    }
    if (!cov.empty()) X = read_covariates(cov);
    const Eigen::Index T = read_table(dir / "xi.csv").values.rows();
    if (X.cols() != state.covariate_shape.cols()) {
      if (state.covariate_shape.cols() > 0) throw InputError("covariates are required for rate summaries of this fit");
      X = Eigen::MatrixXd::Zero(T, 0);
    }
    if (a.rate_time < 0 || a.rate_time >= T) throw InputError("--rate-time out of range");
    if (a.rate_draws < 100) err << "warning: fewer than 100 draws; interval estimates will be coarse\n";
    json rates = json::array();
    for (Eigen::Index u = 0; u < state.baseline.rows(); ++u) {
      const RateSummary s =
          predicted_rate(state, X, a.rate_time, static_cast<int>(u), a.rate_draws, a.seed + static_cast<std::uint64_t>(u));
      rates.push_back({{"u", u}, {"t", a.rate_time}, {"mean", s.mean}, {"lower", s.lower}, {"upper", s.upper}});
    }
    report["rates"] = rates;
  }

  write_json(a.out, report);
  out << "wrote metrics for K=" << K << " to " << a.out << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational inference for stimulus-locked latent features in population spike counts", "stimfeat"};
  app.require_subcommand(1);
  app.set_version_flag("--version", STIMFEAT_VERSION);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Sample a synthetic dataset with ground truth");
  g->add_option("--config", gen.config, "Generator config (JSON)")->required();
  g->add_option("--seed", gen.seed, "RNG seed");
  g->add_option("--out", gen.out, "Output directory")->required();

  FitArgs fa;
  auto* f = app.add_subcommand("fit", "Fit the model by coordinate-ascent variational inference");
  f->add_option("--data", fa.data, "Counts CSV (t,u,n) or a generate manifest")->required();
  f->add_option("--covariates", fa.covariates, "Covariates CSV (x0..)");
  f->add_option("--config", fa.config, "Model config (JSON)")->required();
  f->add_option("--out", fa.out, "Output directory")->required();
  f->add_option("--restarts", fa.restarts, "Number of random restarts")->check(CLI::PositiveNumber);
  f->add_option("--threads", fa.threads, "Restarts run in parallel (default: STIMFEAT_THREADS or config)")
      ->check(CLI::PositiveNumber);
  f->add_option("--seed", fa.seed, "Base seed for restarts");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Score a fit against ground truth");
  e->add_option("--fit", ev.fit, "Fit output directory")->required();
  e->add_option("--truth", ev.truth, "Ground-truth z CSV or a generate manifest");
  e->add_option("--covariates", ev.covariates, "Covariates CSV for rate summaries");
  e->add_option("--out", ev.out, "Metrics JSON path")->required();
  e->add_option("--rate-draws", ev.rate_draws, "Posterior draws per unit for rate summaries (0 = skip)");
  e->add_option("--rate-time", ev.rate_time, "Stimulus time for rate summaries");
  e->add_option("--seed", ev.seed, "RNG seed for rate draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << STIMFEAT_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n";
    const CLI::App* active = &app;
    for (auto* sub : app.get_subcommands()) active = sub;
    err << active->help();
    return kInputError;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, out);
    if (f->parsed()) return cmd_fit(fa, out, err);
    if (e->parsed()) return cmd_evaluate(ev, out, err);
  } catch (const InputError& ex) {
    err << "input error: " << ex.what() << '\n';
    return kInputError;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << '\n';
    return kInputError;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kFailure;
  }
  return kInputError;
}

}  // namespace stimfeat::cli
