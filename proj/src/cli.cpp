#include "entbal/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "entbal/error.hpp"
#include "entbal/inference.hpp"
#include "entbal/io.hpp"
#include "entbal/parallel.hpp"
#include "entbal/pipeline.hpp"
#include "entbal/simulate.hpp"

namespace entbal {

namespace {

// key = value lines; '#' starts a comment. Keys are long option names.
std::map<std::string, std::string> read_config(const std::string& path) {
  std::istringstream in(read_file(path));
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Parse, path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    auto strip = [](std::string s) {
      const auto first = s.find_first_not_of(" \t\r");
      if (first == std::string::npos) return std::string();
      const auto last = s.find_last_not_of(" \t\r");
      s = s.substr(first, last - first + 1);
      if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
      return s;
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

// Fills options not given on the command line from the config file.
void apply_config(CLI::App& sub, const std::string& path) {
  for (const auto& [key, value] : read_config(path)) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw Error(ErrorKind::Parse, "unknown config key '" + key + "' for '" + sub.get_name() + "'");
    }
    if (opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

enum class Format { Json, Csv, Table };

struct EstimateArgs {
  std::string internal, summary, outcome = "y", variant = "EB", entropy1 = "exp", entropy2 = "exp";
  std::string basis, fallback = "sm", extra_calibration, out, format = "table", config;
  double threshold = 5.0;
  int b1 = 200, b2 = 200, threads = 0;
  std::uint64_t seed = 1;
  bool no_plugin = false;
};

struct SimulateArgs {
  std::string scenario = "s1", mu1 = "0", variants, out, format = "table", config;
  std::string normal_reading = "sd", gamma_reading = "shape4";
  int a = 0, reps = 2000, b1 = 200, b2 = 200, threads = 0;
  long long n = 200, n1 = 2000;
  std::uint64_t seed = 1;
  double threshold = 5.0, gamma_shift = -2.0;
  bool plugin = false, bootstrap = false, raw = false;
};

struct OracleArgs {
  long long draws = 10'000'000;
  std::uint64_t seed = 20240601;
  std::string out, config;
  int threads = 0;
};

Format parse_format(const std::string& f) {
  if (f == "json") return Format::Json;
  if (f == "csv") return Format::Csv;
  if (f == "table") return Format::Table;
  throw Error(ErrorKind::Parse, "unknown format '" + f + "' (expected json | csv | table)");
}

void add_estimate_options(CLI::App* sub, EstimateArgs& a, bool bootstrap) {
  sub->add_option("--internal", a.internal, "Internal data CSV (header row)");
  sub->add_option("--summary", a.summary, "External summary JSON");
  sub->add_option("--outcome", a.outcome, "Outcome column name")->capture_default_str();
  sub->add_option("--variant", a.variant, "EB | EBw | EBwx | EBL | EBLw | SM | WSM")->capture_default_str();
  sub->add_option("--entropy1", a.entropy1, "Stage-one entropy: exp | el | hellinger | renyi:<r>")
      ->capture_default_str();
  sub->add_option("--entropy2", a.entropy2, "Stage-two entropy")->capture_default_str();
  sub->add_option("--basis", a.basis, "Calibration basis, e.g. \"x1,x1^2,x2\" (default: the summary's basis)");
  sub->add_option("--threshold", a.threshold, "Exclusion threshold on |lambda2| for H")->capture_default_str();
  sub->add_option("--fallback", a.fallback, "On exclusion or infeasibility: sm | none")->capture_default_str();
  sub->add_option("--extra-calibration", a.extra_calibration, "EBwx covariates (default: all)");
  sub->add_option("--b1", a.b1, "Bootstrap replicates for the summary covariance")->capture_default_str();
  sub->add_option("--b2", a.b2, "Bootstrap replicates for the standard error")->capture_default_str();
  sub->add_option("--seed", a.seed, "Random seed")->capture_default_str();
  sub->add_option("--threads", a.threads, "Worker threads (0: ENTBAL_THREADS or hardware)")->capture_default_str();
  sub->add_option("--out", a.out, "Directory for report.json");
  sub->add_option("--format", a.format, "Stdout format: json | csv | table")->capture_default_str();
  sub->add_flag("--no-plugin", a.no_plugin, "Skip the plug-in variance");
  sub->add_option("--config", a.config, "key = value file with defaults for these options");
  if (bootstrap) sub->footer("Two-level bootstrap standard error and the matching 95% CI.");
}

void emit(std::ostream& out, Format format, const std::string& table, const std::string& csv,
          const nlohmann::json& j) {
  switch (format) {
    case Format::Json: out << j.dump(2) << "\n"; break;
    case Format::Csv: out << csv; break;
    case Format::Table: out << table; break;
  }
}

int cmd_estimate(const EstimateArgs& a, bool bootstrap, std::ostream& out, std::ostream& err) {
  if (a.internal.empty()) throw Error(ErrorKind::Parse, "--internal is required");
  if (a.summary.empty()) throw Error(ErrorKind::Parse, "--summary is required");
  const Format format = parse_format(a.format);
  const InternalDataset data = read_internal_csv(a.internal, a.outcome);
  const ExternalSummary summary = read_summary_json(a.summary);

  CalibrationBasis basis;
  if (!a.basis.empty()) {
    basis = CalibrationBasis::parse(a.basis, data.covariate_names);
  } else if (!summary.basis.empty()) {
    basis = CalibrationBasis::from_names(summary.basis, data.covariate_names);
  } else {
    basis = CalibrationBasis::raw(data.covariate_names);
  }
  if (static_cast<Eigen::Index>(basis.size()) != summary.mu_x.size()) {
    throw Error(ErrorKind::DimensionMismatch, "calibration basis has " + std::to_string(basis.size()) +
                                                  " terms but mu_x_ex has " + std::to_string(summary.mu_x.size()));
  }

  EstimatorOptions opts;
  opts.variant = parse_variant(a.variant);
  opts.entropy1 = EntropySpec::parse(a.entropy1);
  opts.entropy2 = EntropySpec::parse(a.entropy2);
  opts.exclusion_threshold = a.threshold;
  if (a.fallback == "sm") {
    opts.fallback = Fallback::SampleMean;
  } else if (a.fallback == "none") {
    opts.fallback = Fallback::None;
  } else {
    throw Error(ErrorKind::Parse, "unknown fallback '" + a.fallback + "' (expected sm | none)");
  }
  if (!a.extra_calibration.empty()) {
    std::vector<Eigen::Index> cols;
    std::stringstream ss(a.extra_calibration);
    for (std::string tok; std::getline(ss, tok, ',');) {
      tok.erase(0, tok.find_first_not_of(' '));
      tok.erase(tok.find_last_not_of(' ') + 1);
      cols.push_back(data.column(tok));
    }
    opts.extra_calibration = cols;
  }

  InferenceOptions inference;
  inference.plugin = !a.no_plugin;
  if (bootstrap) {
    BootstrapConfig bc;
    bc.B1 = a.b1;
    bc.B2 = a.b2;
    bc.seed = a.seed;
    bc.threads = a.threads;
    inference.bootstrap = bc;
    inference.use_bootstrap_se = true;
  }
  const EstimateReport report = estimate_with_inference(data, basis, summary, opts, inference);
  const nlohmann::json j = report_to_json(report);
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    write_file((std::filesystem::path(a.out) / "report.json").string(), j.dump(2) + "\n");
  }
  emit(out, format, report_table(report), report_csv(report), j);
  for (const auto& w : report.warnings) err << "warning: " << w << "\n";
  return kExitOk;
}

std::string simulation_table(const SimulationResult& r) {
  std::ostringstream os;
  os << "scenario " << to_string(r.config.scenario) << ", a=" << r.config.a << ", x1 external "
     << to_string(r.config.x1_external) << ", n=" << r.config.n << ", n1=" << r.config.n1
     << ", reps=" << r.config.replications << ", true mean " << r.true_value << "\n";
  os << std::left << std::setw(8) << "variant" << std::right << std::setw(12) << "mean" << std::setw(12) << "bias"
     << std::setw(12) << "sd" << std::setw(12) << "mse" << std::setw(10) << "excl%" << std::setw(10) << "cover%"
     << "\n";
  os << std::fixed;
  for (const auto& s : r.summaries) {
    os << std::left << std::setw(8) << to_string(s.variant) << std::right << std::setprecision(5) << std::setw(12)
       << s.mean << std::setw(12) << s.bias << std::setw(12) << s.sd << std::setw(12) << s.mse
       << std::setprecision(2) << std::setw(10) << 100.0 * s.exclusion_rate << std::setw(10);
    if (s.coverage) {
      os << 100.0 * *s.coverage;
    } else {
      os << "-";
    }
    os << "\n";
  }
  return os.str();
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const Format format = parse_format(a.format);
  ScenarioConfig c;
  c.scenario = parse_scenario(a.scenario);
  c.a = a.a;
  if (a.mu1 == "0" || a.mu1 == "normal0") {
    c.x1_external = ExternalX1::Normal0;
  } else if (a.mu1 == "gamma" || a.mu1 == "shifted_gamma") {
    c.x1_external = ExternalX1::ShiftedGamma;
  } else {
    std::optional<double> v;
    try {
      v = std::stod(a.mu1);
    } catch (...) {
    }
    if (!v) {
      c.x1_external = parse_external_x1(a.mu1);
    } else if (*v == 0.0) {
      c.x1_external = ExternalX1::Normal0;
    } else if (std::abs(*v - 1.0 / std::sqrt(2.0)) <= 1e-3) {
      c.x1_external = ExternalX1::NormalShifted;
    } else {
      throw Error(ErrorKind::Parse, "--mu1 must be 0, 0.7071 (1/sqrt 2) or gamma");
    }
  }
  c.n = a.n;
  c.n1 = a.n1;
  c.replications = a.reps;
  c.seed = a.seed;
  if (!a.variants.empty()) {
    std::stringstream ss(a.variants);
    for (std::string tok; std::getline(ss, tok, ',');) c.menu.push_back(parse_variant(tok));
  }
  if (a.normal_reading == "sd") {
    c.normal_reading = NormalReading::StdDev;
  } else if (a.normal_reading == "variance") {
    c.normal_reading = NormalReading::Variance;
  } else {
    throw Error(ErrorKind::Parse, "--normal-reading must be sd or variance");
  }
  if (a.gamma_reading == "shape4") {
    c.gamma_reading = GammaReading::Shape4;
  } else if (a.gamma_reading == "scale4") {
    c.gamma_reading = GammaReading::ShapeRoot3Over4;
  } else {
    throw Error(ErrorKind::Parse, "--gamma-reading must be shape4 or scale4");
  }
  c.gamma_shift = a.gamma_shift;
  c.exclusion_threshold = a.threshold;
  c.plugin = a.plugin;
  c.bootstrap = a.bootstrap;
  c.B1 = a.b1;
  c.B2 = a.b2;
  c.threads = a.threads;
  c.keep_raw = a.raw;

  const SimulationResult result = run_study(c);
  const nlohmann::json manifest = simulation_manifest(result);
  if (!a.out.empty()) {
    std::filesystem::create_directories(a.out);
    const std::filesystem::path dir(a.out);
    write_file((dir / "results.csv").string(), simulation_csv(result));
    write_file((dir / "manifest.json").string(), manifest.dump(2) + "\n");
    if (a.raw) write_file((dir / "raw.csv").string(), simulation_raw_csv(result));
  }
  emit(out, format, simulation_table(result), simulation_csv(result), manifest);
  return kExitOk;
}

int cmd_oracle(const OracleArgs& a, std::ostream& out) {
  nlohmann::json j;
  j["version"] = 1;
  j["draws"] = a.draws;
  j["seed"] = a.seed;
  nlohmann::json values = nlohmann::json::array();
  struct Case {
    const char* name;
    Scenario s;
    int a;
    NormalReading reading;
  };
  const Case cases[] = {
      {"s1_a0_sd", Scenario::S1, 0, NormalReading::StdDev},
      {"s1_a1_sd", Scenario::S1, 1, NormalReading::StdDev},
      {"s2_sd", Scenario::S2, 0, NormalReading::StdDev},
      {"s1_a0_variance", Scenario::S1, 0, NormalReading::Variance},
      {"s1_a1_variance", Scenario::S1, 1, NormalReading::Variance},
      {"s2_variance", Scenario::S2, 0, NormalReading::Variance},
  };
  std::uint64_t index = 0;
  for (const auto& c : cases) {
    ScenarioConfig cfg;
    cfg.scenario = c.s;
    cfg.a = c.a;
    cfg.normal_reading = c.reading;
    cfg.threads = a.threads;
    const OracleResult r = oracle_mean(cfg, a.draws, derive_seed(a.seed, 6, index++));
    nlohmann::json v;
    v["name"] = c.name;
    v["mean"] = r.mean;
    v["mc_se"] = r.mc_se;
    if (c.s == Scenario::S1) v["analytic"] = -0.5 + c.a * 0.5 * cfg.x1_sd() * cfg.x1_sd();
    v["frozen"] = true_mean(cfg);
    values.push_back(v);
  }
  j["true_means"] = values;

  nlohmann::json gamma = nlohmann::json::array();
  for (GammaReading reading : {GammaReading::Shape4, GammaReading::ShapeRoot3Over4}) {
    ScenarioConfig cfg;
    cfg.x1_external = ExternalX1::ShiftedGamma;
    cfg.gamma_reading = reading;
    cfg.n1 = a.draws;
    Engine rng = make_engine(a.seed, 7, static_cast<std::uint64_t>(reading));
    const InternalDataset rows = generate_external_rows(cfg, rng);
    const Eigen::VectorXd x1 = rows.covariates.col(0);
    const Moments m = external_x1_moments(cfg);
    nlohmann::json g;
    g["reading"] = reading == GammaReading::Shape4 ? "shape4" : "scale4";
    g["shift"] = cfg.gamma_shift;
    g["mean_mc"] = x1.mean();
    g["second_moment_mc"] = x1.squaredNorm() / static_cast<double>(x1.size());
    g["mean"] = m.mean;
    g["second_moment"] = m.variance + m.mean * m.mean;
    gamma.push_back(g);
  }
  j["shifted_gamma"] = gamma;

  if (!a.out.empty()) {
    const std::filesystem::path p(a.out);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    write_file(a.out, j.dump(2) + "\n");
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::Parse:
    case ErrorKind::DimensionMismatch:
    case ErrorKind::InvalidArgument:
    case ErrorKind::LinkMismatch:
      return kExitInput;
    case ErrorKind::InfeasibleTarget:
      return kExitInfeasible;
    default:
      return kExitFailure;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage entropy balancing with external summary statistics", "entbal"};
  app.require_subcommand(1);

  EstimateArgs est, boot;
  auto* estimate_cmd = app.add_subcommand("estimate", "Point estimate with plug-in inference");
  add_estimate_options(estimate_cmd, est, false);
  auto* bootstrap_cmd = app.add_subcommand("bootstrap", "Point estimate with bootstrap inference");
  add_estimate_options(bootstrap_cmd, boot, true);

  SimulateArgs sim;
  auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo study of the simulation scenarios");
  simulate_cmd->add_option("--scenario", sim.scenario, "s1 | s2")->capture_default_str();
  simulate_cmd->add_option("--a", sim.a, "Quadratic term switch (0 | 1)")->capture_default_str();
  simulate_cmd->add_option("--mu1", sim.mu1, "External X1 law: 0 | 0.7071 | gamma")->capture_default_str();
  simulate_cmd->add_option("--n", sim.n, "Internal sample size")->capture_default_str();
  simulate_cmd->add_option("--n1", sim.n1, "External sample size")->capture_default_str();
  simulate_cmd->add_option("--reps", sim.reps, "Monte Carlo replications")->capture_default_str();
  simulate_cmd->add_option("--seed", sim.seed, "Random seed")->capture_default_str();
  simulate_cmd->add_option("--variants", sim.variants, "Comma-separated estimator menu (default: scenario menu)");
  simulate_cmd->add_option("--threshold", sim.threshold, "Exclusion threshold")->capture_default_str();
  simulate_cmd->add_flag("--plugin", sim.plugin, "Plug-in se, Sigma_EB and lambda2 test per replication");
  simulate_cmd->add_flag("--bootstrap", sim.bootstrap, "Bootstrap se and coverage per replication");
  simulate_cmd->add_option("--b1", sim.b1, "Bootstrap replicates for the summary covariance")->capture_default_str();
  simulate_cmd->add_option("--b2", sim.b2, "Bootstrap replicates for the standard error")->capture_default_str();
  simulate_cmd->add_option("--normal-reading", sim.normal_reading, "N(mu, 1/sqrt 2) as sd | variance")
      ->capture_default_str();
  simulate_cmd->add_option("--gamma-reading", sim.gamma_reading, "shape4 | scale4")->capture_default_str();
  simulate_cmd->add_option("--gamma-shift", sim.gamma_shift, "Location shift of the gamma law")
      ->capture_default_str();
  simulate_cmd->add_option("--threads", sim.threads, "Worker threads (0: ENTBAL_THREADS or hardware)")
      ->capture_default_str();
  simulate_cmd->add_flag("--raw", sim.raw, "Also write per-replication raw.csv");
  simulate_cmd->add_option("--out", sim.out, "Directory for results.csv, manifest.json, raw.csv");
  simulate_cmd->add_option("--format", sim.format, "Stdout format: json | csv | table")->capture_default_str();
  simulate_cmd->add_option("--config", sim.config, "key = value file with defaults for these options");

  OracleArgs orc;
  auto* oracle_cmd = app.add_subcommand("oracle", "Regenerate the frozen true-value constants");
  oracle_cmd->add_option("--draws", orc.draws, "Monte Carlo draws per constant")->capture_default_str();
  oracle_cmd->add_option("--seed", orc.seed, "Random seed")->capture_default_str();
  oracle_cmd->add_option("--threads", orc.threads, "Worker threads")->capture_default_str();
  oracle_cmd->add_option("--out", orc.out, "Output JSON file");
  oracle_cmd->add_option("--config", orc.config, "key = value file with defaults for these options");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (estimate_cmd->parsed()) {
      if (!est.config.empty()) apply_config(*estimate_cmd, est.config);
      return cmd_estimate(est, false, out, err);
    }
    if (bootstrap_cmd->parsed()) {
      if (!boot.config.empty()) apply_config(*bootstrap_cmd, boot.config);
      return cmd_estimate(boot, true, out, err);
    }
    if (simulate_cmd->parsed()) {
      if (!sim.config.empty()) apply_config(*simulate_cmd, sim.config);
      return cmd_simulate(sim, out);
    }
    if (!orc.config.empty()) apply_config(*oracle_cmd, orc.config);
    return cmd_oracle(orc, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace entbal
