#include "entbal/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "entbal/error.hpp"

namespace entbal {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                        : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_number(const std::string& cell, std::size_t line, std::size_t col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last || !std::isfinite(v)) {
    std::ostringstream os;
    os << "line " << line << ", column " << col << ": '" << cell << "' is not a finite number";
    throw Error(ErrorKind::Parse, os.str());
  }
  return v;
}

// Doubles go out as numbers when finite and as strings otherwise, so they
// survive a round trip.
json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double to_double(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw Error(ErrorKind::Parse, "expected a number, got " + j.dump());
}

json numbers(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

std::vector<double> to_doubles(const json& j) {
  std::vector<double> v;
  for (const auto& e : j) v.push_back(to_double(e));
  return v;
}

const json& field(const json& j, const char* name) {
  if (!j.contains(name)) throw Error(ErrorKind::Parse, std::string("summary JSON is missing field \"") + name + "\"");
  return j.at(name);
}

Eigen::VectorXd vector_field(const json& j, const char* name) {
  const json& a = field(j, name);
  if (!a.is_array()) throw Error(ErrorKind::Parse, std::string("field \"") + name + "\" must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw Error(ErrorKind::Parse, std::string("field \"") + name + "\" must hold numbers");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json weight_summary_json(const WeightSummary& w) {
  return {{"min", number(w.min)}, {"max", number(w.max)}, {"mean", number(w.mean)}, {"ess", number(w.ess)}};
}

WeightSummary weight_summary_from(const json& j) {
  return {to_double(j.at("min")), to_double(j.at("max")), to_double(j.at("mean")), to_double(j.at("ess"))};
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join(const std::vector<double>& v, int precision) {
  std::ostringstream os;
  os << std::setprecision(precision);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
  out << content;
  if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// CSV

InternalDataset parse_internal_csv(std::istream& in, const std::string& outcome) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_line(line);
      break;
    }
  }
  if (header.empty()) throw Error(ErrorKind::Parse, "CSV has no header row");
  for (auto& h : header) {
    if (h.size() >= 2 && h.front() == '"' && h.back() == '"') h = h.substr(1, h.size() - 2);
  }
  std::size_t y_col = header.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == outcome) y_col = j;
  }
  if (y_col == header.size()) throw Error(ErrorKind::Parse, "CSV has no outcome column '" + outcome + "'");

  InternalDataset d;
  d.outcome_name = outcome;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j != y_col) d.covariate_names.push_back(header[j]);
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw Error(ErrorKind::Parse, "line " + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " fields, found " +
                                        std::to_string(cells.size()));
    }
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) row[j] = parse_number(cells[j], line_no, j + 1);
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto dcols = static_cast<Eigen::Index>(d.covariate_names.size());
  d.covariates.resize(n, dcols);
  d.outcome.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index c = 0;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (j == y_col) {
        d.outcome(i) = rows[static_cast<std::size_t>(i)][j];
      } else {
        d.covariates(i, c++) = rows[static_cast<std::size_t>(i)][j];
      }
    }
  }
  d.validate();
  return d;
}

InternalDataset read_internal_csv(const std::string& path, const std::string& outcome) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
  return parse_internal_csv(in, outcome);
}

// ---------------------------------------------------------------------------
// Summary JSON

ExternalSummary summary_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Parse, "summary JSON must be an object");
  if (j.contains("version") && j.at("version") != 1) {
    throw Error(ErrorKind::Parse, "unsupported summary version " + j.at("version").dump());
  }
  static const std::vector<std::string> known = {"version", "basis", "mu_x_ex", "beta_ex", "link",
                                                 "mu_y_ex", "n1",    "sigma_w"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw Error(ErrorKind::Parse, "summary JSON has unknown field \"" + key + "\"");
    }
  }
  ExternalSummary s;
  try {
    s.mu_x = vector_field(j, "mu_x_ex");
    if (j.contains("basis")) s.basis = j.at("basis").get<std::vector<std::string>>();
    const json& n1 = field(j, "n1");
    if (!n1.is_number_integer()) throw Error(ErrorKind::Parse, "field \"n1\" must be an integer");
    s.n1 = n1.get<long long>();
    if (j.contains("beta_ex")) {
      CoefficientSummary c;
      c.beta = vector_field(j, "beta_ex");
      c.link = j.contains("link") ? parse_link(j.at("link").get<std::string>()) : Link::Identity;
      s.coefficients = c;
    } else if (j.contains("link")) {
      throw Error(ErrorKind::Parse, "field \"link\" given without \"beta_ex\"");
    }
    if (j.contains("mu_y_ex")) {
      if (!j.at("mu_y_ex").is_number()) throw Error(ErrorKind::Parse, "field \"mu_y_ex\" must be a number");
      s.mu_y = j.at("mu_y_ex").get<double>();
    }
    if (j.contains("sigma_w")) {
      const json& m = j.at("sigma_w");
      const auto rows = static_cast<Eigen::Index>(m.size());
      Eigen::MatrixXd sw(rows, rows);
      for (Eigen::Index r = 0; r < rows; ++r) {
        const json& row = m.at(static_cast<std::size_t>(r));
        if (static_cast<Eigen::Index>(row.size()) != rows) {
          throw Error(ErrorKind::Parse, "field \"sigma_w\" must be a square matrix");
        }
        for (Eigen::Index c = 0; c < rows; ++c) sw(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
      }
      s.sigma_w = sw;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed summary JSON: ") + e.what());
  }
  if (!s.coefficients && !s.mu_y) {
    throw Error(ErrorKind::Parse, "summary JSON needs \"beta_ex\" or \"mu_y_ex\"");
  }
  s.validate();
  return s;
}

json summary_to_json(const ExternalSummary& s) {
  json j;
  j["version"] = 1;
  j["basis"] = s.basis;
  j["mu_x_ex"] = vector_json(s.mu_x);
  if (s.coefficients) {
    j["beta_ex"] = vector_json(s.coefficients->beta);
    j["link"] = to_string(s.coefficients->link);
  }
  if (s.mu_y) j["mu_y_ex"] = *s.mu_y;
  j["n1"] = s.n1;
  if (s.sigma_w) {
    json m = json::array();
    for (Eigen::Index r = 0; r < s.sigma_w->rows(); ++r) m.push_back(vector_json(s.sigma_w->row(r).transpose()));
    j["sigma_w"] = m;
  }
  return j;
}

ExternalSummary read_summary_json(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Parse, "'" + path + "' is not valid JSON: " + e.what());
  }
  return summary_from_json(j);
}

// ---------------------------------------------------------------------------
// Reports

json report_to_json(const EstimateReport& r) {
  json j;
  j["theta_hat"] = number(r.theta_hat);
  j["variant"] = to_string(r.variant);
  j["lambda1"] = numbers(r.lambda1);
  j["lambda2"] = numbers(r.lambda2);
  j["w1_summary"] = r.w1_summary ? weight_summary_json(*r.w1_summary) : json(nullptr);
  j["w2_summary"] = r.w2_summary ? weight_summary_json(*r.w2_summary) : json(nullptr);
  j["se_plugin"] = r.se_plugin ? number(*r.se_plugin) : json(nullptr);
  j["se_bootstrap"] = r.se_bootstrap ? number(*r.se_bootstrap) : json(nullptr);
  j["se_source"] = r.se_source;
  j["ci95"] = r.ci95 ? json::array({number(r.ci95->first), number(r.ci95->second)}) : json(nullptr);
  if (r.lambda2_test) {
    const auto& t = *r.lambda2_test;
    j["lambda2_test"] = {{"estimate", numbers(t.estimate)},
                         {"null_value", numbers(t.null_value)},
                         {"se", numbers(t.se)},
                         {"stat", numbers(t.stat)},
                         {"pvalue", numbers(t.pvalue)}};
  } else {
    j["lambda2_test"] = nullptr;
  }
  j["excluded"] = r.excluded;
  j["exclusion_reason"] = r.exclusion_reason;
  j["n"] = r.n;
  j["n1"] = r.n1;
  j["kappa"] = number(r.kappa);
  j["kappa_term_omitted"] = r.kappa_term_omitted;
  j["bootstrap_failures"] = r.bootstrap_failures ? json(*r.bootstrap_failures) : json(nullptr);
  j["warnings"] = r.warnings;
  return j;
}

EstimateReport report_from_json(const json& j) {
  EstimateReport r;
  try {
    r.theta_hat = to_double(j.at("theta_hat"));
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.lambda1 = to_doubles(j.at("lambda1"));
    r.lambda2 = to_doubles(j.at("lambda2"));
    if (!j.at("w1_summary").is_null()) r.w1_summary = weight_summary_from(j.at("w1_summary"));
    if (!j.at("w2_summary").is_null()) r.w2_summary = weight_summary_from(j.at("w2_summary"));
    if (!j.at("se_plugin").is_null()) r.se_plugin = to_double(j.at("se_plugin"));
    if (!j.at("se_bootstrap").is_null()) r.se_bootstrap = to_double(j.at("se_bootstrap"));
    r.se_source = j.at("se_source").get<std::string>();
    if (!j.at("ci95").is_null()) r.ci95 = std::make_pair(to_double(j.at("ci95")[0]), to_double(j.at("ci95")[1]));
    if (!j.at("lambda2_test").is_null()) {
      const json& t = j.at("lambda2_test");
      r.lambda2_test = Lambda2TestResult{to_doubles(t.at("estimate")), to_doubles(t.at("null_value")),
                                         to_doubles(t.at("se")), to_doubles(t.at("stat")),
                                         to_doubles(t.at("pvalue"))};
    }
    r.excluded = j.at("excluded").get<bool>();
    r.exclusion_reason = j.at("exclusion_reason").get<std::string>();
    r.n = j.at("n").get<long long>();
    r.n1 = j.at("n1").get<long long>();
    r.kappa = to_double(j.at("kappa"));
    r.kappa_term_omitted = j.at("kappa_term_omitted").get<bool>();
    if (!j.at("bootstrap_failures").is_null()) r.bootstrap_failures = j.at("bootstrap_failures").get<int>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("malformed report JSON: ") + e.what());
  }
  return r;
}

std::string report_table(const EstimateReport& r) {
  std::ostringstream os;
  os << std::setprecision(6);
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    std::ostringstream s;
    s << std::setprecision(6) << *v;
    return s.str();
  };
  os << "variant        " << to_string(r.variant) << "\n";
  os << "theta_hat      " << r.theta_hat << "\n";
  os << "se (plug-in)   " << opt(r.se_plugin) << "\n";
  os << "se (bootstrap) " << opt(r.se_bootstrap) << "\n";
  if (r.ci95) {
    os << "95% CI         [" << r.ci95->first << ", " << r.ci95->second << "]  (" << r.se_source << " se)\n";
  } else {
    os << "95% CI         -\n";
  }
  os << "n, n1, kappa   " << r.n << ", " << r.n1 << ", " << r.kappa << "\n";
  if (!r.lambda1.empty()) os << "lambda1        (" << join(r.lambda1, 6) << ")\n";
  if (!r.lambda2.empty()) os << "lambda2        (" << join(r.lambda2, 6) << ")\n";
  if (r.lambda2_test) {
    os << "lambda2 z      (" << join(r.lambda2_test->stat, 4) << ")\n";
    os << "lambda2 p      (" << join(r.lambda2_test->pvalue, 4) << ")\n";
  }
  auto weights = [&](const char* label, const std::optional<WeightSummary>& w) {
    if (!w) return;
    os << label << "min " << w->min << ", max " << w->max << ", mean " << w->mean << ", ess " << w->ess << "\n";
  };
  weights("w1             ", r.w1_summary);
  weights("w2             ", r.w2_summary);
  os << "excluded       " << (r.excluded ? "yes" : "no") << "\n";
  if (r.bootstrap_failures) os << "boot failures  " << *r.bootstrap_failures << "\n";
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

std::string report_csv(const EstimateReport& r) {
  std::ostringstream os;
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  os << "variant,theta_hat,se_plugin,se_bootstrap,se_source,ci_lo,ci_hi,n,n1,kappa,excluded,lambda2_h,"
        "lambda2_h_pvalue\n";
  os << to_string(r.variant) << ',' << format_double(r.theta_hat) << ',' << opt(r.se_plugin) << ','
     << opt(r.se_bootstrap) << ',' << r.se_source << ',' << (r.ci95 ? format_double(r.ci95->first) : "") << ','
     << (r.ci95 ? format_double(r.ci95->second) : "") << ',' << r.n << ',' << r.n1 << ','
     << format_double(r.kappa) << ',' << (r.excluded ? 1 : 0) << ','
     << (r.lambda2.size() > 1 ? format_double(r.lambda2[1]) : "") << ','
     << (r.lambda2_test && r.lambda2_test->pvalue.size() > 1 ? format_double(r.lambda2_test->pvalue[1]) : "")
     << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Simulation output

std::string simulation_csv(const SimulationResult& result) {
  const auto& c = result.config;
  std::ostringstream os;
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  os << "scenario,a,x1_external,n,n1,replications,variant,used,excluded,failed,true_value,mean,bias,sd,mse,"
        "mc_se,exclusion_rate,coverage,mean_se,lambda2_rejection_rate\n";
  for (const auto& s : result.summaries) {
    os << to_string(c.scenario) << ',' << c.a << ',' << to_string(c.x1_external) << ',' << c.n << ',' << c.n1
       << ',' << s.replications << ',' << to_string(s.variant) << ',' << s.used << ',' << s.excluded << ','
       << s.failed << ',' << format_double(result.true_value) << ',' << format_double(s.mean) << ','
       << format_double(s.bias) << ',' << format_double(s.sd) << ',' << format_double(s.mse) << ','
       << format_double(s.mc_se) << ',' << format_double(s.exclusion_rate) << ',' << opt(s.coverage) << ','
       << opt(s.mean_se) << ',' << opt(s.lambda2_rejection_rate) << "\n";
  }
  return os.str();
}

json simulation_manifest(const SimulationResult& result) {
  const auto& c = result.config;
  json j;
  j["version"] = 1;
  json cfg;
  cfg["scenario"] = to_string(c.scenario);
  cfg["a"] = c.a;
  cfg["x1_external"] = to_string(c.x1_external);
  cfg["n"] = c.n;
  cfg["n1"] = c.n1;
  cfg["replications"] = c.replications;
  cfg["seed"] = c.seed;
  json menu = json::array();
  for (Variant v : c.menu) menu.push_back(to_string(v));
  cfg["menu"] = menu;
  cfg["normal_reading"] = c.normal_reading == NormalReading::StdDev ? "sd" : "variance";
  cfg["gamma_reading"] = c.gamma_reading == GammaReading::Shape4 ? "shape4" : "shape_root3_over_4";
  cfg["gamma_shift"] = c.gamma_shift;
  cfg["exclusion_threshold"] = c.exclusion_threshold;
  cfg["plugin"] = c.plugin;
  cfg["bootstrap"] = c.bootstrap;
  cfg["B1"] = c.B1;
  cfg["B2"] = c.B2;
  j["config"] = cfg;
  j["true_value"] = result.true_value;
  json rows = json::array();
  for (const auto& s : result.summaries) {
    json r;
    r["variant"] = to_string(s.variant);
    r["replications"] = s.replications;
    r["used"] = s.used;
    r["excluded"] = s.excluded;
    r["failed"] = s.failed;
    r["mean"] = number(s.mean);
    r["bias"] = number(s.bias);
    r["sd"] = number(s.sd);
    r["mse"] = number(s.mse);
    r["mc_se"] = number(s.mc_se);
    r["exclusion_rate"] = number(s.exclusion_rate);
    r["coverage"] = s.coverage ? number(*s.coverage) : json(nullptr);
    r["mean_se"] = s.mean_se ? number(*s.mean_se) : json(nullptr);
    r["lambda2_rejection_rate"] = s.lambda2_rejection_rate ? number(*s.lambda2_rejection_rate) : json(nullptr);
    r["plugin_below_var_rate"] = s.plugin_below_var_rate ? number(*s.plugin_below_var_rate) : json(nullptr);
    rows.push_back(r);
  }
  j["summaries"] = rows;
  return j;
}

std::string simulation_raw_csv(const SimulationResult& result) {
  std::ostringstream os;
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  os << "replication,variant,theta,excluded,failed,se_plugin,se_bootstrap,covered,lambda2_pvalue\n";
  for (const auto& r : result.raw) {
    os << r.replication << ',' << to_string(r.variant) << ',' << format_double(r.theta) << ','
       << (r.excluded ? 1 : 0) << ',' << (r.failed ? 1 : 0) << ',' << opt(r.se_plugin) << ','
       << opt(r.se_bootstrap) << ',' << (r.covered ? (*r.covered ? "1" : "0") : "") << ','
       << opt(r.lambda2_pvalue) << "\n";
  }
  return os.str();
}

}  // namespace entbal
