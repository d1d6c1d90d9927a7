#include "nullctl/harness.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "nullctl/analysis.hpp"
#include "nullctl/control.hpp"
#include "nullctl/obstruction.hpp"
#include "nullctl/spectral.hpp"

namespace nullctl {

using json = nlohmann::json;

namespace {

const std::vector<std::pair<ExperimentKind, std::string>>& kind_table() {
  static const std::vector<std::pair<ExperimentKind, std::string>> t = {
      {ExperimentKind::kSimulate, "simulate"},   {ExperimentKind::kSpectrum, "spectrum"},
      {ExperimentKind::kObstruct, "obstruct"},   {ExperimentKind::kControl, "control"},
      {ExperimentKind::kPipeline, "pipeline"},   {ExperimentKind::kKalman, "kalman"},
      {ExperimentKind::kCounterexample, "counterexample"}, {ExperimentKind::kAppendixA, "appendix-a"}};
  return t;
}

TorusSubset half_torus() { return TorusSubset::from_arcs({{0.0, kPi}}); }

}  // namespace

std::string kind_name(ExperimentKind k) {
  for (const auto& [kind, name] : kind_table())
    if (kind == k) return name;
  return "unknown";
}

ExperimentKind parse_kind(const std::string& name) {
  for (const auto& [kind, n] : kind_table())
    if (n == name) return kind;
  throw PreconditionError("unknown experiment kind '" + name + "'");
}

// ---------------------------------------------------------------------------------------------
// Example systems

SystemMatrices damped_wave(double b) {
  SystemMatrices s;
  s.d1 = 1;
  s.d2 = 1;
  s.A = CMat::Zero(2, 2);
  s.D = CMat::Identity(1, 1);
  s.K.resize(2, 2);
  s.K << 1.0, 1.0 - b, -1.0, b - 1.0;
  s.M = CMat::Zero(2, 1);
  s.M(0, 0) = 1.0;
  return s;
}

SystemMatrices moving_wave(double c, double b) {
  SystemMatrices s = damped_wave(b);
  s.A = -c * CMat::Identity(2, 2);
  return s;
}

SystemMatrices heat_memory() {
  SystemMatrices s;
  s.d1 = 1;
  s.d2 = 1;
  s.A.resize(2, 2);
  s.A << 0.0, 1.0, 1.0, 0.0;
  s.D = CMat::Identity(1, 1);
  s.K = CMat::Zero(2, 2);
  s.M = CMat::Zero(2, 1);
  s.M(1, 0) = 1.0;
  return s;
}

SystemMatrices nscl(double rho, double v, double a, double gamma, double mu) {
  if (!(rho > 0)) throw PreconditionError("nscl: the reference density must be positive");
  SystemMatrices s;
  s.d1 = 1;
  s.d2 = 1;
  s.A.resize(2, 2);
  s.A << v, rho, a * std::pow(rho, gamma - 2.0), v;
  s.D = CMat::Constant(1, 1, mu / rho);
  s.K = CMat::Zero(2, 2);
  s.M = CMat::Identity(2, 2);
  return s;
}

SystemMatrices decoupled_heat() {
  SystemMatrices s;
  s.d1 = 1;
  s.d2 = 1;
  s.A = CMat::Zero(2, 2);
  s.D = CMat::Identity(1, 1);
  s.K = CMat::Zero(2, 2);
  s.M = CMat::Identity(2, 2);
  return s;
}

double Scenario::minimal_time() const { return nullctl::minimal_time(sys, omega); }

double Scenario::horizon() const {
  if (T > 0) return T;
  const double ts = minimal_time();
  if (std::isfinite(ts) && ts > 0) return T_factor * ts;
  return T_factor;
}

Scenario builtin_scenario(const std::string& expr) {
  static const std::regex form(R"(^\s*([a-z\-]+)\s*(?:\(([^)]*)\))?\s*$)");
  std::smatch m;
  if (!std::regex_match(expr, m, form)) throw PreconditionError("unknown scenario '" + expr + "'");
  const std::string name = m[1];
  std::vector<double> args;
  if (m[2].matched) {
    std::stringstream ss(m[2].str());
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        args.push_back(std::stod(tok, &used));
        if (tok.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw PreconditionError("scenario '" + expr + "': argument '" + tok + "' is not a number");
      }
    }
  }
  auto take = [&](std::vector<double> defaults) {
    if (args.size() > defaults.size())
      throw PreconditionError("scenario '" + name + "' takes at most " + std::to_string(defaults.size()) +
                              " arguments");
    for (std::size_t i = 0; i < args.size(); ++i) defaults[i] = args[i];
    return defaults;
  };

  Scenario s;
  s.omega = half_torus();
  if (name == "damped-wave") {
    const auto p = take({1.0});
    s.sys = damped_wave(p[0]);
  } else if (name == "moving-wave") {
    const auto p = take({1.0, 1.0});
    s.sys = moving_wave(p[0], p[1]);
  } else if (name == "heat-memory") {
    take({});
    s.sys = heat_memory();
  } else if (name == "nscl") {
    const auto p = take({1.0, 2.0, 1.0, 1.4, 1.0});
    s.sys = nscl(p[0], p[1], p[2], p[3], p[4]);
  } else if (name == "heat") {
    take({});
    s.sys = decoupled_heat();
    s.n0_override = 1;
  } else {
    throw PreconditionError("unknown scenario '" + expr + "'");
  }
  s.name = expr;
  const ValidationReport v = validate_system(s.sys);
  if (!v.ok()) throw PreconditionError("scenario '" + expr + "': " + v.summary());
  return s;
}

// ---------------------------------------------------------------------------------------------
// Configuration

namespace {

json matrix_to_json(const CMat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(json::array({m(r, c).real(), m(r, c).imag()}));
    rows.push_back(row);
  }
  return rows;
}

CMat matrix_from_json(const json& v, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a nonempty list of rows");
  const std::size_t rows = v.size();
  std::size_t cols = 0;
  CMat m;
  for (std::size_t r = 0; r < rows; ++r) {
    const json& row = v[r];
    if (!row.is_array()) throw ConfigError(where + ": row " + std::to_string(r + 1) + " is not a list");
    if (r == 0) {
      cols = row.size();
      m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      throw ConfigError(where + ": row " + std::to_string(r + 1) + " has " + std::to_string(row.size()) +
                        " entries, expected " + std::to_string(cols));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const json& e = row[c];
      const std::string at = where + ": entry (" + std::to_string(r + 1) + ", " + std::to_string(c + 1) + ")";
      if (e.is_number()) {
        m(r, c) = e.get<double>();
      } else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
        m(r, c) = cd(e[0].get<double>(), e[1].get<double>());
      } else {
        throw ConfigError(at + " must be a number or an [re, im] pair");
      }
    }
  }
  return m;
}

json omega_to_json(const TorusSubset& o) {
  json arcs = json::array();
  for (const auto& [a, b] : o.arcs()) arcs.push_back(json::array({a, b}));
  return arcs;
}

TorusSubset omega_from_json(const json& v, const std::string& where) {
  if (v.is_string() && v.get<std::string>() == "full") return TorusSubset::full();
  if (!v.is_array()) throw ConfigError(where + ": expected \"full\" or a list of [start, end] arcs");
  std::vector<std::pair<double, double>> arcs;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const json& a = v[i];
    if (!a.is_array() || a.size() != 2 || !a[0].is_number() || !a[1].is_number())
      throw ConfigError(where + ": arc " + std::to_string(i + 1) + " must be [start, end]");
    const double s = a[0].get<double>(), e = a[1].get<double>();
    if (!(e > s)) throw ConfigError(where + ": arc " + std::to_string(i + 1) + " must have end > start");
    arcs.emplace_back(s, e);
  }
  return TorusSubset::from_arcs(arcs);
}

template <class T>
T number_field(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(where + ": expected an integer");
  }
  return v.get<T>();
}

struct Entry {
  std::string section, key;
  json value;
  std::string where;
};

Scenario apply_entries(const std::vector<Entry>& entries) {
  Scenario s;
  s.omega = half_torus();
  bool have_system = false;
  for (const auto& e : entries) {
    if (e.section == "system" && e.key == "builtin") {
      if (!e.value.is_string()) throw ConfigError(e.where + ": expected a scenario name string");
      try {
        s = builtin_scenario(e.value.get<std::string>());
      } catch (const PreconditionError& err) {
        throw ConfigError(e.where + ": " + err.what());
      }
      have_system = true;
    }
  }
  for (const auto& e : entries) {
    const std::string& w = e.where;
    if (e.section == "system") {
      if (e.key == "builtin") continue;
      have_system = true;
      if (e.key == "d1") s.sys.d1 = number_field<int>(e.value, w);
      else if (e.key == "d2") s.sys.d2 = number_field<int>(e.value, w);
      else if (e.key == "A") s.sys.A = matrix_from_json(e.value, w);
      else if (e.key == "D") s.sys.D = matrix_from_json(e.value, w);
      else if (e.key == "K") s.sys.K = matrix_from_json(e.value, w);
      else if (e.key == "M") s.sys.M = matrix_from_json(e.value, w);
      else throw ConfigError(w + ": unknown field in [system]");
    } else if (e.section == "geometry") {
      if (e.key == "omega") s.omega = omega_from_json(e.value, w);
      else throw ConfigError(w + ": unknown field in [geometry]");
    } else if (e.section == "experiment") {
      if (e.key == "name") {
        if (!e.value.is_string()) throw ConfigError(w + ": expected a string");
        s.name = e.value.get<std::string>();
      } else if (e.key == "kind") {
        if (!e.value.is_string()) throw ConfigError(w + ": expected a string");
        try {
          s.kind = parse_kind(e.value.get<std::string>());
        } catch (const PreconditionError& err) {
          throw ConfigError(w + ": " + err.what());
        }
      } else if (e.key == "T") s.T = number_field<double>(e.value, w);
      else if (e.key == "T_factor") s.T_factor = number_field<double>(e.value, w);
      else if (e.key == "Tprime") s.Tprime = number_field<double>(e.value, w);
      else if (e.key == "nmax") s.nmax = number_field<int>(e.value, w);
      else if (e.key == "n0_override") s.n0_override = number_field<int>(e.value, w);
      else if (e.key == "seed") s.seed = number_field<std::uint64_t>(e.value, w);
      else throw ConfigError(w + ": unknown field in [experiment]");
    } else {
      throw ConfigError(w + ": unknown section [" + e.section + "]");
    }
  }
  if (!have_system) throw ConfigError("configuration has no [system] entries");
  if (s.nmax < 1) throw ConfigError("field 'nmax': must be at least 1");
  s.sys.check_dimensions();
  const ValidationReport v = validate_system(s.sys);
  if (!v.ok()) throw PreconditionError("system fails validation: " + v.summary());
  if (s.name.empty()) s.name = "config";
  return s;
}

json inputs_json(const Scenario& s) {
  json in;
  in["system"] = {{"d1", s.sys.d1}, {"d2", s.sys.d2}, {"A", matrix_to_json(s.sys.A)},
                  {"D", matrix_to_json(s.sys.D)}, {"K", matrix_to_json(s.sys.K)}, {"M", matrix_to_json(s.sys.M)}};
  in["geometry"] = {{"omega", s.omega.is_full() ? json("full") : omega_to_json(s.omega)}};
  in["experiment"] = {{"name", s.name},     {"kind", kind_name(s.kind)}, {"T", s.T},
                      {"T_factor", s.T_factor}, {"Tprime", s.Tprime},     {"nmax", s.nmax},
                      {"n0_override", s.n0_override}, {"seed", s.seed}};
  return in;
}

Scenario scenario_from_inputs(const json& in, const std::string& source) {
  std::vector<Entry> entries;
  for (const char* sec : {"system", "geometry", "experiment"}) {
    if (!in.contains(sec)) continue;
    if (!in[sec].is_object()) throw ConfigError(source + ": section '" + sec + "' is not an object");
    for (const auto& [k, v] : in[sec].items())
      entries.push_back({sec, k, v, source + ", field '" + k + "'"});
  }
  return apply_entries(entries);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

int bracket_depth(const std::string& s) {
  int depth = 0;
  bool quoted = false;
  for (char c : s) {
    if (c == '"') quoted = !quoted;
    if (quoted) continue;
    if (c == '[' || c == '{') ++depth;
    if (c == ']' || c == '}') --depth;
  }
  return depth;
}

}  // namespace

Scenario parse_scenario(std::istream& in, const std::string& source) {
  std::vector<Entry> entries;
  std::string section;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string text = trim(strip_comment(line));
    if (text.empty()) continue;
    const std::string at_line = source + ":" + std::to_string(lineno);
    if (text.front() == '[' && text.back() == ']' && text.find('=') == std::string::npos) {
      section = trim(text.substr(1, text.size() - 2));
      if (section != "system" && section != "geometry" && section != "experiment")
        throw ConfigError(at_line + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(at_line + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(at_line + ": entry outside any section");
    const std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    const std::string where = at_line + ", field '" + key + "'";
    // Values with open brackets continue on following lines.
    while (bracket_depth(value) > 0 && std::getline(in, line)) {
      ++lineno;
      value += " " + trim(strip_comment(line));
    }
    json v;
    try {
      v = json::parse(value);
    } catch (const json::parse_error& err) {
      throw ConfigError(where + ": malformed value (" + std::string(err.what()) + ")");
    }
    entries.push_back({section, key, v, where});
  }
  return apply_entries(entries);
}

Scenario load_scenario(const std::string& path_or_name) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_regular_file(path_or_name, ec)) return builtin_scenario(path_or_name);
  std::ifstream f(path_or_name);
  if (!f) throw ConfigError(path_or_name + ": cannot open");
  if (fs::path(path_or_name).extension() == ".json") {
    json j;
    try {
      j = json::parse(f);
    } catch (const json::parse_error& err) {
      throw ConfigError(path_or_name + ": malformed manifest (" + std::string(err.what()) + ")");
    }
    if (!j.contains("inputs")) throw ConfigError(path_or_name + ": manifest has no 'inputs'");
    return scenario_from_inputs(j["inputs"], path_or_name);
  }
  return parse_scenario(f, path_or_name);
}

std::string canonical_inputs(const Scenario& s) { return inputs_json(s).dump(); }

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

FourierState random_state(int dim, int nmax, std::uint64_t seed, double decay) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  FourierState f = FourierState::zeros(dim, nmax);
  for (int n = -nmax; n <= nmax; ++n) {
    const double s = std::pow(1.0 + std::abs(n), -decay);
    for (int c = 0; c < dim; ++c) {
      const double re = nd(rng), im = nd(rng);
      f.c(c, n + nmax) = s * cd(re, im);
    }
  }
  return f;
}

// ---------------------------------------------------------------------------------------------
// Experiments

namespace {

struct Output {
  std::filesystem::path dir;
  RunResult* result;

  std::ofstream open(const std::string& name) const {
    std::ofstream f(dir / name);
    if (!f) throw NumericalError("cannot write " + (dir / name).string());
    f << std::setprecision(17);
    result->files.push_back(name);
    return f;
  }
};

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

BranchConstants scenario_constants(const Scenario& s) {
  return branch_constants(s.sys, separation_radius(s.sys, s.n0_override));
}

bool acts_on_diffusive_rows_only(const SystemMatrices& sys, const std::vector<bool>& mask) {
  bool any = false;
  for (int j = 0; j < sys.m(); ++j) {
    if (!mask[j]) continue;
    any = true;
    if (sys.m1().col(j).norm() > 0) return false;
  }
  return any;
}

void run_simulate(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const double T = s.horizon();
  const FourierState f0 = random_state(s.sys.d(), s.nmax, s.seed);
  const Trajectory traj = evolve_trajectory(s.sys, f0, TimeGrid::uniform(0.0, T, 16, 8));
  {
    auto f = out.open("trajectory.csv");
    write_trajectory_csv(f, traj);
  }
  auto f = out.open("norms.csv");
  f << "t,l2_norm\n";
  for (std::size_t q = 0; q < traj.times.size(); ++q) f << traj.times[q] << ',' << l2_norm(traj.states[q]) << '\n';
  const FourierState fT = evolve(s.sys, f0, nullptr, T);
  sum << "T: " << T << "\nfree decay |f(T)|/|f0|: " << l2_norm(fT) / l2_norm(f0) << '\n';
}

void run_spectrum(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const BranchConstants c = scenario_constants(s);
  {
    auto f = out.open("eigenvalues.csv");
    f << "n,index,re,im\n";
    for (int n = 0; n <= s.nmax; ++n) {
      Eigen::ComplexEigenSolver<CMat> es(ModeGenerator(s.sys, n).generator(), false);
      std::vector<cd> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
      std::sort(ev.begin(), ev.end(), [](cd a, cd b) { return a.real() != b.real() ? a.real() < b.real() : a.imag() < b.imag(); });
      for (std::size_t i = 0; i < ev.size(); ++i) f << n << ',' << i << ',' << ev[i].real() << ',' << ev[i].imag() << '\n';
    }
  }
  if (s.nmax > c.n0) {
    auto f = out.open("branches.csv");
    BranchTable(s.sys, c, s.nmax).write_csv(f);
  }
  sum << "n0: " << c.n0 << "\nseparation radius: " << c.r << "\ncontour radius: " << c.R << "\nKp: " << c.Kp
      << "\ncp: " << c.cp << "\nKh: " << c.Kh << "\nch: " << c.ch << "\nminimal time: " << s.minimal_time() << '\n';
  for (const auto& sp : transport_speeds(s.sys)) sum << "speed: " << sp.mu << " x" << sp.multiplicity << '\n';
}

void run_obstruct(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const double T = s.horizon();
  const BranchConstants c = scenario_constants(s);
  std::vector<int> Ns;
  for (int N = 8; N <= std::max(64, s.nmax); N *= 2)
    if (N > c.n0) Ns.push_back(N);
  if (Ns.size() < 2) throw PreconditionError("obstruct: fewer than two sweep values above n0 = " + std::to_string(c.n0));
  std::vector<double> xs, ratio, err;
  auto f = out.open("obstruction.csv");
  f << "N,ratio,sup_approx_error,lower_constant,transport_leak\n";
  for (int N : Ns) {
    const ObstructionWitness w = build_witness(s.sys, c, s.omega, T, N);
    const ObservabilityReport r = observability_ratio(w, s.omega, T);
    f << N << ',' << r.ratio << ',' << r.sup_approx_error << ',' << r.lower_constant << ',' << r.transport_leak << '\n';
    xs.push_back(N);
    ratio.push_back(r.ratio);
    err.push_back(r.sup_approx_error);
  }
  sum << "T: " << T << "\nratio slope: " << loglog_slope(xs, ratio)
      << "\nsup approximation error slope: " << loglog_slope(xs, err) << '\n';
}

void run_control(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const double T = s.horizon();
  const BranchConstants c = scenario_constants(s);
  const FourierState f0 = random_state(s.sys.d(), s.nmax, s.seed);
  const std::vector<bool> pmask = parabolic_mask(s.sys);
  ControlSignal u;
  if (acts_on_diffusive_rows_only(s.sys, pmask)) {
    const int N = std::min(s.nmax, 12);
    const BranchTable bt(s.sys, c, std::max(s.nmax, N));
    const MomentResult r = parabolic_moment_control(s.sys, bt, f0, 0.0, T, N, s.omega, pmask);
    u = r.u;
    sum << "method: moment\nN: " << N << "\nparabolic residual: " << r.residual
        << "\ngram condition: " << r.problem.condition << '\n';
  } else {
    const BranchTable bt(s.sys, c, s.nmax);
    const HumResult r = hum_gramian_control(s.sys, bt, TargetKind::kHyperbolic, s.nmax,
                                            FourierState::zeros(s.sys.d(), s.nmax), f0, 0.0, T, s.omega,
                                            transport_mask(s.sys));
    u = r.u;
    sum << "method: hum-hyperbolic\nrelative error: " << r.relative_error << "\ngram condition: " << r.condition
        << "\nsmallest eigenvalue: " << r.min_eigenvalue << "\nenergy: " << r.energy << '\n';
  }
  auto f = out.open("control.csv");
  u.write_csv(f, 32);
  sum << "T: " << T << "\nleakage: " << u.leakage() << '\n';
}

void run_pipeline(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const double T = s.horizon();
  PipelineOptions opt;
  opt.Tprime = s.Tprime;
  opt.n0_override = s.n0_override;
  const FourierState f0 = random_state(s.sys.d(), s.nmax, s.seed);
  const PipelineResult r = full_pipeline(s.sys, f0, T, s.omega, opt);
  {
    auto f = out.open("certificate.csv");
    f << "quantity,value\n"
      << "T," << T << "\nTstar," << r.Tstar << "\nTprime," << r.Tprime << "\ntau," << r.tau
      << "\nrelative_norm," << r.relative_norm << "\nenergy," << r.energy << "\nhyperbolic_condition,"
      << r.hyperbolic_condition << "\nparabolic_condition," << r.parabolic_condition << "\ntrailing_condition,"
      << r.trailing_condition << "\nstacked_condition," << r.stacked_condition << '\n';
  }
  {
    auto f = out.open("iterations.csv");
    f << "iteration,residual\n";
    for (std::size_t i = 0; i < r.iteration_residuals.size(); ++i) f << i + 1 << ',' << r.iteration_residuals[i] << '\n';
  }
  auto f = out.open("control.csv");
  r.u.write_csv(f, 32);
  sum << "T: " << T << "\nT*: " << r.Tstar << "\npath: " << r.path << "\nparabolic stage: " << r.parabolic_stage
      << "\nfinal relative norm: " << r.relative_norm << '\n';
}

void run_kalman(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const CouplingPair p = relevant_coupling(s.sys);
  const KalmanResult k = kalman_rank(p.drift, p.coupling);
  const int band = std::min(s.nmax, 16);
  const FourierState g0 = random_state(s.sys.d(), band, s.seed, 2.0);
  const CascadeReport rep = cascade_elimination_check(s.sys, g0, s.horizon(), s.omega);
  auto f = out.open("cascade.csv");
  f << "level,chain,depth,sobolev,norm,constant,refined_constant,growth,exploding\n";
  for (const auto& l : rep.levels)
    f << l.name << ',' << l.chain << ',' << l.depth << ',' << l.sobolev << ',' << l.norm << ',' << l.constant << ','
      << l.refined_constant << ',' << l.growth << ',' << (l.exploding ? 1 : 0) << '\n';
  sum << "pair: " << p.label << "\nrank: " << k.rank << " of " << s.sys.d2 << '\n'
      << p.label << (k.satisfied ? " satisfied" : " fails") << "\ncascade: " << (rep.broken ? "broken" : "intact")
      << " (surrogate dual norms, band " << band << " and " << 2 * band << ")\n";
}

void run_counterexample(const Scenario& s, const Output& out, std::ostringstream& sum) {
  const double T = s.T > 0 ? s.T : 1.0;
  FourierState f0 = FourierState::zeros(2, s.nmax);
  const FourierState a = random_state(1, s.nmax, s.seed, 2.0);
  const FourierState b = random_state(1, s.nmax, s.seed + 1, 1.0);
  f0.c.row(0) = a.c.row(0);
  f0.c.row(1) = b.c.row(0);
  f0.c(0, s.nmax) = 0.0;
  const CounterexampleReport r = memory_counterexample_control(f0, T);
  {
    auto f = out.open("modes.csv");
    f << "n,alpha_re,alpha_im,beta_re,beta_im,residual\n";
    for (const auto& m : r.modes)
      f << m.n << ',' << m.alpha.real() << ',' << m.alpha.imag() << ',' << m.beta.real() << ',' << m.beta.imag()
        << ',' << m.residual << '\n';
  }
  auto f = out.open("partial_sums.csv");
  f << "nmax,energy,ratio\n";
  auto f01 = [](int n) { return n == 0 ? cd(0) : cd(1.0 / (n * std::pow(std::log(2.0 + std::abs(n)), 2))); };
  auto f02 = [](int) { return cd(0); };
  double prev = 0;
  for (int k = 10; k <= 16; ++k) {
    const double e = counterexample_energy(f01, f02, T, 1 << k);
    f << (1 << k) << ',' << e << ',' << (prev > 0 ? e / prev : 0.0) << '\n';
    prev = e;
  }
  sum << "T: " << T << "\nmax moment residual: " << r.max_residual << "\nfinal relative norm: "
      << r.final_relative_norm << "\nenergy: " << r.energy << "\nlower bound: " << r.lower_bound << '\n';
}

void run_appendix_a(const Scenario& s, const Output& out, std::ostringstream& sum) {
  auto f = out.open("appendix_a.csv");
  f << "mu,nmax,count,kalman_rank\n";
  bool stable = true;
  int rank = 0;
  for (const auto& sp : transport_speeds(s.sys)) {
    const PureTransportSpace a = pure_transport_space(s.sys, sp.mu, s.nmax);
    const PureTransportSpace b = pure_transport_space(s.sys, sp.mu, 2 * s.nmax);
    f << sp.mu << ',' << s.nmax << ',' << a.count() << ',' << a.kalman_rank << '\n';
    f << sp.mu << ',' << 2 * s.nmax << ',' << b.count() << ',' << b.kalman_rank << '\n';
    stable = stable && a.count() == b.count();
    rank = a.kalman_rank;
  }
  sum << "rank (B | AB | ...): " << rank << " of " << s.sys.d() << "\npure transport count stable under doubling: "
      << (stable ? "yes" : "no") << '\n';
}

const char* module_of(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kSimulate: return "dynamics";
    case ExperimentKind::kSpectrum: return "spectral";
    case ExperimentKind::kObstruct: return "obstruction";
    case ExperimentKind::kControl: return "control";
    case ExperimentKind::kPipeline: return "control";
    case ExperimentKind::kKalman: return "analysis";
    case ExperimentKind::kCounterexample: return "analysis";
    case ExperimentKind::kAppendixA: return "obstruction";
  }
  return "harness";
}

std::string plot_script(ExperimentKind k) {
  std::ostringstream p;
  p << "set datafile separator ','\nset key autotitle columnhead\n";
  switch (k) {
    case ExperimentKind::kSimulate: p << "set logscale y\nplot 'norms.csv' using 1:2 with lines\n"; break;
    case ExperimentKind::kSpectrum: p << "plot 'eigenvalues.csv' using 3:4 with points\n"; break;
    case ExperimentKind::kObstruct:
      p << "set logscale xy\nplot 'obstruction.csv' using 1:2 with linespoints, '' using 1:3 with linespoints\n";
      break;
    case ExperimentKind::kControl:
    case ExperimentKind::kPipeline:
      p << "set view map\nsplot 'control.csv' using 1:2:4 with points palette\n";
      break;
    case ExperimentKind::kKalman: p << "set logscale y\nplot 'cascade.csv' using 0:6:xtic(1) with boxes\n"; break;
    case ExperimentKind::kCounterexample:
      p << "set logscale x\nplot 'partial_sums.csv' using 1:2 with linespoints\n";
      break;
    case ExperimentKind::kAppendixA: p << "plot 'appendix_a.csv' using 2:3 with points\n"; break;
  }
  return p.str();
}

}  // namespace

RunResult run_experiment(const Scenario& s, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  RunResult result;
  const Output out{fs::path(out_dir), &result};

  const std::string canon = canonical_inputs(s);
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(canon)));
  {
    json m;
    m["format"] = "nullctl-manifest-1";
    m["inputs"] = inputs_json(s);
    m["input_hash"] = hash;
    m["seed"] = s.seed;
    m["versions"] = {{"nullctl", "1.0.0"},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                   "." + std::to_string(EIGEN_MINOR_VERSION)},
                     {"compiler", __VERSION__}};
    auto f = out.open("manifest.json");
    f << m.dump(2) << '\n';
  }

  std::ostringstream sum;
  sum << std::setprecision(10);
  sum << "scenario: " << s.name << "\nkind: " << kind_name(s.kind) << "\ninput hash: " << hash << '\n';
  auto finish = [&](const std::string& status, const std::string& error) {
    std::ofstream f(out.dir / "summary.txt");
    f << sum.str() << "status: " << status << '\n';
    if (!error.empty()) f << "module: " << module_of(s.kind) << "\npartial: true\nerror: " << error << '\n';
    result.files.push_back("summary.txt");
  };
  try {
    switch (s.kind) {
      case ExperimentKind::kSimulate: run_simulate(s, out, sum); break;
      case ExperimentKind::kSpectrum: run_spectrum(s, out, sum); break;
      case ExperimentKind::kObstruct: run_obstruct(s, out, sum); break;
      case ExperimentKind::kControl: run_control(s, out, sum); break;
      case ExperimentKind::kPipeline: run_pipeline(s, out, sum); break;
      case ExperimentKind::kKalman: run_kalman(s, out, sum); break;
      case ExperimentKind::kCounterexample: run_counterexample(s, out, sum); break;
      case ExperimentKind::kAppendixA: run_appendix_a(s, out, sum); break;
    }
  } catch (const PreconditionError& e) {
    finish("refused", e.what());
    throw PreconditionError(std::string(module_of(s.kind)) + ": " + e.what());
  } catch (const NumericalError& e) {
    finish("failed", e.what());
    throw NumericalError(std::string(module_of(s.kind)) + ": " + e.what());
  }
  {
    std::ofstream p(out.dir / "plot.gp");
    p << plot_script(s.kind);
    result.files.push_back("plot.gp");
  }
  finish("ok", "");
  result.summary = sum.str();
  return result;
}

}  // namespace nullctl
