#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nullctl/algebra.hpp"
#include "nullctl/dynamics.hpp"

namespace nullctl {

enum class ExperimentKind { kSimulate, kSpectrum, kObstruct, kControl, kPipeline, kKalman, kCounterexample, kAppendixA };

std::string kind_name(ExperimentKind k);
// Throws PreconditionError on an unknown name.
ExperimentKind parse_kind(const std::string& name);

// Malformed configuration; the message names the line and field.
class ConfigError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

// Example systems.  Each uses the half torus (0, pi) as control set unless told otherwise.
SystemMatrices damped_wave(double b);
SystemMatrices moving_wave(double c, double b);
SystemMatrices heat_memory();
SystemMatrices nscl(double rho, double v, double a, double gamma, double mu);
SystemMatrices decoupled_heat();

struct Scenario {
  std::string name;
  SystemMatrices sys;
  TorusSubset omega;
  double T = 0;          // 0 selects T_factor * T*, or T_factor when T* is 0 or infinite
  double T_factor = 1.5;
  double Tprime = 0;     // 0 lets the pipeline choose
  int nmax = 24;
  int n0_override = 0;
  ExperimentKind kind = ExperimentKind::kSimulate;
  std::uint64_t seed = 1;

  double minimal_time() const;
  double horizon() const;
};

// "damped-wave(b)", "moving-wave(c,b)", "heat-memory", "nscl(rho,v,a,gamma,mu)", "heat"; arguments
// may be omitted to take the defaults (1), (1,1), (1,2,1,1.4,1).
Scenario builtin_scenario(const std::string& expr);

// Sections [system], [geometry], [experiment] holding `key = value` lines with JSON values.
// Matrices are lists of rows whose entries are numbers or [re, im] pairs.
Scenario parse_scenario(std::istream& in, const std::string& source = "<config>");

// A builtin expression, a config file, or a manifest.json written by run_experiment.
// Validation failures are forwarded as PreconditionError.
Scenario load_scenario(const std::string& path_or_name);

// Canonical text of every input that affects results, and its 64-bit FNV-1a hash.
std::string canonical_inputs(const Scenario& s);
std::uint64_t fnv1a(const std::string& text);

// Random state with coefficients N(0,1) (1 + |n|)^{-decay} in each component.
FourierState random_state(int dim, int nmax, std::uint64_t seed, double decay = 1.0);

struct RunResult {
  std::vector<std::string> files;  // relative to the output directory, manifest first
  std::string summary;
};

// Writes manifest.json before computing, then CSVs, summary.txt and plot.gp.
// Downstream errors are rethrown with the module name prefixed after summary.txt records them as partial.
RunResult run_experiment(const Scenario& s, const std::string& out_dir);

}  // namespace nullctl
