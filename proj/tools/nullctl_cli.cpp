#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "nullctl/harness.hpp"

// Exit codes: 0 success, 1 numerical failure, 2 precondition refusal.
int main(int argc, char** argv) {
  using namespace nullctl;
  CLI::App app{"Null-controllability experiments for coupled transport-diffusion systems on the torus"};
  app.require_subcommand(1);

  std::string scenario = "nscl";
  std::string out_dir = "out";
  int nmax = 0;
  long long seed = -1;
  double T = 0, T_factor = 0, Tprime = 0;

  for (const auto& [kind, help] : std::initializer_list<std::pair<ExperimentKind, const char*>>{
           {ExperimentKind::kSimulate, "free evolution of a random state"},
           {ExperimentKind::kSpectrum, "generator eigenvalues and branch data"},
           {ExperimentKind::kObstruct, "observability ratio sweep below the minimal time"},
           {ExperimentKind::kControl, "moment or HUM control of one block"},
           {ExperimentKind::kPipeline, "full null-control pipeline with certificate"},
           {ExperimentKind::kKalman, "Kalman rank and cascade elimination check"},
           {ExperimentKind::kCounterexample, "memory-type counterexample and energy partial sums"},
           {ExperimentKind::kAppendixA, "pure transport solutions and rank of (B | AB | ...)"}}) {
    CLI::App* sub = app.add_subcommand(kind_name(kind), help);
    sub->add_option("--scenario", scenario, "builtin expression, config file or manifest.json");
    sub->add_option("--out-dir", out_dir, "output directory");
    sub->add_option("--nmax", nmax, "Fourier band");
    sub->add_option("--seed", seed, "random seed");
    sub->add_option("--T", T, "horizon");
    sub->add_option("--T-factor", T_factor, "horizon as a multiple of the minimal time");
    sub->add_option("--Tprime", Tprime, "end of the transport window");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    Scenario s = load_scenario(scenario);
    s.kind = parse_kind(app.get_subcommands().front()->get_name());
    if (nmax > 0) s.nmax = nmax;
    if (seed >= 0) s.seed = static_cast<std::uint64_t>(seed);
    if (T > 0) s.T = T;
    if (T_factor > 0) {
      s.T_factor = T_factor;
      s.T = 0;
    }
    if (Tprime > 0) s.Tprime = Tprime;
    const RunResult r = run_experiment(s, out_dir);
    std::cout << r.summary;
    return 0;
  } catch (const PreconditionError& e) {
    std::cerr << "refused: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
