// Serial reference versus OpenMP kernels on the per-mode loops.

#include <benchmark/benchmark.h>

#include "nullctl/control.hpp"
#include "nullctl/harness.hpp"

using namespace nullctl;

namespace {

Exec exec_of(const benchmark::State& st) { return st.range(1) ? Exec::kParallel : Exec::kSerial; }

void label(benchmark::State& st) { st.SetLabel(st.range(1) ? "parallel" : "serial"); }

void BM_Evolve(benchmark::State& st) {
  const Scenario s = builtin_scenario("nscl");
  const int nmax = static_cast<int>(st.range(0));
  const FourierState f0 = random_state(2, nmax, 1);
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 8, 8);
  ControlSignal u = ControlSignal::zeros(grid, 2, nmax);
  for (auto& c : u.coeffs) c.setConstant(cd(0.1, 0.0));
  for (auto _ : st) benchmark::DoNotOptimize(evolve(s.sys, f0, &u, 1.0, exec_of(st)));
  label(st);
}

void BM_EvolveReference(benchmark::State& st) {
  const Scenario s = builtin_scenario("nscl");
  const int nmax = static_cast<int>(st.range(0));
  const FourierState f0 = random_state(2, nmax, 1);
  const TimeGrid grid = TimeGrid::uniform(0.0, 1.0, 8, 8);
  ControlSignal u = ControlSignal::zeros(grid, 2, nmax);
  for (auto& c : u.coeffs) c.setConstant(cd(0.1, 0.0));
  for (auto _ : st) benchmark::DoNotOptimize(evolve_serial_reference(s.sys, f0, &u, 1.0));
}

void BM_BranchTable(benchmark::State& st) {
  const Scenario s = builtin_scenario("nscl");
  const BranchConstants c = branch_constants(s.sys, separation_radius(s.sys));
  const int nmax = static_cast<int>(st.range(0));
  for (auto _ : st) benchmark::DoNotOptimize(BranchTable(s.sys, c, nmax, exec_of(st)));
  label(st);
}

void BM_HumGramian(benchmark::State& st) {
  const Scenario s = builtin_scenario("nscl");
  const int nmax = static_cast<int>(st.range(0));
  const BranchTable bt(s.sys, branch_constants(s.sys, separation_radius(s.sys)), nmax);
  const auto fun = target_functionals(s.sys, bt, TargetKind::kHyperbolic, nmax);
  HumOptions opt;
  opt.gram.exec = exec_of(st);
  const double T = 1.5 * s.minimal_time();
  for (auto _ : st)
    benchmark::DoNotOptimize(build_hum_gramian(s.sys, fun, 0.0, T, s.omega, transport_mask(s.sys), nmax, opt));
  label(st);
}

}  // namespace

BENCHMARK(BM_Evolve)->ArgsProduct({{32, 128, 512}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EvolveReference)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BranchTable)->ArgsProduct({{32, 128}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_HumGramian)->ArgsProduct({{16, 32}, {0, 1}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
