// Serial vs OpenMP timings for the jackknife and null-calibration kernels.
// Usage: bench_kernels [subjects] [raters] [trials]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>

#include "llmrel/agreement.hpp"
#include "llmrel/simulator.hpp"

using namespace llmrel;

namespace {

double best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

void row(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-34s %10.2f %10.2f %8.2fx  %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, identical ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  const std::size_t subjects = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 2000;
  const std::size_t raters = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 5;
  const std::size_t trials = argc > 3 ? std::strtoul(argv[3], nullptr, 10) : 400;

  std::printf("threads=%d subjects=%zu raters=%zu trials=%zu\n", max_threads(), subjects, raters,
              trials);
  std::printf("%-34s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  const auto m = simulate_matrix(RaterModel::binary_consistent(0.1, 0.05, 1), subjects, raters);
  for (Metric metric : {Metric::FleissKappa, Metric::GwetAC1, Metric::KrippendorffAlpha}) {
    AgreementEstimate s, p;
    const double ts = best_of(3, [&] { s = jackknife_ci(m, metric, 0.95, Execution::serial); });
    const double tp = best_of(3, [&] { p = jackknife_ci(m, metric, 0.95, Execution::parallel); });
    const std::string name = "jackknife " + std::string(to_string(metric));
    row(name.c_str(), ts, tp, s.interval->variance == p.interval->variance);
  }

  NullCalibration s, p;
  const double ts = best_of(1, [&] {
    s = null_calibration(Metric::FleissKappa, 2, raters, 1000, trials, 9, Execution::serial);
  });
  const double tp = best_of(1, [&] {
    p = null_calibration(Metric::FleissKappa, 2, raters, 1000, trials, 9, Execution::parallel);
  });
  row("null calibration fleiss_kappa", ts, tp, s.mean == p.mean && s.sd == p.sd);
  return 0;
}
