#include <omp.h>

#include <chrono>
#include <cstdio>

#include "cqte/bootstrap.hpp"
#include "cqte/simulate.hpp"
#include "cqte/vcdp.hpp"

using namespace cqte;

namespace {

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void report(const char* name, double serial, double parallel) {
  std::printf("%-28s serial %8.4fs  parallel %8.4fs  speedup %.2fx\n", name,
              serial, parallel, serial / parallel);
}

}  // namespace

int main() {
  std::printf("threads available: %d\n", omp_get_max_threads());

  GeneratorSpec gen = null_generator(48, 3);
  PanelDataset ds = generate(gen, 200, 1);
  KernelSpec spec;
  spec.h = default_temporal_bandwidth(ds.n);

  double cqte_sink = 0.0;  // defeat dead-code elimination
  const double fit_serial = time_best_of(3, [&] {
    auto [q, s] = fit_raw(ds, 0.5, Exec::serial);
    cqte_sink += q.coeffs(0, 0);
  });
  const double fit_parallel = time_best_of(3, [&] {
    auto [q, s] = fit_raw(ds, 0.5, Exec::parallel);
    cqte_sink += q.coeffs(0, 0);
  });
  report("fit_raw n=200 m=48 d=3", fit_serial, fit_parallel);

  PanelDataset small = generate(null_generator(24, 2), 40, 2);
  KernelSpec small_spec;
  small_spec.h = default_temporal_bandwidth(small.n);
  BootstrapConfig cfg;
  cfg.B = 200;
  cfg.seed = 9;
  const double test_serial = time_best_of(2, [&] {
    cqte_sink += run_test(small, 0.5, Estimand::cqte, small_spec, cfg,
                          Exec::serial).statistic;
  });
  const double test_parallel = time_best_of(2, [&] {
    cqte_sink += run_test(small, 0.5, Estimand::cqte, small_spec, cfg,
                          Exec::parallel).statistic;
  });
  report("run_test n=40 m=24 B=200", test_serial, test_parallel);

  std::printf("(checksum %g)\n", cqte_sink);
  return 0;
}
