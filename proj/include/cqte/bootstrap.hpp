#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

#include "cqte/panel.hpp"
#include "cqte/rng.hpp"
#include "cqte/stvcdp.hpp"
#include "cqte/vcdp.hpp"

namespace cqte {

enum class Estimand { cqte, cqde, cqie };
enum class ResampleMode { within_day_time_iid, whole_day_process };
enum class PValueMode { empirical_quantile, normal_approx };

Estimand estimand_from_name(const std::string& name);
std::string estimand_name(Estimand e);
ResampleMode resample_mode_from_name(const std::string& name);
std::string resample_mode_name(ResampleMode m);
std::string pvalue_mode_name(PValueMode m);

struct BootstrapConfig {
  int B = 500;
  ResampleMode resample_mode = ResampleMode::within_day_time_iid;
  // Couple the outcome-residual and state-error time draws (within-day mode).
  bool paired_resample = false;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  PValueMode pvalue_mode = PValueMode::empirical_quantile;

  void validate(Estimand estimand) const;
};

struct TestResult {
  Estimand estimand = Estimand::cqte;
  double tau = 0.0;
  double statistic = 0.0;
  Eigen::VectorXd draws;  // B entries of T^b - T
  double critical_value = 0.0;
  double p_value = 1.0;
  bool reject = false;
  BootstrapConfig config;
};

// One resampling pass. Within-day mode draws time indices independently per
// day (each state-error vector stays intact across its d coordinates);
// whole-day mode draws day indices and keeps entire (e, E) trajectories
// paired. Deterministic given the rng stream.
ResidualSet resample_residuals(const ResidualSet& res, ResampleMode mode,
                               bool paired, Rng& rng);

// Spatiotemporal resampling: time (or day) draws are shared across regions
// so each cross-section of errors stays intact, preserving spatial
// dependence.
SpatialResidualSet resample_residuals_st(const SpatialResidualSet& res,
                                         ResampleMode mode, bool paired,
                                         Rng& rng);

// Pseudo panel per the residual-bootstrap recursion: states evolve from each
// day's observed initial state with actions held fixed, pseudo design rows
// are rebuilt from pseudo states, outcomes come from the smoothed outcome
// model plus the resampled residuals.
PanelDataset generate_pseudo(const PanelDataset& ds,
                             const QuantileCoeffPath& qpath,
                             const StateCoeffPath& spath,
                             const ResidualSet& resampled);

SpatioPanelDataset generate_pseudo_st(const SpatioPanelDataset& ds,
                                      const SpatialQuantileCoeffPath& qpath,
                                      const SpatialStateCoeffPath& spath,
                                      const SpatialResidualSet& resampled);

// Full residual-bootstrap test. Replications run concurrently, each on its
// own (seed, b)-derived stream, so the result is bit-identical across thread
// counts. A replication whose refit fails is retried with a fresh resample
// up to 5 times before the whole test aborts.
TestResult run_test(const PanelDataset& ds, double tau, Estimand estimand,
                    const KernelSpec& spec, const BootstrapConfig& config,
                    Exec exec = Exec::parallel);

TestResult run_test_st(const SpatioPanelDataset& ds, double tau,
                       Estimand estimand, const KernelSpec& spec,
                       const BootstrapConfig& config,
                       Exec exec = Exec::parallel);

}  // namespace cqte
