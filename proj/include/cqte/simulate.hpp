#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cqte/bootstrap.hpp"
#include "cqte/panel.hpp"
#include "cqte/vcdp.hpp"

namespace cqte {

enum class ErrorDist { normal, student_t };

// Synthetic VCDP data-generating process. The outcome model is driven by one
// rank variable per day: theta(t, u) = outcome_base(t) + outcome_scale(t) *
// Qz(u), with Qz the standard normal quantile, so every coefficient is
// strictly increasing in u wherever its scale entry is positive. Injected
// treatment coefficients replace the gamma entry with delta times an
// empirical quantile function (table per interval).
struct GeneratorSpec {
  int m = 0;
  int d = 0;
  int ti = 1;  // alternation period

  Eigen::MatrixXd outcome_base;   // m x (d+2)
  Eigen::MatrixXd outcome_scale;  // m x (d+2), nonnegative

  // Injected gamma(t, u) = gamma_delta * Qemp_t(u); empty when not injected.
  std::vector<std::vector<double>> gamma_table;  // m sorted pilot samples
  double gamma_delta = 0.0;

  std::vector<Eigen::MatrixXd> state_theta;  // m-1 of d x (d+2): [phi0 Phi Gamma]

  ErrorDist error_dist = ErrorDist::normal;
  double error_sd = 1.0;
  int t_df = 3;
  Eigen::VectorXd init_mean;  // d
  double init_sd = 1.0;

  bool monotone_flag = false;

  // Outcome coefficient vector at rank u.
  Eigen::VectorXd theta_at(int t, double u) const;

  // tau-section coefficient paths; the closed-form truth of the generator.
  QuantileCoeffPath quantile_path(double tau) const;
  StateCoeffPath state_path() const;

  void validate() const;
};

// Baseline null DGP (gamma = 0, Gamma = 0) with slowly varying coefficient
// paths, outcome level around 10, modest state feedback. The shared starting
// point of the simulation studies.
GeneratorSpec null_generator(int m, int d, ErrorDist dist = ErrorDist::normal);

// Per-interval summaries of a null pilot sample used for effect injection:
// sorted outcome draws and state means.
struct PilotSummaries {
  std::vector<std::vector<double>> outcome_sorted;  // m, each sorted over days
  std::vector<Eigen::VectorXd> state_mean;          // m
};

PilotSummaries pilot_summaries(const GeneratorSpec& null_gen, int days,
                               std::uint64_t seed);

// gamma(t, tau) := delta * Q_tau(Y_t), Gamma(t) := delta * E(S_t) for
// t <= m-1. delta = 0 returns the generator unchanged.
GeneratorSpec inject_effect(const GeneratorSpec& gen, double delta,
                            const PilotSummaries& pilot);

// n days: per day draw U, the initial state and the state error sequence
// from a day-keyed stream; actions follow the alternation design with the
// start bit flipping by day parity.
PanelDataset generate(const GeneratorSpec& gen, int n, std::uint64_t seed);

// Spatiotemporal wrapper: r regions sharing the temporal generator, plus
// constant mean-field spillover coefficients gamma2 (outcome) and Gamma2
// (state), both zero for a spillover-free DGP.
struct SpatialGeneratorSpec {
  GeneratorSpec base;
  int r = 0;
  Eigen::MatrixXd coords;               // r x 2
  std::vector<std::vector<int>> neighbors;
  double gamma2 = 0.0;
  Eigen::VectorXd Gamma2;               // d, applies for t <= m-1

  void validate() const;
};

// Ring-of-regions layout with far-apart coordinates.
SpatialGeneratorSpec spatial_null_generator(int m, int d, int r,
                                            ErrorDist dist = ErrorDist::normal);

SpatioPanelDataset generate_st(const SpatialGeneratorSpec& gen, int n,
                               std::uint64_t seed);

// Brute-force Monte Carlo check of the closed-form estimand: fix one error
// trajectory, simulate the cumulative outcomes under always-treat and
// never-treat over `draws` rank draws, difference the empirical
// tau-quantiles. Standard error via the Woodruff order-statistic bracket.
struct OracleResult {
  double value = 0.0;
  double se = 0.0;
};

OracleResult mc_cqte_oracle(const GeneratorSpec& gen, double tau, int draws,
                            std::uint64_t seed);

struct SimulationConfig {
  double delta = 0.0;
  int ti = 1;
  int n = 20;
  int m = 24;
  int d = 2;
  double tau = 0.5;
  ErrorDist error_dist = ErrorDist::normal;
  Estimand estimand = Estimand::cqte;
  BootstrapConfig bootstrap;
  int runs = 500;
  std::uint64_t seed = 0;
  KernelSpec kernel;  // h <= 0 means the n-based default

  void validate() const;
};

struct RejectionRow {
  double tau = 0.0;
  int ti = 0;
  int n = 0;
  double delta = 0.0;
  double reject_rate = 0.0;
  double se = 0.0;
  int runs = 0;
  int failures = 0;
};

// One cell: fraction of `runs` Monte Carlo datasets on which the bootstrap
// test rejects, with binomial standard error. Runs execute concurrently on
// per-run streams; more than 1% run failures aborts the cell.
RejectionRow rejection_cell(const SimulationConfig& config,
                            Exec exec = Exec::parallel);

std::vector<RejectionRow> run_rejection_study(
    const std::vector<SimulationConfig>& grid, Exec exec = Exec::parallel);

}  // namespace cqte
