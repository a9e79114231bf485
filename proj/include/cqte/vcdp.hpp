#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "cqte/kernel.hpp"
#include "cqte/panel.hpp"

namespace cqte {

enum class Exec { serial, parallel };
enum class Stage { raw, smoothed };

// Time-indexed outcome-model coefficients theta(t, tau) = (b0, b', g)'.
// Row t-1 of `coeffs` holds the d+2 coefficients at interval t.
struct QuantileCoeffPath {
  double tau = 0.0;
  int d = 0;
  Stage stage = Stage::raw;
  Eigen::MatrixXd coeffs;  // m x (d+2)

  int m() const { return static_cast<int>(coeffs.rows()); }
  double beta0(int t) const { return coeffs(t - 1, 0); }
  Eigen::VectorXd beta(int t) const { return coeffs.row(t - 1).segment(1, d); }
  double gamma(int t) const { return coeffs(t - 1, d + 1); }
};

// Time-indexed state-transition coefficients Theta(t) = [phi0 Phi Gamma],
// defined for t = 1..m-1. Stored flattened one row per t so the kernel
// smoother applies uniformly; Theta(t) reconstitutes the d x (d+2) matrix.
struct StateCoeffPath {
  int d = 0;
  Stage stage = Stage::raw;
  Eigen::MatrixXd coeffs;  // (m-1) x (d*(d+2)), row-major per Theta

  int horizon() const { return static_cast<int>(coeffs.rows()); }
  Eigen::MatrixXd Theta(int t) const;
  Eigen::VectorXd phi0(int t) const { return Theta(t).col(0); }
  Eigen::MatrixXd Phi(int t) const { return Theta(t).middleCols(1, d); }
  Eigen::VectorXd Gamma(int t) const { return Theta(t).col(d + 1); }

  static StateCoeffPath from_thetas(const std::vector<Eigen::MatrixXd>& thetas,
                                    Stage stage);
};

// Residuals feeding the bootstrap: e_hat(i, t) from the outcome model and
// E_hat(i, t+1) from the state model (state_errors[t-1] holds E(t+1)).
struct ResidualSet {
  Eigen::MatrixXd quantile_residuals;         // n x m
  std::vector<Eigen::MatrixXd> state_errors;  // m-1 entries, each n x d
};

struct FitDiagnostics {
  std::vector<double> design_condition;  // per t
  double bandwidth = 0.0;
};

struct EstimandReport {
  double tau = 0.0;
  double cqte = 0.0;
  double cqde = 0.0;
  double cqie = 0.0;
  QuantileCoeffPath qpath;   // smoothed
  StateCoeffPath spath;      // smoothed
  FitDiagnostics diagnostics;
};

// Per-interval quantile regression of Y on (1, S, A) and per-interval least
// squares of S(t+1) on (1, S(t), A(t)). Each interval is independent; the
// parallel path runs them under OpenMP and gathers by t index.
std::pair<QuantileCoeffPath, StateCoeffPath> fit_raw(const PanelDataset& ds,
                                                     double tau,
                                                     Exec exec = Exec::parallel);

// Kernel-smooth both coefficient paths over their own time grids.
std::pair<QuantileCoeffPath, StateCoeffPath> fit_smoothed(
    const QuantileCoeffPath& qraw, const StateCoeffPath& sraw,
    const KernelSpec& spec);

// e_hat(i,t) = Y(i,t) - Z(i,t)'theta(t); E_hat(i,t+1) = S(i,t+1) - Theta(t)Z(i,t).
ResidualSet residuals(const PanelDataset& ds, const QuantileCoeffPath& qpath,
                      const StateCoeffPath& spath);

// Closed-form plug-in estimands. The carryover sum is accumulated with the
// running recursion M(t+1) = Phi(t) M(t) + Gamma(t), M(2) = Gamma(1), which
// honors the empty-product (identity) convention.
double cqde(const QuantileCoeffPath& qpath);
double cqie(const QuantileCoeffPath& qpath, const StateCoeffPath& spath);
double cqte_closed_form(const QuantileCoeffPath& qpath,
                        const StateCoeffPath& spath);

// Full two-step pipeline: raw fits, kernel smoothing, plug-in estimands.
// tau outside [eps, 1-eps] (default eps 0.05) proceeds but is flagged in
// the diagnostics by the caller-facing CLI.
EstimandReport estimate(const PanelDataset& ds, double tau,
                        const KernelSpec& spec, Exec exec = Exec::parallel);

}  // namespace cqte
