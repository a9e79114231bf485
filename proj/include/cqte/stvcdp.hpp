#pragma once

#include <Eigen/Dense>
#include <vector>

#include "cqte/kernel.hpp"
#include "cqte/panel.hpp"
#include "cqte/vcdp.hpp"

namespace cqte {

enum class SpatialStage { raw, time_smoothed, fully_smoothed };

// Outcome-model coefficients theta(t, iota, tau) = (b0, b', g1, g2)' on the
// [m x r] grid. coeffs[iota] is an m x (d+3) matrix, one row per interval.
struct SpatialQuantileCoeffPath {
  double tau = 0.0;
  int d = 0;
  SpatialStage stage = SpatialStage::raw;
  std::vector<Eigen::MatrixXd> coeffs;  // r entries, m x (d+3)

  int r() const { return static_cast<int>(coeffs.size()); }
  int m() const { return static_cast<int>(coeffs[0].rows()); }
  Eigen::VectorXd beta(int t, int region) const {
    return coeffs[region].row(t - 1).segment(1, d);
  }
  double gamma1(int t, int region) const { return coeffs[region](t - 1, d + 1); }
  double gamma2(int t, int region) const { return coeffs[region](t - 1, d + 2); }
};

// State-model coefficients Theta(t, iota) = [phi0 Phi Gamma1 Gamma2] on the
// [(m-1) x r] grid, flattened per region exactly like StateCoeffPath.
struct SpatialStateCoeffPath {
  int d = 0;
  SpatialStage stage = SpatialStage::raw;
  std::vector<Eigen::MatrixXd> coeffs;  // r entries, (m-1) x (d*(d+3))

  int r() const { return static_cast<int>(coeffs.size()); }
  int horizon() const { return static_cast<int>(coeffs[0].rows()); }
  Eigen::MatrixXd Theta(int t, int region) const;
  Eigen::MatrixXd Phi(int t, int region) const {
    return Theta(t, region).middleCols(1, d);
  }
  Eigen::VectorXd Gamma1(int t, int region) const {
    return Theta(t, region).col(d + 1);
  }
  Eigen::VectorXd Gamma2(int t, int region) const {
    return Theta(t, region).col(d + 2);
  }
};

struct SpatialResidualSet {
  std::vector<Eigen::MatrixXd> quantile_residuals;             // [r], n x m
  std::vector<std::vector<Eigen::MatrixXd>> state_errors;      // [r][m-1], n x d
};

struct SpatialEstimandReport {
  double tau = 0.0;
  double cqte = 0.0;
  double cqde = 0.0;
  double cqie = 0.0;
  SpatialQuantileCoeffPath qpath;
  SpatialStateCoeffPath spath;
  FitDiagnostics diagnostics;
};

// Per-(t, region) quantile regression of Y on (1, S, A, Abar) and least
// squares of S(t+1) on the same row. Cells are independent and run under
// OpenMP in the parallel path.
std::pair<SpatialQuantileCoeffPath, SpatialStateCoeffPath> fit_raw_st(
    const SpatioPanelDataset& ds, double tau, Exec exec = Exec::parallel);

// Time smoothing per region first, then spatial smoothing across regions
// with the product-kernel weights (in that order only).
std::pair<SpatialQuantileCoeffPath, SpatialStateCoeffPath> fit_smoothed_st(
    const SpatialQuantileCoeffPath& qraw, const SpatialStateCoeffPath& sraw,
    const Eigen::MatrixXd& coords, const KernelSpec& spec);

SpatialResidualSet residuals_st(const SpatioPanelDataset& ds,
                                const SpatialQuantileCoeffPath& qpath,
                                const SpatialStateCoeffPath& spath);

// Region-aggregated closed forms; the per-region recursion is the temporal
// one with gamma1+gamma2 and Gamma1+Gamma2.
double cqde_st(const SpatialQuantileCoeffPath& qpath);
double cqie_st(const SpatialQuantileCoeffPath& qpath,
               const SpatialStateCoeffPath& spath);
double cqte_st(const SpatialQuantileCoeffPath& qpath,
               const SpatialStateCoeffPath& spath);

SpatialEstimandReport estimate_st(const SpatioPanelDataset& ds, double tau,
                                  const KernelSpec& spec,
                                  Exec exec = Exec::parallel);

}  // namespace cqte
