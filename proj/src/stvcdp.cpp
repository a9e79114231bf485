#include "cqte/stvcdp.hpp"

#include <exception>

#include "cqte/solvers.hpp"

namespace cqte {

Eigen::MatrixXd SpatialStateCoeffPath::Theta(int t, int region) const {
  Eigen::MatrixXd out(d, d + 3);
  for (int nu = 0; nu < d; ++nu)
    out.row(nu) = coeffs[region].row(t - 1).segment(nu * (d + 3), d + 3);
  return out;
}

namespace {

// Design matrix (1, S, A, Abar) for one (t, region) cell.
Eigen::MatrixXd design_at_st(const SpatioPanelDataset& ds, int t, int region) {
  Eigen::MatrixXd Z(ds.n, ds.d + 3);
  for (int i = 0; i < ds.n; ++i)
    Z.row(i) = ds.design_row(i, t - 1, region).transpose();
  return Z;
}

}  // namespace

std::pair<SpatialQuantileCoeffPath, SpatialStateCoeffPath> fit_raw_st(
    const SpatioPanelDataset& ds, double tau, Exec exec) {
  const int m = ds.m, d = ds.d, r = ds.r;
  SpatialQuantileCoeffPath qp;
  qp.tau = tau;
  qp.d = d;
  qp.stage = SpatialStage::raw;
  qp.coeffs.assign(r, Eigen::MatrixXd(m, d + 3));
  SpatialStateCoeffPath sp;
  sp.d = d;
  sp.stage = SpatialStage::raw;
  sp.coeffs.assign(r, Eigen::MatrixXd(m - 1, d * (d + 3)));

  std::exception_ptr err;
  auto fit_cell = [&](int t, int region) {
    const Eigen::MatrixXd Z = design_at_st(ds, t, region);
    try {
      qp.coeffs[region].row(t - 1) =
          qr_fit(Z, ds.outcomes[region].col(t - 1), tau).transpose();
      if (t <= m - 1) {
        Eigen::MatrixXd Theta = ols_fit(Z, ds.states[region][t]);
        for (int nu = 0; nu < d; ++nu)
          sp.coeffs[region].row(t - 1).segment(nu * (d + 3), d + 3) = Theta.row(nu);
      }
    } catch (const SingularDesignError& e) {
      throw SingularDesignError("cell (t=" + std::to_string(t) + ", region=" +
                                std::to_string(region + 1) + "): " + e.what());
    }
  };

  if (exec == Exec::serial) {
    for (int region = 0; region < r; ++region)
      for (int t = 1; t <= m; ++t) fit_cell(t, region);
  } else {
#pragma omp parallel for schedule(dynamic) collapse(2)
    for (int region = 0; region < r; ++region)
      for (int t = 1; t <= m; ++t) {
        try {
          fit_cell(t, region);
        } catch (...) {
#pragma omp critical
          if (!err) err = std::current_exception();
        }
      }
    if (err) std::rethrow_exception(err);
  }
  return {std::move(qp), std::move(sp)};
}

std::pair<SpatialQuantileCoeffPath, SpatialStateCoeffPath> fit_smoothed_st(
    const SpatialQuantileCoeffPath& qraw, const SpatialStateCoeffPath& sraw,
    const Eigen::MatrixXd& coords, const KernelSpec& spec) {
  const int r = qraw.r();
  SpatialQuantileCoeffPath qs = qraw;
  SpatialStateCoeffPath ss = sraw;

  // Pass 1: time smoothing within each region.
  for (int k = 0; k < r; ++k) {
    qs.coeffs[k] = smooth_path(qraw.coeffs[k], spec);
    ss.coeffs[k] = smooth_path(sraw.coeffs[k], spec);
  }

  // Pass 2: spatial smoothing across regions at each grid point.
  const Eigen::MatrixXd W = spatial_weight_matrix(coords, spec);
  std::vector<Eigen::MatrixXd> q0 = qs.coeffs, s0 = ss.coeffs;
  for (int k = 0; k < r; ++k) {
    qs.coeffs[k].setZero();
    ss.coeffs[k].setZero();
    for (int l = 0; l < r; ++l) {
      qs.coeffs[k] += W(k, l) * q0[l];
      ss.coeffs[k] += W(k, l) * s0[l];
    }
  }
  qs.stage = SpatialStage::fully_smoothed;
  ss.stage = SpatialStage::fully_smoothed;
  return {std::move(qs), std::move(ss)};
}

SpatialResidualSet residuals_st(const SpatioPanelDataset& ds,
                                const SpatialQuantileCoeffPath& qpath,
                                const SpatialStateCoeffPath& spath) {
  if (qpath.r() != ds.r || qpath.m() != ds.m || spath.horizon() != ds.m - 1)
    throw ValidationError("residuals_st: paths do not match dataset");
  SpatialResidualSet rs;
  rs.quantile_residuals.assign(ds.r, Eigen::MatrixXd(ds.n, ds.m));
  rs.state_errors.assign(
      ds.r, std::vector<Eigen::MatrixXd>(ds.m - 1, Eigen::MatrixXd(ds.n, ds.d)));
  for (int k = 0; k < ds.r; ++k)
    for (int t = 1; t <= ds.m; ++t) {
      const Eigen::MatrixXd Z = design_at_st(ds, t, k);
      rs.quantile_residuals[k].col(t - 1) =
          ds.outcomes[k].col(t - 1) - Z * qpath.coeffs[k].row(t - 1).transpose();
      if (t <= ds.m - 1)
        rs.state_errors[k][t - 1] =
            ds.states[k][t] - Z * spath.Theta(t, k).transpose();
    }
  return rs;
}

double cqde_st(const SpatialQuantileCoeffPath& qpath) {
  double sum = 0.0;
  for (int k = 0; k < qpath.r(); ++k)
    for (int t = 1; t <= qpath.m(); ++t)
      sum += qpath.gamma1(t, k) + qpath.gamma2(t, k);
  return sum;
}

double cqie_st(const SpatialQuantileCoeffPath& qpath,
               const SpatialStateCoeffPath& spath) {
  const int m = qpath.m();
  if (m < 2) return 0.0;
  double sum = 0.0;
  for (int k = 0; k < qpath.r(); ++k) {
    Eigen::VectorXd M = spath.Gamma1(1, k) + spath.Gamma2(1, k);
    sum += qpath.beta(2, k).dot(M);
    for (int t = 3; t <= m; ++t) {
      M = spath.Phi(t - 1, k) * M + spath.Gamma1(t - 1, k) + spath.Gamma2(t - 1, k);
      sum += qpath.beta(t, k).dot(M);
    }
  }
  return sum;
}

double cqte_st(const SpatialQuantileCoeffPath& qpath,
               const SpatialStateCoeffPath& spath) {
  return cqde_st(qpath) + cqie_st(qpath, spath);
}

SpatialEstimandReport estimate_st(const SpatioPanelDataset& ds, double tau,
                                  const KernelSpec& spec, Exec exec) {
  ds.validate();
  if (tau <= 0.0 || tau >= 1.0) throw ValidationError("tau must lie in (0,1)");
  auto [qraw, sraw] = fit_raw_st(ds, tau, exec);
  auto [qs, ss] = fit_smoothed_st(qraw, sraw, ds.coords, spec);
  SpatialEstimandReport rep;
  rep.tau = tau;
  rep.cqde = cqde_st(qs);
  rep.cqie = cqie_st(qs, ss);
  rep.cqte = rep.cqde + rep.cqie;
  rep.diagnostics.bandwidth = spec.h;
  rep.qpath = std::move(qs);
  rep.spath = std::move(ss);
  return rep;
}

}  // namespace cqte
