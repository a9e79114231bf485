#include "cqte/vcdp.hpp"

#include <exception>
#include <memory>

#include "cqte/solvers.hpp"

namespace cqte {

Eigen::MatrixXd StateCoeffPath::Theta(int t) const {
  Eigen::MatrixXd out(d, d + 2);
  for (int nu = 0; nu < d; ++nu)
    out.row(nu) = coeffs.row(t - 1).segment(nu * (d + 2), d + 2);
  return out;
}

StateCoeffPath StateCoeffPath::from_thetas(
    const std::vector<Eigen::MatrixXd>& thetas, Stage stage) {
  StateCoeffPath sp;
  sp.stage = stage;
  sp.d = thetas.empty() ? 0 : static_cast<int>(thetas[0].rows());
  sp.coeffs.resize(static_cast<int>(thetas.size()), sp.d * (sp.d + 2));
  for (size_t t = 0; t < thetas.size(); ++t)
    for (int nu = 0; nu < sp.d; ++nu)
      sp.coeffs.row(static_cast<int>(t)).segment(nu * (sp.d + 2), sp.d + 2) =
          thetas[t].row(nu);
  return sp;
}

namespace {

// Design matrix (1, S, A) at interval t (1-based).
Eigen::MatrixXd design_at(const PanelDataset& ds, int t) {
  Eigen::MatrixXd Z(ds.n, ds.d + 2);
  Z.col(0).setOnes();
  Z.middleCols(1, ds.d) = ds.states[t - 1];
  Z.col(ds.d + 1) = ds.actions.col(t - 1).cast<double>();
  return Z;
}

void check_positivity(const PanelDataset& ds, int t) {
  int ones = 0;
  for (int i = 0; i < ds.n; ++i) ones += ds.actions(i, t - 1);
  if (ones == 0 || ones == ds.n)
    throw SingularDesignError("constant action column at interval t=" +
                              std::to_string(t) +
                              ": alternation violated in sample");
}

}  // namespace

std::pair<QuantileCoeffPath, StateCoeffPath> fit_raw(const PanelDataset& ds,
                                                     double tau, Exec exec) {
  const int m = ds.m, d = ds.d;
  QuantileCoeffPath qp;
  qp.tau = tau;
  qp.d = d;
  qp.stage = Stage::raw;
  qp.coeffs.resize(m, d + 2);
  std::vector<Eigen::MatrixXd> thetas(m - 1);

  std::exception_ptr err;
  auto fit_one = [&](int t) {
    check_positivity(ds, t);
    const Eigen::MatrixXd Z = design_at(ds, t);
    try {
      qp.coeffs.row(t - 1) = qr_fit(Z, ds.outcomes.col(t - 1), tau).transpose();
    } catch (const SingularDesignError& e) {
      throw SingularDesignError("interval t=" + std::to_string(t) + ": " + e.what());
    }
    if (t <= m - 1) {
      Eigen::MatrixXd Snext(ds.n, d);
      Snext = ds.states[t];
      thetas[t - 1] = ols_fit(Z, Snext);
    }
  };

  if (exec == Exec::serial) {
    for (int t = 1; t <= m; ++t) fit_one(t);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (int t = 1; t <= m; ++t) {
      try {
        fit_one(t);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  }

  return {std::move(qp), StateCoeffPath::from_thetas(thetas, Stage::raw)};
}

std::pair<QuantileCoeffPath, StateCoeffPath> fit_smoothed(
    const QuantileCoeffPath& qraw, const StateCoeffPath& sraw,
    const KernelSpec& spec) {
  QuantileCoeffPath qs = qraw;
  qs.coeffs = smooth_path(qraw.coeffs, spec);
  qs.stage = Stage::smoothed;
  StateCoeffPath ss = sraw;
  if (sraw.horizon() > 1) ss.coeffs = smooth_path(sraw.coeffs, spec);
  ss.stage = Stage::smoothed;
  return {std::move(qs), std::move(ss)};
}

ResidualSet residuals(const PanelDataset& ds, const QuantileCoeffPath& qpath,
                      const StateCoeffPath& spath) {
  if (qpath.m() != ds.m || spath.horizon() != ds.m - 1 || qpath.d != ds.d)
    throw ValidationError("residuals: paths do not match dataset");
  ResidualSet rs;
  rs.quantile_residuals.resize(ds.n, ds.m);
  rs.state_errors.assign(ds.m - 1, Eigen::MatrixXd(ds.n, ds.d));
  for (int t = 1; t <= ds.m; ++t) {
    const Eigen::MatrixXd Z = design_at(ds, t);
    rs.quantile_residuals.col(t - 1) =
        ds.outcomes.col(t - 1) - Z * qpath.coeffs.row(t - 1).transpose();
    if (t <= ds.m - 1)
      rs.state_errors[t - 1] = ds.states[t] - Z * spath.Theta(t).transpose();
  }
  return rs;
}

double cqde(const QuantileCoeffPath& qpath) {
  double sum = 0.0;
  for (int t = 1; t <= qpath.m(); ++t) sum += qpath.gamma(t);
  return sum;
}

double cqie(const QuantileCoeffPath& qpath, const StateCoeffPath& spath) {
  const int m = qpath.m();
  if (m < 2) return 0.0;
  if (spath.horizon() != m - 1 || spath.d != qpath.d)
    throw ValidationError("cqie: path shapes disagree");
  // M holds sum_{k<=t-1} [prod_{l=k+1..t-1} Phi(l)] Gamma(k) at interval t.
  Eigen::VectorXd M = spath.Gamma(1);  // t = 2
  double sum = qpath.beta(2).dot(M);
  for (int t = 3; t <= m; ++t) {
    M = spath.Phi(t - 1) * M + spath.Gamma(t - 1);
    sum += qpath.beta(t).dot(M);
  }
  return sum;
}

double cqte_closed_form(const QuantileCoeffPath& qpath,
                        const StateCoeffPath& spath) {
  return cqde(qpath) + cqie(qpath, spath);
}

EstimandReport estimate(const PanelDataset& ds, double tau,
                        const KernelSpec& spec, Exec exec) {
  ds.validate();
  if (tau <= 0.0 || tau >= 1.0) throw ValidationError("tau must lie in (0,1)");
  auto [qraw, sraw] = fit_raw(ds, tau, exec);
  auto [qs, ss] = fit_smoothed(qraw, sraw, spec);

  EstimandReport rep;
  rep.tau = tau;
  rep.cqde = cqde(qs);
  rep.cqie = cqie(qs, ss);
  rep.cqte = rep.cqde + rep.cqie;
  rep.diagnostics.bandwidth = spec.h;
  rep.diagnostics.design_condition.resize(ds.m);
  for (int t = 1; t <= ds.m; ++t)
    rep.diagnostics.design_condition[t - 1] = condition_number(design_at(ds, t));
  rep.qpath = std::move(qs);
  rep.spath = std::move(ss);
  return rep;
}

}  // namespace cqte
