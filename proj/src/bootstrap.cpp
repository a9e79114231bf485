#include "cqte/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <vector>

namespace cqte {

Estimand estimand_from_name(const std::string& name) {
  if (name == "cqte") return Estimand::cqte;
  if (name == "cqde") return Estimand::cqde;
  if (name == "cqie") return Estimand::cqie;
  throw ValidationError("unknown estimand '" + name + "'");
}

std::string estimand_name(Estimand e) {
  switch (e) {
    case Estimand::cqte: return "cqte";
    case Estimand::cqde: return "cqde";
    case Estimand::cqie: return "cqie";
  }
  return "?";
}

ResampleMode resample_mode_from_name(const std::string& name) {
  if (name == "within_day_time_iid") return ResampleMode::within_day_time_iid;
  if (name == "whole_day_process") return ResampleMode::whole_day_process;
  throw ValidationError("unknown resample mode '" + name + "'");
}

std::string resample_mode_name(ResampleMode m) {
  return m == ResampleMode::within_day_time_iid ? "within_day_time_iid"
                                                : "whole_day_process";
}

std::string pvalue_mode_name(PValueMode m) {
  return m == PValueMode::empirical_quantile ? "empirical_quantile"
                                             : "normal_approx";
}

void BootstrapConfig::validate(Estimand estimand) const {
  if (B < 100) throw ValidationError("bootstrap needs B >= 100 for test use");
  if (!(alpha > 0.0 && alpha < 0.5))
    throw ValidationError("alpha must lie in (0, 0.5)");
  if (pvalue_mode == PValueMode::normal_approx && estimand != Estimand::cqde)
    throw ValidationError("normal_approx p-values are available for cqde only");
}

ResidualSet resample_residuals(const ResidualSet& res, ResampleMode mode,
                               bool paired, Rng& rng) {
  const int n = static_cast<int>(res.quantile_residuals.rows());
  const int m = static_cast<int>(res.quantile_residuals.cols());
  ResidualSet out;
  out.quantile_residuals.resize(n, m);
  out.state_errors.assign(res.state_errors.size(),
                          Eigen::MatrixXd(n, res.state_errors.empty()
                                                 ? 0
                                                 : res.state_errors[0].cols()));
  if (mode == ResampleMode::whole_day_process) {
    for (int i = 0; i < n; ++i) {
      const int j = static_cast<int>(rng.below(n));
      out.quantile_residuals.row(i) = res.quantile_residuals.row(j);
      for (size_t t = 0; t < res.state_errors.size(); ++t)
        out.state_errors[t].row(i) = res.state_errors[t].row(j);
    }
    return out;
  }
  for (int i = 0; i < n; ++i) {
    if (paired) {
      // One common time draw per t >= 2 keeps the contemporaneous
      // outcome/state error pair together; e(1) has no state partner.
      out.quantile_residuals(i, 0) =
          res.quantile_residuals(i, static_cast<int>(rng.below(m)));
      for (int t = 1; t < m; ++t) {
        const int k = 1 + static_cast<int>(rng.below(m - 1));
        out.quantile_residuals(i, t) = res.quantile_residuals(i, k);
        out.state_errors[t - 1].row(i) = res.state_errors[k - 1].row(i);
      }
    } else {
      for (int t = 0; t < m; ++t)
        out.quantile_residuals(i, t) =
            res.quantile_residuals(i, static_cast<int>(rng.below(m)));
      for (size_t t = 0; t < res.state_errors.size(); ++t)
        out.state_errors[t].row(i) =
            res.state_errors[rng.below(res.state_errors.size())].row(i);
    }
  }
  return out;
}

SpatialResidualSet resample_residuals_st(const SpatialResidualSet& res,
                                         ResampleMode mode, bool paired,
                                         Rng& rng) {
  const int r = static_cast<int>(res.quantile_residuals.size());
  const int n = static_cast<int>(res.quantile_residuals[0].rows());
  const int m = static_cast<int>(res.quantile_residuals[0].cols());
  SpatialResidualSet out = res;
  if (mode == ResampleMode::whole_day_process) {
    for (int i = 0; i < n; ++i) {
      const int j = static_cast<int>(rng.below(n));
      for (int k = 0; k < r; ++k) {
        out.quantile_residuals[k].row(i) = res.quantile_residuals[k].row(j);
        for (int t = 0; t < m - 1; ++t)
          out.state_errors[k][t].row(i) = res.state_errors[k][t].row(j);
      }
    }
    return out;
  }
  // Within-day draws shared across regions: each time-t cross-section of
  // errors moves as one block.
  for (int i = 0; i < n; ++i) {
    if (paired) {
      const int k0 = static_cast<int>(rng.below(m));
      for (int k = 0; k < r; ++k)
        out.quantile_residuals[k](i, 0) = res.quantile_residuals[k](i, k0);
      for (int t = 1; t < m; ++t) {
        const int kt = 1 + static_cast<int>(rng.below(m - 1));
        for (int k = 0; k < r; ++k) {
          out.quantile_residuals[k](i, t) = res.quantile_residuals[k](i, kt);
          out.state_errors[k][t - 1].row(i) = res.state_errors[k][kt - 1].row(i);
        }
      }
    } else {
      for (int t = 0; t < m; ++t) {
        const int j = static_cast<int>(rng.below(m));
        for (int k = 0; k < r; ++k)
          out.quantile_residuals[k](i, t) = res.quantile_residuals[k](i, j);
      }
      for (int t = 0; t < m - 1; ++t) {
        const int j = static_cast<int>(rng.below(m - 1));
        for (int k = 0; k < r; ++k)
          out.state_errors[k][t].row(i) = res.state_errors[k][j].row(i);
      }
    }
  }
  return out;
}

PanelDataset generate_pseudo(const PanelDataset& ds,
                             const QuantileCoeffPath& qpath,
                             const StateCoeffPath& spath,
                             const ResidualSet& resampled) {
  PanelDataset out;
  out.n = ds.n;
  out.m = ds.m;
  out.d = ds.d;
  out.actions = ds.actions;  // design held fixed
  out.outcomes.resize(ds.n, ds.m);
  out.states.assign(ds.m, Eigen::MatrixXd(ds.n, ds.d));
  out.states[0] = ds.states[0];  // recursion starts from the observed state
  for (int i = 0; i < ds.n; ++i) {
    Eigen::VectorXd z(ds.d + 2);
    z(0) = 1.0;
    for (int t = 1; t <= ds.m; ++t) {
      z.segment(1, ds.d) = out.states[t - 1].row(i);
      z(ds.d + 1) = static_cast<double>(ds.actions(i, t - 1));
      out.outcomes(i, t - 1) = z.dot(qpath.coeffs.row(t - 1)) +
                               resampled.quantile_residuals(i, t - 1);
      if (t <= ds.m - 1)
        out.states[t].row(i) = (spath.Theta(t) * z).transpose() +
                               resampled.state_errors[t - 1].row(i);
    }
  }
  return out;
}

SpatioPanelDataset generate_pseudo_st(const SpatioPanelDataset& ds,
                                      const SpatialQuantileCoeffPath& qpath,
                                      const SpatialStateCoeffPath& spath,
                                      const SpatialResidualSet& resampled) {
  SpatioPanelDataset out = ds;  // copies actions, adjacency, coords
  for (int k = 0; k < ds.r; ++k) {
    out.states[k][0] = ds.states[k][0];
    out.outcomes[k].setZero();
  }
  // The neighbor-average regressor depends on actions only, which are held
  // fixed, so cells can be evolved region by region.
  for (int k = 0; k < ds.r; ++k)
    for (int i = 0; i < ds.n; ++i) {
      Eigen::VectorXd z(ds.d + 3);
      z(0) = 1.0;
      for (int t = 1; t <= ds.m; ++t) {
        z.segment(1, ds.d) = out.states[k][t - 1].row(i);
        z(ds.d + 1) = static_cast<double>(ds.actions[k](i, t - 1));
        z(ds.d + 2) = ds.neighbor_action_mean(i, t - 1, k);
        out.outcomes[k](i, t - 1) = z.dot(qpath.coeffs[k].row(t - 1)) +
                                    resampled.quantile_residuals[k](i, t - 1);
        if (t <= ds.m - 1)
          out.states[k][t].row(i) = (spath.Theta(t, k) * z).transpose() +
                                    resampled.state_errors[k][t - 1].row(i);
      }
    }
  return out;
}

namespace {

double pick_estimand(Estimand which, double de, double ie) {
  switch (which) {
    case Estimand::cqte: return de + ie;
    case Estimand::cqde: return de;
    case Estimand::cqie: return ie;
  }
  return 0.0;
}

// Shared tail: turn the bootstrap draws into critical value / p-value /
// decision under the configured mode.
void finalize(TestResult& res) {
  const int B = static_cast<int>(res.draws.size());
  const double alpha = res.config.alpha;
  if (res.config.pvalue_mode == PValueMode::empirical_quantile) {
    std::vector<double> sorted(res.draws.data(), res.draws.data() + B);
    std::sort(sorted.begin(), sorted.end());
    const int k = static_cast<int>(std::ceil((1.0 - alpha) * B));
    res.critical_value = sorted[std::min(std::max(k, 1), B) - 1];
    int count = 0;
    for (double v : sorted)
      if (v >= res.statistic) ++count;
    res.p_value = (1.0 + count) / (B + 1.0);
  } else {
    const double mean = res.draws.mean();
    const double sd = std::sqrt(
        (res.draws.array() - mean).square().sum() / (B - 1));
    res.critical_value = normal_quantile(1.0 - alpha) * sd;
    res.p_value = sd > 0.0 ? normal_upper_tail(res.statistic / sd)
                           : (res.statistic > 0.0 ? 0.0 : 1.0);
  }
  res.reject = res.statistic > res.critical_value;
}

}  // namespace

TestResult run_test(const PanelDataset& ds, double tau, Estimand estimand,
                    const KernelSpec& spec, const BootstrapConfig& config,
                    Exec exec) {
  config.validate(estimand);
  EstimandReport rep = estimate(ds, tau, spec, exec);
  const ResidualSet res = residuals(ds, rep.qpath, rep.spath);

  TestResult out;
  out.estimand = estimand;
  out.tau = tau;
  out.config = config;
  out.statistic = pick_estimand(estimand, rep.cqde, rep.cqie);
  out.draws.resize(config.B);

  std::exception_ptr err;
  auto one_rep = [&](int b) {
    for (int attempt = 0;; ++attempt) {
      try {
        Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(b) + 1,
                              attempt, 0xb007);
        ResidualSet rs = resample_residuals(res, config.resample_mode,
                                            config.paired_resample, rng);
        PanelDataset pseudo = generate_pseudo(ds, rep.qpath, rep.spath, rs);
        auto [qraw, sraw] = fit_raw(pseudo, tau, Exec::serial);
        auto [qs, ss] = fit_smoothed(qraw, sraw, spec);
        out.draws(b) =
            pick_estimand(estimand, cqde(qs), cqie(qs, ss)) - out.statistic;
        return;
      } catch (const std::exception& e) {
        if (attempt >= 4)
          throw ConvergenceError("bootstrap replication " + std::to_string(b) +
                                 " failed after 5 resampling attempts: " +
                                 e.what());
      }
    }
  };

  if (exec == Exec::serial) {
    for (int b = 0; b < config.B; ++b) one_rep(b);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < config.B; ++b) {
      try {
        one_rep(b);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  }

  finalize(out);
  return out;
}

TestResult run_test_st(const SpatioPanelDataset& ds, double tau,
                       Estimand estimand, const KernelSpec& spec,
                       const BootstrapConfig& config, Exec exec) {
  config.validate(estimand);
  SpatialEstimandReport rep = estimate_st(ds, tau, spec, exec);
  const SpatialResidualSet res = residuals_st(ds, rep.qpath, rep.spath);

  TestResult out;
  out.estimand = estimand;
  out.tau = tau;
  out.config = config;
  out.statistic = pick_estimand(estimand, rep.cqde, rep.cqie);
  out.draws.resize(config.B);

  std::exception_ptr err;
  auto one_rep = [&](int b) {
    for (int attempt = 0;; ++attempt) {
      try {
        Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(b) + 1,
                              attempt, 0x57b007);
        SpatialResidualSet rs = resample_residuals_st(
            res, config.resample_mode, config.paired_resample, rng);
        SpatioPanelDataset pseudo = generate_pseudo_st(ds, rep.qpath, rep.spath, rs);
        auto [qraw, sraw] = fit_raw_st(pseudo, tau, Exec::serial);
        auto [qs, ss] = fit_smoothed_st(qraw, sraw, ds.coords, spec);
        out.draws(b) =
            pick_estimand(estimand, cqde_st(qs), cqie_st(qs, ss)) - out.statistic;
        return;
      } catch (const std::exception& e) {
        if (attempt >= 4)
          throw ConvergenceError("bootstrap replication " + std::to_string(b) +
                                 " failed after 5 resampling attempts: " +
                                 e.what());
      }
    }
  };

  if (exec == Exec::serial) {
    for (int b = 0; b < config.B; ++b) one_rep(b);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (int b = 0; b < config.B; ++b) {
      try {
        one_rep(b);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  }

  finalize(out);
  return out;
}

}  // namespace cqte
