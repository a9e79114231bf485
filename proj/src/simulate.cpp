#include "cqte/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

namespace cqte {

namespace {

double emp_quantile(const std::vector<double>& sorted, double u) {
  const size_t n = sorted.size();
  size_t k = static_cast<size_t>(u * static_cast<double>(n));
  if (k >= n) k = n - 1;
  return sorted[k];
}

double draw_error(const GeneratorSpec& gen, Rng& rng) {
  switch (gen.error_dist) {
    case ErrorDist::normal: return gen.error_sd * rng.normal();
    case ErrorDist::student_t: return gen.error_sd * rng.student_t(gen.t_df);
  }
  return 0.0;
}

}  // namespace

Eigen::VectorXd GeneratorSpec::theta_at(int t, double u) const {
  const double qz = normal_quantile(u);
  Eigen::VectorXd th =
      outcome_base.row(t - 1).transpose() + qz * outcome_scale.row(t - 1).transpose();
  if (!gamma_table.empty())
    th(d + 1) = gamma_delta * emp_quantile(gamma_table[t - 1], u);
  return th;
}

QuantileCoeffPath GeneratorSpec::quantile_path(double tau) const {
  QuantileCoeffPath qp;
  qp.tau = tau;
  qp.d = d;
  qp.stage = Stage::raw;
  qp.coeffs.resize(m, d + 2);
  for (int t = 1; t <= m; ++t) qp.coeffs.row(t - 1) = theta_at(t, tau).transpose();
  return qp;
}

StateCoeffPath GeneratorSpec::state_path() const {
  return StateCoeffPath::from_thetas(state_theta, Stage::raw);
}

void GeneratorSpec::validate() const {
  if (m < 1 || d < 1) throw ValidationError("generator needs m >= 1, d >= 1");
  if (outcome_base.rows() != m || outcome_base.cols() != d + 2 ||
      outcome_scale.rows() != m || outcome_scale.cols() != d + 2)
    throw ValidationError("generator outcome coefficient shape mismatch");
  if ((outcome_scale.array() < 0.0).any())
    throw ValidationError("outcome rank scales must be nonnegative");
  if (static_cast<int>(state_theta.size()) != m - 1)
    throw ValidationError("generator state coefficient length mismatch");
  if (init_mean.size() != d) throw ValidationError("init_mean size mismatch");
  if (!gamma_table.empty() && static_cast<int>(gamma_table.size()) != m)
    throw ValidationError("gamma table length mismatch");
  if (monotone_flag) {
    // Sufficient condition for the structural-quantile equivalence: outcome
    // coefficients strictly increasing in the rank, state coefficients
    // nonnegative.
    for (int t = 1; t <= m; ++t) {
      if (!(outcome_scale(t - 1, 0) > 0.0))
        throw ValidationError("monotone generator needs positive beta0 scale");
      for (int j = 1; j <= d; ++j)
        if (!(outcome_scale(t - 1, j) > 0.0))
          throw ValidationError("monotone generator needs positive beta scales");
      if (gamma_table.empty() && !(outcome_scale(t - 1, d + 1) > 0.0))
        throw ValidationError("monotone generator needs positive gamma scale");
    }
    for (const auto& th : state_theta)
      if ((th.array() < 0.0).any())
        throw ValidationError("monotone generator needs nonnegative state coefficients");
  }
}

GeneratorSpec null_generator(int m, int d, ErrorDist dist) {
  GeneratorSpec gen;
  gen.m = m;
  gen.d = d;
  gen.outcome_base.resize(m, d + 2);
  gen.outcome_scale.resize(m, d + 2);
  const double two_pi = 6.283185307179586;
  for (int t = 1; t <= m; ++t) {
    gen.outcome_base(t - 1, 0) = 10.0 + std::sin(two_pi * t / m);
    for (int j = 1; j <= d; ++j)
      gen.outcome_base(t - 1, j) = 0.3 + 0.1 * std::cos(two_pi * t / m + j);
    gen.outcome_base(t - 1, d + 1) = 0.0;  // null: no treatment effect
    gen.outcome_scale(t - 1, 0) = 1.0;
    for (int j = 1; j <= d; ++j) gen.outcome_scale(t - 1, j) = 0.05;
    gen.outcome_scale(t - 1, d + 1) = 0.0;
  }
  gen.state_theta.assign(m - 1, Eigen::MatrixXd::Zero(d, d + 2));
  for (int t = 1; t <= m - 1; ++t) {
    auto& th = gen.state_theta[t - 1];
    th.col(0).setConstant(0.5 + 0.1 * std::sin(two_pi * t / m));
    th.middleCols(1, d) = 0.15 * Eigen::MatrixXd::Identity(d, d) +
                          0.025 * Eigen::MatrixXd::Ones(d, d);
    th.col(d + 1).setZero();  // null: no carryover
  }
  gen.error_dist = dist;
  gen.error_sd = 2.0;
  gen.init_mean = Eigen::VectorXd::Constant(d, 1.0);
  gen.init_sd = 0.5;
  gen.monotone_flag = false;
  return gen;
}

PilotSummaries pilot_summaries(const GeneratorSpec& null_gen, int days,
                               std::uint64_t seed) {
  PanelDataset pilot = generate(null_gen, days, seed);
  PilotSummaries out;
  out.outcome_sorted.resize(null_gen.m);
  out.state_mean.resize(null_gen.m);
  for (int t = 0; t < null_gen.m; ++t) {
    out.outcome_sorted[t].assign(pilot.outcomes.col(t).data(),
                                 pilot.outcomes.col(t).data() + days);
    std::sort(out.outcome_sorted[t].begin(), out.outcome_sorted[t].end());
    out.state_mean[t] = pilot.states[t].colwise().mean().transpose();
  }
  return out;
}

GeneratorSpec inject_effect(const GeneratorSpec& gen, double delta,
                            const PilotSummaries& pilot) {
  if (delta == 0.0) return gen;
  if (delta < 0.0) throw ValidationError("delta must be nonnegative");
  if (static_cast<int>(pilot.outcome_sorted.size()) != gen.m)
    throw ValidationError("pilot summaries do not match the generator");
  GeneratorSpec out = gen;
  out.gamma_table = pilot.outcome_sorted;
  out.gamma_delta = delta;
  for (int t = 1; t <= gen.m - 1; ++t)
    out.state_theta[t - 1].col(gen.d + 1) = delta * pilot.state_mean[t - 1];
  return out;
}

PanelDataset generate(const GeneratorSpec& gen, int n, std::uint64_t seed) {
  gen.validate();
  if (n < 2) throw ValidationError("generate needs n >= 2");
  PanelDataset ds;
  ds.n = n;
  ds.m = gen.m;
  ds.d = gen.d;
  ds.outcomes.resize(n, gen.m);
  ds.actions.resize(n, gen.m);
  ds.states.assign(gen.m, Eigen::MatrixXd(n, gen.d));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i) + 1, 0, 0xda7a);
    const double u = rng.uniform_open();
    const std::vector<int> a = alternating_design(gen.m, gen.ti, i % 2);
    Eigen::VectorXd s(gen.d);
    for (int j = 0; j < gen.d; ++j)
      s(j) = gen.init_mean(j) + gen.init_sd * rng.normal();
    Eigen::VectorXd z(gen.d + 2);
    z(0) = 1.0;
    for (int t = 1; t <= gen.m; ++t) {
      ds.actions(i, t - 1) = a[t - 1];
      ds.states[t - 1].row(i) = s.transpose();
      z.segment(1, gen.d) = s;
      z(gen.d + 1) = static_cast<double>(a[t - 1]);
      ds.outcomes(i, t - 1) = z.dot(gen.theta_at(t, u));
      if (t <= gen.m - 1) {
        Eigen::VectorXd e(gen.d);
        for (int j = 0; j < gen.d; ++j) e(j) = draw_error(gen, rng);
        s = gen.state_theta[t - 1] * z + e;
      }
    }
  }
  return ds;
}

void SpatialGeneratorSpec::validate() const {
  base.validate();
  if (r < 2) throw ValidationError("spatial generator needs r >= 2");
  if (coords.rows() != r || static_cast<int>(neighbors.size()) != r)
    throw ValidationError("spatial generator region layout mismatch");
  if (Gamma2.size() != base.d) throw ValidationError("Gamma2 size mismatch");
}

SpatialGeneratorSpec spatial_null_generator(int m, int d, int r, ErrorDist dist) {
  SpatialGeneratorSpec gen;
  gen.base = null_generator(m, d, dist);
  gen.r = r;
  gen.coords.resize(r, 2);
  gen.neighbors.resize(r);
  for (int k = 0; k < r; ++k) {
    gen.coords(k, 0) = 100.0 * k;  // far apart: point-mass spatial weights
    gen.coords(k, 1) = 0.0;
    gen.neighbors[k].push_back((k + 1) % r);
    if (r > 2) gen.neighbors[k].push_back((k + r - 1) % r);
  }
  gen.Gamma2 = Eigen::VectorXd::Zero(d);
  return gen;
}

SpatioPanelDataset generate_st(const SpatialGeneratorSpec& gen, int n,
                               std::uint64_t seed) {
  gen.validate();
  const GeneratorSpec& g = gen.base;
  SpatioPanelDataset ds;
  ds.n = n;
  ds.m = g.m;
  ds.d = g.d;
  ds.r = gen.r;
  ds.coords = gen.coords;
  ds.neighbors = gen.neighbors;
  ds.outcomes.assign(gen.r, Eigen::MatrixXd(n, g.m));
  ds.actions.assign(gen.r, Eigen::MatrixXi(n, g.m));
  ds.states.assign(gen.r,
                   std::vector<Eigen::MatrixXd>(g.m, Eigen::MatrixXd(n, g.d)));

  // Actions first: random per-(day, region) start bits. A parity-only design
  // would make the neighbor average an affine function of the own action
  // within every (t, region) cell, which is exactly the singular case.
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < gen.r; ++k) {
      Rng arng = Rng::stream(seed, static_cast<std::uint64_t>(i) + 1, k + 1, 0xac7);
      const std::vector<int> a =
          alternating_design(g.m, g.ti, static_cast<int>(arng.below(2)));
      for (int t = 0; t < g.m; ++t) ds.actions[k](i, t) = a[t];
    }

  for (int i = 0; i < n; ++i) {
    Rng urng = Rng::stream(seed, static_cast<std::uint64_t>(i) + 1, 0, 0xda7a);
    const double u = urng.uniform_open();  // one rank per day, shared by regions
    for (int k = 0; k < gen.r; ++k) {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i) + 1, k + 1, 0x57da7a);
      Eigen::VectorXd s(g.d);
      for (int j = 0; j < g.d; ++j) s(j) = g.init_mean(j) + g.init_sd * rng.normal();
      Eigen::VectorXd z(g.d + 2);
      z(0) = 1.0;
      for (int t = 1; t <= g.m; ++t) {
        ds.states[k][t - 1].row(i) = s.transpose();
        const double abar = ds.neighbor_action_mean(i, t - 1, k);
        z.segment(1, g.d) = s;
        z(g.d + 1) = static_cast<double>(ds.actions[k](i, t - 1));
        const double gamma2_u = gen.gamma2;
        ds.outcomes[k](i, t - 1) = z.dot(g.theta_at(t, u)) + gamma2_u * abar;
        if (t <= g.m - 1) {
          Eigen::VectorXd e(g.d);
          for (int j = 0; j < g.d; ++j) e(j) = draw_error(g, rng);
          s = g.state_theta[t - 1] * z + gen.Gamma2 * abar + e;
        }
      }
    }
  }
  return ds;
}

OracleResult mc_cqte_oracle(const GeneratorSpec& gen, double tau, int draws,
                            std::uint64_t seed) {
  gen.validate();
  if (!gen.monotone_flag)
    throw ValidationError(
        "mc_cqte_oracle requires a generator with the monotonicity flag set");
  if (draws < 100000) throw ValidationError("oracle needs >= 1e5 rank draws");

  // One fixed error trajectory (the conditioning set), then counterfactual
  // state paths under always-treat and never-treat.
  Rng erng = Rng::stream(seed, 0, 0, 0x0e0e);
  Eigen::VectorXd s1(gen.d);
  for (int j = 0; j < gen.d; ++j)
    s1(j) = gen.init_mean(j) + gen.init_sd * erng.normal();
  std::vector<Eigen::VectorXd> errs(gen.m - 1);
  for (int t = 0; t < gen.m - 1; ++t) {
    errs[t].resize(gen.d);
    for (int j = 0; j < gen.d; ++j) errs[t](j) = draw_error(gen, erng);
  }

  std::vector<Eigen::VectorXd> z1(gen.m), z0(gen.m);
  Eigen::VectorXd sa = s1, sb = s1;
  for (int t = 1; t <= gen.m; ++t) {
    z1[t - 1].resize(gen.d + 2);
    z1[t - 1](0) = 1.0;
    z1[t - 1].segment(1, gen.d) = sa;
    z1[t - 1](gen.d + 1) = 1.0;
    z0[t - 1].resize(gen.d + 2);
    z0[t - 1](0) = 1.0;
    z0[t - 1].segment(1, gen.d) = sb;
    z0[t - 1](gen.d + 1) = 0.0;
    if (t <= gen.m - 1) {
      sa = gen.state_theta[t - 1] * z1[t - 1] + errs[t - 1];
      sb = gen.state_theta[t - 1] * z0[t - 1] + errs[t - 1];
    }
  }

  std::vector<double> y1(draws), y0(draws);
  Rng urng = Rng::stream(seed, 1, 0, 0x0e0e);
  for (int k = 0; k < draws; ++k) {
    const double u = urng.uniform_open();
    double a = 0.0, b = 0.0;
    for (int t = 1; t <= gen.m; ++t) {
      const Eigen::VectorXd th = gen.theta_at(t, u);
      a += z1[t - 1].dot(th);
      b += z0[t - 1].dot(th);
    }
    y1[k] = a;
    y0[k] = b;
  }

  auto quantile_with_se = [&](std::vector<double>& v, double* se) {
    std::sort(v.begin(), v.end());
    const double N = static_cast<double>(v.size());
    const auto at = [&](double idx) {
      long k = std::lround(idx);
      k = std::clamp<long>(k, 0, static_cast<long>(v.size()) - 1);
      return v[static_cast<size_t>(k)];
    };
    const double center = tau * N;
    const double half = std::sqrt(N * tau * (1.0 - tau));
    *se = (at(center + half) - at(center - half)) / 2.0;
    return at(center);
  };

  OracleResult out;
  double se1 = 0.0, se0 = 0.0;
  const double q1 = quantile_with_se(y1, &se1);
  const double q0 = quantile_with_se(y0, &se0);
  out.value = q1 - q0;
  out.se = std::sqrt(se1 * se1 + se0 * se0);
  return out;
}

void SimulationConfig::validate() const {
  if (runs < 100)
    throw ValidationError("rejection-rate studies need runs >= 100");
  if (delta < 0.0) throw ValidationError("delta must be nonnegative");
  if (!(tau > 0.0 && tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  if (n < 2 || m < 2 || d < 1) throw ValidationError("bad simulation sizes");
}

RejectionRow rejection_cell(const SimulationConfig& config, Exec exec) {
  config.validate();
  GeneratorSpec gen = null_generator(config.m, config.d, config.error_dist);
  gen.ti = config.ti;
  if (config.delta > 0.0) {
    const PilotSummaries pilot =
        pilot_summaries(gen, 4000, splitmix64(config.seed ^ 0x9107));
    gen = inject_effect(gen, config.delta, pilot);
  }
  KernelSpec spec = config.kernel;
  if (!(spec.h > 0.0)) spec.h = default_temporal_bandwidth(config.n);

  int rejects = 0, failures = 0;
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic) reduction(+ : rejects, failures) if (exec == Exec::parallel)
  for (int run = 0; run < config.runs; ++run) {
    try {
      const std::uint64_t run_seed = splitmix64(
          splitmix64(config.seed ^ 0x5eedULL) + static_cast<std::uint64_t>(run));
      PanelDataset ds = generate(gen, config.n, run_seed);
      BootstrapConfig bs = config.bootstrap;
      bs.seed = splitmix64(run_seed ^ 0xb00);
      TestResult res = run_test(ds, config.tau, config.estimand, spec, bs,
                                Exec::serial);
      if (res.reject) ++rejects;
    } catch (const std::exception&) {
      ++failures;
    }
  }
  if (err) std::rethrow_exception(err);
  if (failures * 100 > config.runs)
    throw ConvergenceError("rejection cell aborted: " + std::to_string(failures) +
                           " of " + std::to_string(config.runs) + " runs failed");

  RejectionRow row;
  row.tau = config.tau;
  row.ti = config.ti;
  row.n = config.n;
  row.delta = config.delta;
  row.runs = config.runs;
  row.failures = failures;
  const int ok = config.runs - failures;
  row.reject_rate = ok > 0 ? static_cast<double>(rejects) / ok : 0.0;
  row.se = ok > 0 ? std::sqrt(row.reject_rate * (1.0 - row.reject_rate) / ok) : 0.0;
  return row;
}

std::vector<RejectionRow> run_rejection_study(
    const std::vector<SimulationConfig>& grid, Exec exec) {
  std::vector<RejectionRow> rows;
  rows.reserve(grid.size());
  for (const auto& cell : grid) rows.push_back(rejection_cell(cell, exec));
  return rows;
}

}  // namespace cqte
