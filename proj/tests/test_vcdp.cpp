#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <vector>

#include "cqte/rng.hpp"
#include "cqte/simulate.hpp"
#include "cqte/vcdp.hpp"

using namespace cqte;

namespace {

// Literal transcription of the carryover formula: for each horizon t sum
// Phi(t-1)...Phi(k+1) Gamma(k) over k < t with explicit products, no
// recursion shared with the library code.
double naive_cqte(const QuantileCoeffPath& q, const StateCoeffPath& s) {
  const int m = q.m();
  const int d = q.d;
  double total = 0.0;
  for (int t = 1; t <= m; ++t) total += q.gamma(t);
  for (int t = 2; t <= m; ++t) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
    for (int k = 1; k <= t - 1; ++k) {
      Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(d, d);
      for (int l = k + 1; l <= t - 1; ++l) prod = s.Phi(l) * prod;
      acc += prod * s.Gamma(k);
    }
    total += q.beta(t).dot(acc);
  }
  return total;
}

QuantileCoeffPath random_qpath(int m, int d, Rng& rng) {
  QuantileCoeffPath q;
  q.tau = 0.5;
  q.d = d;
  q.coeffs.resize(m, d + 2);
  for (int t = 0; t < m; ++t)
    for (int j = 0; j < d + 2; ++j) q.coeffs(t, j) = rng.normal();
  return q;
}

StateCoeffPath random_spath(int m, int d, Rng& rng) {
  std::vector<Eigen::MatrixXd> thetas(m - 1);
  for (int t = 0; t < m - 1; ++t) {
    thetas[t].resize(d, d + 2);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d + 2; ++b) thetas[t](a, b) = 0.6 * rng.normal();
  }
  return StateCoeffPath::from_thetas(thetas, Stage::raw);
}

// Deterministic panel generated exactly by fixed coefficient paths: no
// outcome noise, no state noise, day-varying initial states and a
// parity-alternating design so every interval sees both actions.
PanelDataset exact_panel(const QuantileCoeffPath& q, const StateCoeffPath& s,
                         int n) {
  const int m = q.m();
  const int d = q.d;
  PanelDataset ds;
  ds.n = n;
  ds.m = m;
  ds.d = d;
  ds.outcomes.resize(n, m);
  ds.actions.resize(n, m);
  ds.states.assign(m, Eigen::MatrixXd(n, d));
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd state(d);
    for (int v = 0; v < d; ++v) state(v) = std::cos(1.0 + i + 2.7 * v);
    for (int t = 1; t <= m; ++t) {
      ds.states[t - 1].row(i) = state.transpose();
      const int a = (t + i) % 2;
      ds.actions(i, t - 1) = a;
      Eigen::VectorXd z(d + 2);
      z(0) = 1.0;
      z.segment(1, d) = state;
      z(d + 1) = a;
      ds.outcomes(i, t - 1) = q.coeffs.row(t - 1).dot(z);
      if (t < m) state = s.Theta(t) * z;
    }
  }
  ds.validate();
  return ds;
}

}  // namespace

TEST_CASE("hand-computed carryover fixture") {
  // m = 3, d = 1, gamma = 0, beta(2) = beta(3) = 1, Phi(2) = 0.5,
  // Gamma(1) = Gamma(2) = 1. Direct effect 0; carryover 1 + (0.5 + 1) = 2.5.
  QuantileCoeffPath q;
  q.tau = 0.5;
  q.d = 1;
  q.coeffs = Eigen::MatrixXd::Zero(3, 3);
  q.coeffs(1, 1) = 1.0;
  q.coeffs(2, 1) = 1.0;
  std::vector<Eigen::MatrixXd> thetas(2);
  thetas[0] = Eigen::MatrixXd::Zero(1, 3);
  thetas[0](0, 2) = 1.0;  // Gamma(1) = 1
  thetas[1] = Eigen::MatrixXd::Zero(1, 3);
  thetas[1](0, 1) = 0.5;  // Phi(2) = 0.5
  thetas[1](0, 2) = 1.0;  // Gamma(2) = 1
  StateCoeffPath s = StateCoeffPath::from_thetas(thetas, Stage::raw);

  CHECK(cqde(q) == 0.0);
  CHECK(cqie(q, s) == doctest::Approx(2.5).epsilon(1e-14));
  CHECK(cqte_closed_form(q, s) == doctest::Approx(2.5).epsilon(1e-14));
}

TEST_CASE("single-interval day has no carryover") {
  Rng rng(3);
  QuantileCoeffPath q = random_qpath(1, 2, rng);
  StateCoeffPath s;
  s.d = 2;
  s.coeffs.resize(0, 2 * 4);
  CHECK(cqie(q, s) == 0.0);
  CHECK(cqte_closed_form(q, s) == doctest::Approx(q.gamma(1)));
}

TEST_CASE("closed form matches the literal product-sum oracle") {
  Rng rng(101);
  for (int rep = 0; rep < 100; ++rep) {
    const int m = 2 + static_cast<int>(rng.below(9));  // 2..10
    const int d = 1 + static_cast<int>(rng.below(3));  // 1..3
    QuantileCoeffPath q = random_qpath(m, d, rng);
    StateCoeffPath s = random_spath(m, d, rng);
    const double naive = naive_cqte(q, s);
    CHECK(cqte_closed_form(q, s) == doctest::Approx(naive).epsilon(1e-10));
    CHECK(cqde(q) + cqie(q, s) ==
          doctest::Approx(cqte_closed_form(q, s)).epsilon(1e-14));
  }
}

TEST_CASE("raw fits recover an exactly linear process") {
  Rng rng(55);
  const int m = 6, d = 2, n = 30;
  QuantileCoeffPath q = random_qpath(m, d, rng);
  StateCoeffPath s = random_spath(m, d, rng);
  PanelDataset ds = exact_panel(q, s, n);
  for (double tau : {0.25, 0.5, 0.9}) {
    auto [qhat, shat] = fit_raw(ds, tau, Exec::serial);
    CHECK((qhat.coeffs - q.coeffs).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((shat.coeffs - s.coeffs).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("serial and parallel fits agree bit-for-bit") {
  GeneratorSpec gen = null_generator(10, 2);
  PanelDataset ds = generate(gen, 60, 424242);
  const double tau = 0.35;
  auto [qs, ss] = fit_raw(ds, tau, Exec::serial);
  auto [qp, sp] = fit_raw(ds, tau, Exec::parallel);
  CHECK(qs.coeffs == qp.coeffs);
  CHECK(ss.coeffs == sp.coeffs);
}

TEST_CASE("positivity violation names the interval") {
  GeneratorSpec gen = null_generator(4, 1);
  PanelDataset ds = generate(gen, 20, 9);
  for (int i = 0; i < ds.n; ++i) ds.actions(i, 2) = 1;
  CHECK_THROWS_WITH_AS(fit_raw(ds, 0.5, Exec::serial),
                       doctest::Contains("t=3"), SingularDesignError);
}

TEST_CASE("raw fit residual signs bracket tau per interval") {
  GeneratorSpec gen = null_generator(8, 2);
  PanelDataset ds = generate(gen, 150, 31337);
  for (double tau : {0.25, 0.5, 0.75}) {
    auto [qraw, sraw] = fit_raw(ds, tau, Exec::parallel);
    ResidualSet res = residuals(ds, qraw, sraw);
    for (int t = 0; t < ds.m; ++t) {
      int neg = 0;
      for (int i = 0; i < ds.n; ++i)
        if (res.quantile_residuals(i, t) < 0.0) ++neg;
      // quantile-regression subgradient bound: #negatives in [n tau - p, n tau]
      CHECK(neg >= ds.n * tau - (ds.d + 2));
      CHECK(neg <= ds.n * tau + (ds.d + 2));
    }
  }
}

TEST_CASE("state residuals are orthogonal to the design per interval") {
  GeneratorSpec gen = null_generator(6, 2);
  PanelDataset ds = generate(gen, 80, 77);
  auto [qraw, sraw] = fit_raw(ds, 0.5, Exec::serial);
  ResidualSet res = residuals(ds, qraw, sraw);
  for (int t = 1; t < ds.m; ++t) {
    Eigen::MatrixXd X(ds.n, ds.d + 2);
    for (int i = 0; i < ds.n; ++i) X.row(i) = ds.design_row(i, t - 1);
    CHECK((X.transpose() * res.state_errors[t - 1]).cwiseAbs().maxCoeff() <
          1e-8);
  }
}

TEST_CASE("smoothed stage equals the weight-matrix product") {
  GeneratorSpec gen = null_generator(9, 1);
  PanelDataset ds = generate(gen, 50, 12);
  auto [qraw, sraw] = fit_raw(ds, 0.5, Exec::serial);
  KernelSpec spec;
  spec.h = 0.22;
  auto [qsm, ssm] = fit_smoothed(qraw, sraw, spec);
  CHECK(qsm.stage == Stage::smoothed);
  CHECK((qsm.coeffs - smooth_path(qraw.coeffs, spec)).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK((ssm.coeffs - smooth_path(sraw.coeffs, spec)).cwiseAbs().maxCoeff() ==
        0.0);
}

TEST_CASE("day permutation leaves the estimate unchanged") {
  GeneratorSpec gen = null_generator(7, 2);
  PanelDataset ds = generate(gen, 60, 2024);
  PanelDataset perm = ds;
  std::vector<int> order(ds.n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(5);
  for (int i = ds.n - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);
  for (int i = 0; i < ds.n; ++i) {
    perm.outcomes.row(i) = ds.outcomes.row(order[i]);
    perm.actions.row(i) = ds.actions.row(order[i]);
    for (int t = 0; t < ds.m; ++t)
      perm.states[t].row(i) = ds.states[t].row(order[i]);
  }
  KernelSpec spec;
  spec.h = default_temporal_bandwidth(ds.n);
  EstimandReport a = estimate(ds, 0.5, spec);
  EstimandReport b = estimate(perm, 0.5, spec);
  CHECK(a.cqte == doctest::Approx(b.cqte).epsilon(1e-6));
  CHECK(a.cqde == doctest::Approx(b.cqde).epsilon(1e-6));
}

TEST_CASE("outcome location shift moves only the intercept path") {
  GeneratorSpec gen = null_generator(6, 1);
  PanelDataset ds = generate(gen, 70, 808);
  PanelDataset shifted = ds;
  shifted.outcomes.array() += 12.5;
  KernelSpec spec;
  spec.h = default_temporal_bandwidth(ds.n);
  EstimandReport a = estimate(ds, 0.3, spec);
  EstimandReport b = estimate(shifted, 0.3, spec);
  CHECK(b.cqte == doctest::Approx(a.cqte).epsilon(1e-6));
  CHECK(b.cqde == doctest::Approx(a.cqde).epsilon(1e-6));
  CHECK(b.cqie == doctest::Approx(a.cqie).epsilon(1e-6));
  for (int t = 1; t <= ds.m; ++t)
    CHECK(b.qpath.beta0(t) == doctest::Approx(a.qpath.beta0(t) + 12.5));
}

TEST_CASE("estimate recovers the generator truth on a large sample") {
  GeneratorSpec null_gen = null_generator(8, 2);
  PilotSummaries pilot = pilot_summaries(null_gen, 4000, 17);
  GeneratorSpec gen = inject_effect(null_gen, 0.08, pilot);
  PanelDataset ds = generate(gen, 600, 321);
  KernelSpec spec;
  spec.h = default_temporal_bandwidth(ds.n);
  const double tau = 0.5;
  EstimandReport rep = estimate(ds, tau, spec);
  const double truth = cqte_closed_form(gen.quantile_path(tau), gen.state_path());
  CHECK(truth > 0.0);
  CHECK(rep.cqte == doctest::Approx(truth).epsilon(0.12));
  CHECK(rep.diagnostics.design_condition.size() ==
        static_cast<std::size_t>(ds.m));
}
