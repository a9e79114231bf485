#include "cqte/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace cqte {

namespace {

constexpr double kRankTol = 1e-10;
constexpr double kGapTol = 1e-9;
constexpr int kMaxIter = 10000;

void check_rank(const Eigen::MatrixXd& X) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
  const auto& sv = svd.singularValues();
  if (sv(sv.size() - 1) < kRankTol * sv(0))
    throw SingularDesignError(
        "design matrix is rank deficient (singular value ratio " +
        std::to_string(sv(sv.size() - 1) / sv(0)) + ")");
}

// Frisch-Newton interior point for the bounded-variable LP dual of quantile
// regression:  max y'a  s.t.  X'a = (1-tau) X'1,  a in [0,1]^N.
// The recovered primal coefficient vector is the equality multiplier.
Eigen::VectorXd qr_interior_point(const Eigen::MatrixXd& X,
                                  const Eigen::VectorXd& yv, double tau) {
  const int N = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  const Eigen::MatrixXd A = X.transpose();              // p x N
  const Eigen::VectorXd c = -yv;                        // minimize c'x
  const Eigen::VectorXd b = (1.0 - tau) * X.colwise().sum().transpose();

  Eigen::VectorXd x = Eigen::VectorXd::Constant(N, 1.0 - tau);
  Eigen::VectorXd s = Eigen::VectorXd::Ones(N) - x;

  Eigen::VectorXd y = (X.transpose() * X).ldlt().solve(X.transpose() * c);
  Eigen::VectorXd r = c - X * y;
  for (int i = 0; i < N; ++i)
    if (std::abs(r(i)) < 1e-12) r(i) = 1e-3;
  Eigen::VectorXd z = r.cwiseMax(0.0);
  Eigen::VectorXd w = z - r;

  auto max_step = [](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
    double f = 1e20;
    for (int i = 0; i < v.size(); ++i)
      if (dv(i) < 0.0) f = std::min(f, -v(i) / dv(i));
    return f;
  };

  double gap = c.dot(x) - b.dot(y) + w.sum();
  int it = 0;
  while (gap > kGapTol && it < kMaxIter) {
    ++it;
    const Eigen::VectorXd q =
        (z.cwiseQuotient(x) + w.cwiseQuotient(s)).cwiseInverse();
    r = z - w;

    const Eigen::MatrixXd AQ = A * q.asDiagonal();      // p x N
    Eigen::LDLT<Eigen::MatrixXd> normal((AQ * A.transpose()).eval());

    // Affine (predictor) direction.
    Eigen::VectorXd dy = normal.solve(AQ * r);
    Eigen::VectorXd dx = q.cwiseProduct(X * dy - r);
    Eigen::VectorXd ds = -dx;
    Eigen::VectorXd dz = -z - z.cwiseProduct(dx.cwiseQuotient(x));
    Eigen::VectorXd dw = -w - w.cwiseProduct(ds.cwiseQuotient(s));

    const double kShrink = 0.9995;
    double fp = std::min(kShrink * std::min(max_step(x, dx), max_step(s, ds)), 1.0);
    double fd = std::min(kShrink * std::min(max_step(z, dz), max_step(w, dw)), 1.0);

    if (std::min(fp, fd) < 1.0) {
      // Mehrotra corrector.
      const double mu0 = z.dot(x) + w.dot(s);
      const double g = (z + fd * dz).dot(x + fp * dx) + (w + fd * dw).dot(s + fp * ds);
      const double mu = mu0 * std::pow(g / mu0, 3) / (2.0 * N);

      const Eigen::VectorXd dxdz = dx.cwiseProduct(dz);
      const Eigen::VectorXd dsdw = ds.cwiseProduct(dw);
      const Eigen::VectorXd rc =
          r - (Eigen::VectorXd::Constant(N, mu) - dxdz).cwiseQuotient(x) +
          (Eigen::VectorXd::Constant(N, mu) - dsdw).cwiseQuotient(s);

      dy = normal.solve(AQ * rc);
      dx = q.cwiseProduct(X * dy - rc);
      ds = -dx;
      dz = (Eigen::VectorXd::Constant(N, mu) - dxdz).cwiseQuotient(x) - z -
           z.cwiseProduct(dx.cwiseQuotient(x));
      dw = (Eigen::VectorXd::Constant(N, mu) - dsdw).cwiseQuotient(s) - w -
           w.cwiseProduct(ds.cwiseQuotient(s));

      fp = std::min(kShrink * std::min(max_step(x, dx), max_step(s, ds)), 1.0);
      fd = std::min(kShrink * std::min(max_step(z, dz), max_step(w, dw)), 1.0);
    }

    x += fp * dx;
    s += fp * ds;
    y += fd * dy;
    z += fd * dz;
    w += fd * dw;
    gap = c.dot(x) - b.dot(y) + w.sum();
  }
  if (gap > std::max(kGapTol, 1e-7 * (1.0 + std::abs(c.dot(x)))))
    throw ConvergenceError("quantile regression interior point stalled at gap " +
                           std::to_string(gap) + " after " + std::to_string(it) +
                           " iterations");
  (void)p;
  return -y;
}

// Exact vertex polish: a quantile regression optimum interpolates p data
// points, so solving through the p near-active rows removes the residual
// interior-point gap. Kept only when it does not worsen the objective.
Eigen::VectorXd polish(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double tau, Eigen::VectorXd beta) {
  const int N = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (N < p) return beta;
  Eigen::VectorXd res = y - X * beta;
  std::vector<int> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + p, idx.end(),
                    [&](int a, int bb) { return std::abs(res(a)) < std::abs(res(bb)); });
  Eigen::MatrixXd Xb(p, p);
  Eigen::VectorXd yb(p);
  for (int k = 0; k < p; ++k) {
    Xb.row(k) = X.row(idx[k]);
    yb(k) = y(idx[k]);
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(Xb);
  if (!lu.isInvertible()) return beta;
  Eigen::VectorXd cand = lu.solve(yb);
  if (check_objective(X, y, tau, cand) <= check_objective(X, y, tau, beta) + 1e-12)
    return cand;
  return beta;
}

}  // namespace

double check_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double tau, const Eigen::VectorXd& beta) {
  double obj = 0.0;
  Eigen::VectorXd res = y - X * beta;
  for (int i = 0; i < res.size(); ++i) obj += check_loss(res(i), tau);
  return obj;
}

Eigen::VectorXd qr_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double tau) {
  const int N = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (tau <= 0.0 || tau >= 1.0) throw ValidationError("tau must lie in (0,1)");
  if (N < p) throw ValidationError("quantile regression needs N >= p");
  if (!X.allFinite() || !y.allFinite())
    throw ValidationError("non-finite entry in regression problem");
  check_rank(X);

  // Column/response rescaling for conditioning; the check loss is positively
  // homogeneous so the minimizer maps back exactly.
  Eigen::VectorXd sx(p);
  for (int j = 0; j < p; ++j) {
    double s = X.col(j).norm() / std::sqrt(static_cast<double>(N));
    sx(j) = s > 1e-12 ? s : 1.0;
  }
  double sy = y.norm() / std::sqrt(static_cast<double>(N));
  if (sy <= 1e-12) sy = 1.0;

  Eigen::MatrixXd Xs = X * sx.cwiseInverse().asDiagonal();
  Eigen::VectorXd ys = y / sy;

  Eigen::VectorXd beta_s = qr_interior_point(Xs, ys, tau);
  beta_s = polish(Xs, ys, tau, beta_s);

  return sy * beta_s.cwiseQuotient(sx);
}

Eigen::MatrixXd ols_fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  if (X.rows() < X.cols()) throw ValidationError("least squares needs N >= p");
  if (X.rows() != Y.rows()) throw ValidationError("X and Y row counts differ");
  if (!X.allFinite() || !Y.allFinite())
    throw ValidationError("non-finite entry in regression problem");
  check_rank(X);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  Eigen::MatrixXd B(Y.cols(), X.cols());
  for (int nu = 0; nu < Y.cols(); ++nu)
    B.row(nu) = qr.solve(Y.col(nu)).transpose();
  return B;
}

double condition_number(const Eigen::MatrixXd& X) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X);
  const auto& sv = svd.singularValues();
  return sv(0) / sv(sv.size() - 1);
}

}  // namespace cqte
