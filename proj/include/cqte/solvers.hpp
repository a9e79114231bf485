#pragma once

#include <Eigen/Dense>

#include "cqte/errors.hpp"

namespace cqte {

// Check function rho_tau: tau*r for r >= 0, (tau-1)*r for r < 0.
inline double check_loss(double residual, double tau) {
  return residual >= 0.0 ? tau * residual : (tau - 1.0) * residual;
}

// Sum of check losses of y - X*beta.
double check_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double tau, const Eigen::VectorXd& beta);

// Quantile regression: global minimizer of sum_i rho_tau(y_i - x_i'beta).
//
// Frisch-Newton interior point on the bounded dual, followed by an
// exact-interpolation polish over the near-active rows, so vertex solutions
// come out exact. Columns are rescaled internally for conditioning.
//
// Throws SingularDesignError when the smallest singular value of X is below
// 1e-10 times the largest, ConvergenceError when the duality gap fails to
// reach 1e-9 within the iteration cap.
Eigen::VectorXd qr_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       double tau);

// Least squares, one response per column of Y. Row nu of the result holds the
// coefficients for response column nu (shape q x p).
Eigen::MatrixXd ols_fit(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

// Ratio of largest to smallest singular value.
double condition_number(const Eigen::MatrixXd& X);

}  // namespace cqte
