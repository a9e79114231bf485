#pragma once

#include <Eigen/Dense>
#include <string>

#include "cqte/errors.hpp"

namespace cqte {

// All supported kernels are symmetric Lipschitz probability densities on
// [-1, 1], which is what the smoothing theory requires.
enum class Kernel { epanechnikov, triangular, quartic };

Kernel kernel_from_name(const std::string& name);
std::string kernel_name(Kernel k);

// Kernel density value K(u); zero outside [-1, 1].
double kernel_eval(Kernel k, double u);

struct KernelSpec {
  Kernel kernel = Kernel::epanechnikov;
  double h = 0.0;     // temporal bandwidth, fraction of the rescaled horizon
  double h_st = 0.0;  // spatial bandwidth, coordinate units (spatial mode only)

  void validate(bool spatial = false) const;
};

// Default temporal bandwidth 0.9 * n^(-0.26); keeps h = o(n^(-1/4)) while
// m*h still grows for the horizons of interest.
double default_temporal_bandwidth(int n);

// Default spatial bandwidth 0.9 * (coordinate range) * r^(-0.26).
double default_spatial_bandwidth(const Eigen::MatrixXd& coords);

// Normalized weights omega_{j,h}(t) proportional to K((j - t) / (m h)),
// j = 1..m, for 1-based target interval t. Sum to one exactly.
Eigen::VectorXd temporal_weights(int t, int m, const KernelSpec& spec);

// Row t holds temporal_weights(t+1, m, spec); smoothing a path is W * path.
Eigen::MatrixXd temporal_weight_matrix(int m, const KernelSpec& spec);

// Smooth each coefficient column of a path over its time grid:
// smoothed(t) = sum_j omega_{j,h}(t) raw(j). Rows index t, columns index
// coefficients. Linear in the raw path.
Eigen::MatrixXd smooth_path(const Eigen::MatrixXd& raw, const KernelSpec& spec);

// Normalized product-kernel spatial weights kappa_{l,h_st}(target) over the
// regions' (lon, lat) coordinates.
Eigen::VectorXd spatial_weights(int target, const Eigen::MatrixXd& coords,
                                const KernelSpec& spec);

// Row iota holds spatial_weights(iota, coords, spec).
Eigen::MatrixXd spatial_weight_matrix(const Eigen::MatrixXd& coords,
                                      const KernelSpec& spec);

}  // namespace cqte
