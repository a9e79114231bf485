#include "cqte/kernel.hpp"

#include <cmath>

namespace cqte {

Kernel kernel_from_name(const std::string& name) {
  if (name == "epanechnikov") return Kernel::epanechnikov;
  if (name == "triangular") return Kernel::triangular;
  if (name == "quartic") return Kernel::quartic;
  throw ValidationError("unknown kernel '" + name + "'");
}

std::string kernel_name(Kernel k) {
  switch (k) {
    case Kernel::epanechnikov: return "epanechnikov";
    case Kernel::triangular: return "triangular";
    case Kernel::quartic: return "quartic";
  }
  return "?";
}

double kernel_eval(Kernel k, double u) {
  const double a = std::abs(u);
  if (a >= 1.0) return 0.0;
  switch (k) {
    case Kernel::epanechnikov: return 0.75 * (1.0 - u * u);
    case Kernel::triangular: return 1.0 - a;
    case Kernel::quartic: {
      const double w = 1.0 - u * u;
      return 0.9375 * w * w;
    }
  }
  return 0.0;
}

void KernelSpec::validate(bool spatial) const {
  if (!(h > 0.0)) throw ValidationError("temporal bandwidth h must be positive");
  if (spatial && !(h_st > 0.0))
    throw ValidationError("spatial bandwidth h_st must be positive");
}

double default_temporal_bandwidth(int n) {
  return 0.9 * std::pow(static_cast<double>(n), -0.26);
}

double default_spatial_bandwidth(const Eigen::MatrixXd& coords) {
  const double range =
      std::max(coords.col(0).maxCoeff() - coords.col(0).minCoeff(),
               coords.col(1).maxCoeff() - coords.col(1).minCoeff());
  const double r = static_cast<double>(coords.rows());
  return 0.9 * std::max(range, 1e-6) * std::pow(r, -0.26);
}

Eigen::VectorXd temporal_weights(int t, int m, const KernelSpec& spec) {
  if (t < 1 || t > m) throw ValidationError("temporal_weights: t out of range");
  spec.validate();
  const double mh = m * spec.h;
  Eigen::VectorXd w(m);
  for (int j = 1; j <= m; ++j)
    w(j - 1) = kernel_eval(spec.kernel, (j - t) / mh);
  const double total = w.sum();
  if (!(total > 0.0))
    throw ValidationError("temporal kernel weights underflowed to zero");
  return w / total;
}

Eigen::MatrixXd temporal_weight_matrix(int m, const KernelSpec& spec) {
  Eigen::MatrixXd W(m, m);
  for (int t = 1; t <= m; ++t) W.row(t - 1) = temporal_weights(t, m, spec).transpose();
  return W;
}

Eigen::MatrixXd smooth_path(const Eigen::MatrixXd& raw, const KernelSpec& spec) {
  if (!raw.allFinite())
    throw ValidationError("smooth_path: raw path has non-finite entries");
  return temporal_weight_matrix(static_cast<int>(raw.rows()), spec) * raw;
}

Eigen::VectorXd spatial_weights(int target, const Eigen::MatrixXd& coords,
                                const KernelSpec& spec) {
  const int r = static_cast<int>(coords.rows());
  if (target < 0 || target >= r)
    throw ValidationError("spatial_weights: region out of range");
  spec.validate(true);
  if (!coords.allFinite()) throw ValidationError("non-finite region coordinate");
  Eigen::VectorXd w(r);
  for (int l = 0; l < r; ++l)
    w(l) = kernel_eval(spec.kernel, (coords(target, 0) - coords(l, 0)) / spec.h_st) *
           kernel_eval(spec.kernel, (coords(target, 1) - coords(l, 1)) / spec.h_st);
  const double total = w.sum();
  if (!(total > 0.0))
    throw ValidationError("spatial kernel weights underflowed to zero");
  return w / total;
}

Eigen::MatrixXd spatial_weight_matrix(const Eigen::MatrixXd& coords,
                                      const KernelSpec& spec) {
  const int r = static_cast<int>(coords.rows());
  Eigen::MatrixXd W(r, r);
  for (int k = 0; k < r; ++k) W.row(k) = spatial_weights(k, coords, spec).transpose();
  return W;
}

}  // namespace cqte
