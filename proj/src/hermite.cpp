#include "qfilter/hermite.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "qfilter/errors.hpp"

namespace qfilter::hermite {

Eigen::VectorXd functions(int count, double x) {
  Eigen::VectorXd h(count);
  if (count == 0) return h;
  h(0) = std::pow(std::numbers::pi, -0.25) * std::exp(-0.5 * x * x);
  if (count > 1) h(1) = std::sqrt(2.0) * x * h(0);
  for (int j = 2; j < count; ++j) {
    h(j) = std::sqrt(2.0 / j) * x * h(j - 1) - std::sqrt((j - 1.0) / j) * h(j - 2);
  }
  return h;
}

Eigen::MatrixXd functions_on_grid(int count, const Eigen::VectorXd& grid) {
  Eigen::MatrixXd out(count, grid.size());
  for (Eigen::Index i = 0; i < grid.size(); ++i) out.col(i) = functions(count, grid(i));
  return out;
}

GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw InvalidDimension("gauss_hermite needs n >= 1");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k - 1, k) = jacobi(k, k - 1) = std::sqrt(0.5 * k);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(jacobi, Eigen::EigenvaluesOnly);
  GaussHermiteRule rule;
  rule.nodes = solver.eigenvalues();
  rule.scaled_weights.resize(n);
  for (int i = 0; i < n; ++i) {
    // Christoffel: w_i exp(x_i^2) = 1 / sum_{j<n} h_j(x_i)^2
    rule.scaled_weights(i) = 1.0 / functions(n, rule.nodes(i)).squaredNorm();
  }
  return rule;
}

}  // namespace qfilter::hermite
