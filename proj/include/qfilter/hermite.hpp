#pragma once

#include <Eigen/Dense>

namespace qfilter::hermite {

// Normalized Hermite functions h_0..h_{count-1} at x, i.e. the eigenfunctions
// of x^2 + p^2 with eigenvalues 1, 3, 5, ...
Eigen::VectorXd functions(int count, double x);

// Hermite functions evaluated on a grid: result(k, i) = h_k(grid[i]).
Eigen::MatrixXd functions_on_grid(int count, const Eigen::VectorXd& grid);

struct GaussHermiteRule {
  Eigen::VectorXd nodes;
  // Weights multiplied by exp(x_i^2), so that
  //   int f(x) dx ~= sum_i scaled_weights_i * f(x_i)
  // for f = (polynomial) * exp(-x^2). Computed from the Christoffel function
  // of the Hermite functions, which stays accurate in the tails where the
  // plain weights underflow.
  Eigen::VectorXd scaled_weights;
};

// n-point Gauss-Hermite rule (weight exp(-x^2)) via Golub-Welsch.
GaussHermiteRule gauss_hermite(int n);

}  // namespace qfilter::hermite
