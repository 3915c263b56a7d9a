#pragma once

// Explicit Gaussian solution of the position-measurement filter
//   d chi = 1/2 (i h Laplacian - alpha^2 x^2) chi dt + alpha x chi dY
// (H = h p^2 / 2, L = alpha x, one channel, one space dimension), with
// propagator kernel
//   u(t, x, y) = sqrt(beta / 2 pi) exp{-omega/2 (x^2 + y^2) + beta x y - a x - b y - gamma_c}.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "qfilter/operator_lab.hpp"
#include "qfilter/sde_engine.hpp"

namespace qfilter {

struct GaussianKernelState {
  double t = 0.0;
  cplx omega;
  cplx beta;
  cplx a;
  cplx b;
  cplx gamma_c;
  double alpha = 1.0;
  double h = 1.0;

  cplx norm_c() const;  // sqrt(beta / 2 pi), principal branch
  cplx sigma() const;   // sqrt(2 alpha^2 / (i h))
  // G solving omega = sigma coth(sigma G t); the ansatz predicts G = i h.
  cplx fitted_g() const;
  cplx kernel(double x, double y) const;
};

struct KernelTrajectory {
  std::vector<GaussianKernelState> states;  // states[0] is t = dt (t = 0 is singular)
  double dt = 0.0;
};

// Integrates the coefficient equations obtained by substituting the ansatz
// into the filter. omega and beta are carried through the regular variables
// u = 1/omega, v = beta/omega (RK4 from u = 0, v = 1); a and b through Ito
// integrals against channel 0 of `output`; gamma_c by the trapezoid rule.
// Records every `record_stride`-th grid time and the last one.
KernelTrajectory propagate_coefficients(double alpha, double h, const BrownianPath& output, int record_stride = 1);

// Closed-form small-time laws: omega ~ 1/(iht) + (2/3) alpha^2 t,
// beta ~ 1/(iht) - alpha^2 t / 3.
cplx small_time_omega(double alpha, double h, double t);
cplx small_time_beta(double alpha, double h, double t);

// g(x_i) = int u(t, x_i, y) f(y) dy by the trapezoid rule on `ygrid`.
// Throws ResolutionError when the kernel phase has a wavelength shorter than
// four y-steps anywhere on the grid, or when f is not negligible (> 1e-6 of
// its peak) at the ends of the y-grid.
Eigen::VectorXcd apply_kernel(const GaussianKernelState& state, const Eigen::VectorXd& ygrid,
                              const Eigen::VectorXcd& f, const Eigen::VectorXd& xgrid);
Eigen::VectorXcd apply_kernel(const GaussianKernelState& state, const Eigen::VectorXd& grid,
                              const Eigen::VectorXcd& f);

// sum_k c_k h_k(x_i)
Eigen::VectorXcd galerkin_to_grid(const Eigen::VectorXcd& coefficients, const Eigen::VectorXd& grid);

// Trapezoid L^2 norm squared on a grid.
double grid_norm_sq(const Eigen::VectorXd& grid, const Eigen::VectorXcd& f);
// ||g||^2 + ||x g||^2 + ||g'||^2 with centered differences.
double weighted_sobolev_norm_sq(const Eigen::VectorXd& grid, const Eigen::VectorXcd& g);

// Real small-time coefficients a_R = (alpha/t) xi(t), b_R = alpha int_0^t xi(s)/s^2 ds
// with xi(t) = int_0^t s dB(s); the b-integral starts at the first grid point.
struct CoefficientSamples {
  std::vector<double> a;
  std::vector<double> b;
  double alpha = 1.0;
  double t = 0.0;
};

CoefficientSamples sample_coefficients(double alpha, double t, int count, int steps, std::uint64_t seed,
                                       int parallelism = 1);

struct CoefficientStats {
  double var_a = 0.0, var_a_se = 0.0;
  double var_b = 0.0, var_b_se = 0.0;
  double cov_ab = 0.0, cov_ab_se = 0.0;
  double var_diff = 0.0, var_diff_se = 0.0;  // Var(a_R - b_R/2)
  double expected_var = 0.0;                 // alpha^2 t / 3
  double expected_cov = 0.0;                 // alpha^2 t / 6
  double expected_var_diff = 0.0;            // alpha^2 t / 4
  std::size_t samples = 0;
};

CoefficientStats coefficient_stats(const CoefficientSamples& samples);

enum class MomentEstimator { Mean, MedianOfMeans, Divergence };
const char* estimator_name(MomentEstimator e);

struct MomentEstimate {
  double p = 0.0;
  double t = 0.0;
  double estimate = 0.0;
  double stderr = 0.0;  // infinite for the Divergence estimator
  std::size_t samples = 0;
  MomentEstimator estimator = MomentEstimator::Mean;
  // Running diagnostics at sample sizes 10^3, 10^4, ... up to `samples`.
  std::vector<std::size_t> checkpoints;
  std::vector<double> running_mean;
  std::vector<double> running_median_of_means;
  double tail_index = 0.0;  // Hill estimate from the top 1000 values
  double tail_index_se = 0.0;
  bool diverging = false;
};

// E exp{(p/(alpha^2 t)) (a_R^2 - a_R b_R + b_R^2)}, whose limit value is
// (1 - p/2)^{-1} for p < 2. Plain mean for p < 1, median of 32 block means
// for 1 <= p < 2, divergence report for p >= 2. The divergence flag is set
// when the Hill tail index of the samples is consistent with <= 1 (kappa - 2 se
// <= 1) and the running median-of-means increases strictly over the
// checkpoints.
MomentEstimate estimate_moment(double p, const CoefficientSamples& samples);

inline double moment_limit(double p) { return 1.0 / (1.0 - 0.5 * p); }

}  // namespace qfilter
