#include "qfilter/gaussian_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "qfilter/errors.hpp"
#include "qfilter/hermite.hpp"
#include "qfilter/stats.hpp"

namespace qfilter {

namespace {

constexpr cplx kI(0.0, 1.0);

struct Regular {
  cplx u;
  cplx v;
};

// u' = ih - 2 alpha^2 u^2,  v' = -2 alpha^2 u v
Regular regular_rhs(const Regular& s, double alpha, double h) {
  const double a2 = alpha * alpha;
  return {kI * h - 2.0 * a2 * s.u * s.u, -2.0 * a2 * s.u * s.v};
}

Regular rk4(const Regular& s, double alpha, double h, double dt) {
  auto add = [](const Regular& x, const Regular& d, double c) { return Regular{x.u + c * d.u, x.v + c * d.v}; };
  const Regular k1 = regular_rhs(s, alpha, h);
  const Regular k2 = regular_rhs(add(s, k1, 0.5 * dt), alpha, h);
  const Regular k3 = regular_rhs(add(s, k2, 0.5 * dt), alpha, h);
  const Regular k4 = regular_rhs(add(s, k3, dt), alpha, h);
  return {s.u + dt / 6.0 * (k1.u + 2.0 * k2.u + 2.0 * k3.u + k4.u),
          s.v + dt / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v)};
}

}  // namespace

cplx GaussianKernelState::norm_c() const { return std::sqrt(beta / (2.0 * std::numbers::pi)); }

cplx GaussianKernelState::sigma() const { return std::sqrt(2.0 * alpha * alpha / (kI * h)); }

cplx GaussianKernelState::fitted_g() const {
  // coth(sigma G t) = omega / sigma  <=>  sigma G t = atanh(sigma / omega)
  const cplx s = sigma();
  return std::atanh(s / omega) / (s * t);
}

cplx GaussianKernelState::kernel(double x, double y) const {
  return norm_c() * std::exp(-0.5 * omega * (x * x + y * y) + beta * x * y - a * x - b * y - gamma_c);
}

KernelTrajectory propagate_coefficients(double alpha, double h, const BrownianPath& output, int record_stride) {
  if (alpha == 0.0) throw InvalidArgument("propagate_coefficients: alpha must be nonzero");
  if (!(h > 0.0)) throw InvalidArgument("propagate_coefficients: h must be positive");
  const int steps = output.steps();
  const double dt = output.dt;
  const int stride = std::max(1, record_stride);
  const cplx ih = kI * h;

  KernelTrajectory traj;
  traj.dt = dt;
  Regular s{0.0, 1.0};
  // A = a S and W = b + ih A / u with S = u / (ih v) stay regular at t = 0:
  //   dA = -alpha S dY,  dW = -(alpha / v) dY.
  cplx big_a = 0.0;
  cplx w = 0.0;
  cplx gamma_c = 0.0;
  cplx a_prev = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double dy = output.increments(0, k);
    const cplx sk = k == 0 ? cplx(0.0) : s.u / (ih * s.v);
    big_a -= alpha * sk * dy;
    w -= alpha / s.v * dy;
    s = rk4(s, alpha, h, dt);

    const double t = (k + 1) * dt;
    const cplx omega = 1.0 / s.u;
    if (!(omega.real() > 0.0) || !std::isfinite(omega.real())) {
      throw KernelDegeneracyError(t, "Re omega left the right half-plane");
    }
    const cplx sn = s.u / (ih * s.v);
    const cplx a = big_a / sn;
    gamma_c += -0.5 * ih * 0.5 * (a_prev * a_prev + a * a) * dt;
    a_prev = a;

    if ((k + 1) % stride == 0 || k + 1 == steps) {
      GaussianKernelState st;
      st.t = t;
      st.omega = omega;
      st.beta = s.v / s.u;
      st.a = a;
      st.b = w - ih * big_a / s.u;
      st.gamma_c = gamma_c;
      st.alpha = alpha;
      st.h = h;
      traj.states.push_back(st);
    }
  }
  return traj;
}

cplx small_time_omega(double alpha, double h, double t) {
  return 1.0 / (kI * h * t) + (2.0 / 3.0) * alpha * alpha * t;
}

cplx small_time_beta(double alpha, double h, double t) {
  return 1.0 / (kI * h * t) - alpha * alpha * t / 3.0;
}

Eigen::VectorXcd apply_kernel(const GaussianKernelState& st, const Eigen::VectorXd& ygrid, const Eigen::VectorXcd& f,
                              const Eigen::VectorXd& xgrid) {
  const Eigen::Index n = ygrid.size();
  if (n < 3 || f.size() != n) throw GridError("apply_kernel: grid and samples differ in length");
  for (Eigen::Index i = 1; i < n; ++i) {
    if (!(ygrid(i) > ygrid(i - 1))) throw GridError("apply_kernel: grid must be increasing");
  }
  const double peak = f.cwiseAbs().maxCoeff();
  if (std::abs(f(0)) > 1e-6 * peak || std::abs(f(n - 1)) > 1e-6 * peak) {
    throw ResolutionError("apply_kernel: the grid does not cover the support of f");
  }
  // The y-phase gradient Im(-omega y + beta x - b) is linear, so its largest
  // magnitude is reached at a corner of the (x, y) rectangle.
  double dy_max = 0.0;
  for (Eigen::Index i = 1; i < n; ++i) dy_max = std::max(dy_max, ygrid(i) - ygrid(i - 1));
  double k_max = 0.0;
  for (double x : {xgrid.minCoeff(), xgrid.maxCoeff()}) {
    for (double y : {ygrid(0), ygrid(n - 1)}) {
      k_max = std::max(k_max, std::abs(std::imag(-st.omega * y + st.beta * x - st.b)));
    }
  }
  if (k_max * dy_max > 0.5 * std::numbers::pi) {
    throw ResolutionError("apply_kernel: kernel wavelength " + std::to_string(2.0 * std::numbers::pi / k_max) +
                          " is shorter than four grid steps");
  }

  Eigen::VectorXd wts(n);
  wts(0) = 0.5 * (ygrid(1) - ygrid(0));
  wts(n - 1) = 0.5 * (ygrid(n - 1) - ygrid(n - 2));
  for (Eigen::Index i = 1; i + 1 < n; ++i) wts(i) = 0.5 * (ygrid(i + 1) - ygrid(i - 1));

  // Factor the y-only part once; the x-y coupling is exp(beta x y).
  Eigen::VectorXcd fy(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = ygrid(i);
    fy(i) = wts(i) * f(i) * std::exp(-0.5 * st.omega * y * y - st.b * y);
  }
  const cplx c = st.norm_c() * std::exp(-st.gamma_c);
  Eigen::VectorXcd g(xgrid.size());
  for (Eigen::Index j = 0; j < xgrid.size(); ++j) {
    const double x = xgrid(j);
    cplx acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) acc += std::exp(st.beta * (x * ygrid(i))) * fy(i);
    g(j) = c * std::exp(-0.5 * st.omega * x * x - st.a * x) * acc;
  }
  return g;
}

Eigen::VectorXcd apply_kernel(const GaussianKernelState& st, const Eigen::VectorXd& grid, const Eigen::VectorXcd& f) {
  return apply_kernel(st, grid, f, grid);
}

Eigen::VectorXcd galerkin_to_grid(const Eigen::VectorXcd& coefficients, const Eigen::VectorXd& grid) {
  const Eigen::MatrixXd hf = hermite::functions_on_grid(static_cast<int>(coefficients.size()), grid);
  return hf.transpose().cast<cplx>() * coefficients;
}

double grid_norm_sq(const Eigen::VectorXd& grid, const Eigen::VectorXcd& f) {
  if (grid.size() != f.size() || grid.size() < 2) throw GridError("grid_norm_sq: size mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i + 1 < grid.size(); ++i) {
    s += 0.5 * (std::norm(f(i)) + std::norm(f(i + 1))) * (grid(i + 1) - grid(i));
  }
  return s;
}

double weighted_sobolev_norm_sq(const Eigen::VectorXd& grid, const Eigen::VectorXcd& g) {
  const Eigen::Index n = grid.size();
  if (g.size() != n || n < 3) throw GridError("weighted_sobolev_norm_sq: size mismatch");
  Eigen::VectorXcd xg(n);
  Eigen::VectorXcd dg(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    xg(i) = grid(i) * g(i);
    const Eigen::Index lo = std::max<Eigen::Index>(0, i - 1);
    const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + 1);
    dg(i) = (g(hi) - g(lo)) / (grid(hi) - grid(lo));
  }
  return grid_norm_sq(grid, g) + grid_norm_sq(grid, xg) + grid_norm_sq(grid, dg);
}

CoefficientSamples sample_coefficients(double alpha, double t, int count, int steps, std::uint64_t seed,
                                       int parallelism) {
  if (count < 2 || steps < 2) throw InvalidArgument("sample_coefficients: need count >= 2 and steps >= 2");
  if (!(t > 0.0)) throw InvalidArgument("sample_coefficients: t must be positive");
  CoefficientSamples out;
  out.alpha = alpha;
  out.t = t;
  out.a.resize(count);
  out.b.resize(count);
  const double dt = t / steps;
  parallel_for(count, parallelism, [&](int i) {
    const BrownianPath path = sample_path(1, t, dt, seed, static_cast<std::uint64_t>(i));
    const ScalarPath xi = integrate_stochastic(path, [](double s) { return s; });
    std::vector<double> integrand(xi.times.size());
    for (std::size_t k = 0; k < integrand.size(); ++k) {
      const double s = xi.times[k];
      integrand[k] = s > 0.0 ? xi.values[k] / (s * s) : std::numeric_limits<double>::quiet_NaN();
    }
    const ScalarPath bint = integrate_time(xi.times, integrand);
    out.a[i] = alpha / t * xi.values.back();
    out.b[i] = alpha * bint.values.back();
  });
  return out;
}

CoefficientStats coefficient_stats(const CoefficientSamples& samples) {
  CoefficientStats r;
  r.samples = samples.a.size();
  const auto va = stats::covariance(samples.a, samples.a);
  const auto vb = stats::covariance(samples.b, samples.b);
  const auto cab = stats::covariance(samples.a, samples.b);
  std::vector<double> diff(samples.a.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = samples.a[i] - 0.5 * samples.b[i];
  const auto vd = stats::covariance(diff, diff);
  r.var_a = va.value;
  r.var_a_se = va.stderr;
  r.var_b = vb.value;
  r.var_b_se = vb.stderr;
  r.cov_ab = cab.value;
  r.cov_ab_se = cab.stderr;
  r.var_diff = vd.value;
  r.var_diff_se = vd.stderr;
  const double s2 = samples.alpha * samples.alpha * samples.t;
  r.expected_var = s2 / 3.0;
  r.expected_cov = s2 / 6.0;
  r.expected_var_diff = s2 / 4.0;
  return r;
}

const char* estimator_name(MomentEstimator e) {
  switch (e) {
    case MomentEstimator::Mean: return "mean";
    case MomentEstimator::MedianOfMeans: return "median-of-means";
    case MomentEstimator::Divergence: return "divergence";
  }
  return "?";
}

MomentEstimate estimate_moment(double p, const CoefficientSamples& samples) {
  if (!(p > 0.0)) throw InvalidArgument("estimate_moment: p must be positive");
  const std::size_t n = samples.a.size();
  if (n < 1000) throw InvalidArgument("estimate_moment: need at least 1000 samples");
  const double scale = p / (samples.alpha * samples.alpha * samples.t);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = samples.a[i];
    const double b = samples.b[i];
    x[i] = std::exp(scale * (a * a - a * b + b * b));
  }

  MomentEstimate r;
  r.p = p;
  r.t = samples.t;
  r.samples = n;
  for (std::size_t c = 1000; c <= n; c *= 10) {
    const std::span<const double> head(x.data(), c);
    r.checkpoints.push_back(c);
    r.running_mean.push_back(stats::mean_estimate(head).mean);
    r.running_median_of_means.push_back(stats::median_of_means(head, 32).mean);
  }
  const auto tail = stats::hill_tail_index(x, std::min<std::size_t>(1000, n / 10));
  r.tail_index = tail.kappa;
  r.tail_index_se = tail.stderr;

  if (p < 1.0) {
    const auto est = stats::mean_estimate(x);
    r.estimator = MomentEstimator::Mean;
    r.estimate = est.mean;
    r.stderr = est.stderr;
  } else if (p < 2.0) {
    const auto est = stats::median_of_means(x, 32);
    r.estimator = MomentEstimator::MedianOfMeans;
    r.estimate = est.mean;
    r.stderr = est.stderr;
  } else {
    r.estimator = MomentEstimator::Divergence;
    r.estimate = r.running_mean.back();
    r.stderr = std::numeric_limits<double>::infinity();
  }
  bool growing = r.running_median_of_means.size() >= 3;
  for (std::size_t i = 1; i < r.running_median_of_means.size(); ++i) {
    growing = growing && r.running_median_of_means[i] > r.running_median_of_means[i - 1];
  }
  r.diverging = growing && (tail.kappa - 2.0 * tail.stderr <= 1.0);
  return r;
}

}  // namespace qfilter
