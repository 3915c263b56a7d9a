#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "qfilter/sde_engine.hpp"
#include "qfilter/stats.hpp"

using namespace qfilter;
using Scalar1 = Eigen::VectorXcd;
using cplx = std::complex<double>;

TEST_CASE("paths are reproducible and keyed by index") {
  const auto a = sample_path(1, 1.0, 0.25, 7, 0);
  const auto b = sample_path(1, 1.0, 0.25, 7, 0);
  CHECK(a.steps() == 4);
  CHECK(a.increments == b.increments);
  CHECK_FALSE(a.increments == sample_path(1, 1.0, 0.25, 7, 1).increments);
  CHECK_FALSE(a.increments == sample_path(1, 1.0, 0.25, 8, 0).increments);
  CHECK(sample_path(3, 1.0, 0.25, 7, 0).increments.rows() == 3);
}

TEST_CASE("grid validation") {
  CHECK(grid_steps(1.0, 1e-3) == 1000);
  CHECK_THROWS_AS(grid_steps(1.0, 0.3), GridError);
  CHECK_THROWS_AS(sample_path(1, 1.0, 0.3, 0, 0), GridError);
  CHECK_THROWS_AS(sample_path(1, 1.0, -0.1, 0, 0), GridError);
}

TEST_CASE("increment variance and stream independence") {
  const auto p = sample_path(1, 1e4, 0.01, 42, 0);
  REQUIRE(p.steps() == 1000000);
  stats::RunningStats s;
  for (Eigen::Index k = 0; k < p.increments.cols(); ++k) s.add(p.increments(0, k));
  CHECK(std::abs(s.variance() - 0.01) <= 3.0 * std::sqrt(2.0 / 1e6) * 0.01);
  CHECK(std::abs(s.mean()) <= 4.0 * std::sqrt(0.01 / 1e6));

  const auto q0 = sample_path(1, 1e3, 0.01, 42, 0);
  const auto q1 = sample_path(1, 1e3, 0.01, 42, 1);
  const Eigen::ArrayXd x = q0.increments.row(0).array();
  const Eigen::ArrayXd y = q1.increments.row(0).array();
  const double r = ((x - x.mean()) * (y - y.mean())).sum() /
                   std::sqrt((x - x.mean()).square().sum() * (y - y.mean()).square().sum());
  CHECK(std::abs(r) <= 0.01);
}

TEST_CASE("bridge refinement") {
  const auto p = sample_path(2, 1.0, 0.01, 5, 3);
  const auto r2 = refine(p, 2);
  CHECK(r2.dt == doctest::Approx(0.005));
  CHECK((coarsen(r2, 2).increments - p.increments).cwiseAbs().maxCoeff() <= 1e-14);
  const auto r4 = refine(p, 4);
  CHECK((refine(r2, 2).increments - r4.increments).cwiseAbs().maxCoeff() == 0.0);
  CHECK((coarsen(r4, 4).increments - p.increments).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK_THROWS_AS(refine(p, 3), InvalidArgument);

  // Refined increments have variance dt / factor.
  const auto big = refine(sample_path(1, 100.0, 0.01, 9, 0), 8);
  stats::RunningStats s;
  for (Eigen::Index k = 0; k < big.increments.cols(); ++k) s.add(big.increments(0, k));
  const double target = 0.01 / 8;
  CHECK(std::abs(s.variance() - target) <= 4.0 * std::sqrt(2.0 / s.count()) * target);
}

TEST_CASE("Euler-Maruyama trivial and blow-up behaviour") {
  const auto path = sample_path(1, 1.0, 0.01, 1, 0);
  const Scalar1 x0 = Scalar1::Constant(2, cplx(1.0, 2.0));
  const StateMap<Scalar1> zero = [](const Scalar1& x) { return Scalar1(Scalar1::Zero(x.size())); };
  const auto traj = euler_maruyama<Scalar1>(zero, {zero}, x0, path);
  CHECK(traj.states.size() == 101);
  for (const auto& s : traj.states) CHECK(s == x0);

  const StateMap<Scalar1> explode = [](const Scalar1& x) { return Scalar1(x.array() * x.array() * 1e200); };
  try {
    euler_maruyama<Scalar1>(explode, {}, x0, path);
    FAIL("expected blow-up");
  } catch (const BlowUpError& e) {
    CHECK(e.step() >= 1);
    CHECK(e.step() <= 100);
  }
}

namespace {

// d chi = -1/2 chi dt + chi dY; exact chi0 exp(Y(T) - T).
double geometric_error(const BrownianPath& path) {
  const StateMap<Scalar1> drift = [](const Scalar1& x) { return Scalar1(-0.5 * x); };
  const StateMap<Scalar1> diff = [](const Scalar1& x) { return x; };
  const auto traj = euler_maruyama<Scalar1>(drift, {diff}, Scalar1::Constant(1, 1.0), path, {},
                                            EmOptions{path.steps()});
  const double exact = std::exp(path.increments.sum() - path.horizon);
  return std::abs(traj.states.back()(0) - exact);
}

}  // namespace

TEST_CASE("geometric model: strong order and martingale") {
  const int paths = 200;
  std::vector<double> dts{1e-2, 1e-3, 1e-4};
  std::vector<double> errs(3, 0.0);
  for (int i = 0; i < paths; ++i) {
    const auto fine = sample_path(1, 1.0, 1e-4, 77, i);
    errs[2] += geometric_error(fine) / paths;
    errs[1] += geometric_error(coarsen(fine, 10)) / paths;
    errs[0] += geometric_error(coarsen(fine, 100)) / paths;
  }
  const double order = stats::observed_order(dts, errs);
  CHECK(order >= 0.4);
  CHECK(order <= 0.6);

  stats::RunningStats norm;
  const StateMap<Scalar1> drift = [](const Scalar1& x) { return Scalar1(-0.5 * x); };
  const StateMap<Scalar1> diff = [](const Scalar1& x) { return x; };
  for (int i = 0; i < 4000; ++i) {
    const auto p = sample_path(1, 1.0, 1e-2, 78, i);
    const auto t = euler_maruyama<Scalar1>(drift, {diff}, Scalar1::Constant(1, 1.0), p, {}, EmOptions{100});
    norm.add(std::norm(t.states.back()(0)));
  }
  CHECK(std::abs(norm.mean() - 1.0) <= 3.0 * norm.stderr_of_mean());
}

TEST_CASE("post-step hook and record stride") {
  const auto path = sample_path(1, 1.0, 0.1, 2, 0);
  const StateMap<Scalar1> drift = [](const Scalar1& x) { return x; };
  int calls = 0;
  const auto traj = euler_maruyama<Scalar1>(
      drift, {}, Scalar1::Constant(1, 1.0), path,
      [&](int k, Scalar1& x) {
        CHECK(k == calls);
        ++calls;
        x(0) = 1.0;
      },
      EmOptions{3});
  CHECK(calls == 10);
  CHECK(traj.times.size() == 5);  // 0, 3, 6, 9 and the final 10
  CHECK(traj.times.back() == doctest::Approx(1.0));
}

TEST_CASE("stochastic and time integrals") {
  const auto path = sample_path(1, 1.0, 1e-3, 4, 0);
  const auto zero = integrate_stochastic(path, [](double) { return 0.0; });
  for (double v : zero.values) CHECK(v == 0.0);
  const auto w = integrate_stochastic(path, [](double) { return 1.0; });
  const auto cum = path.cumulative();
  for (std::size_t k = 0; k < cum.size(); ++k) CHECK(w.values[k] == doctest::Approx(cum[k]).epsilon(1e-15));

  const auto ti = integrate_time(path, [](double s) { return s; });
  CHECK(ti.values.back() == doctest::Approx(0.5).epsilon(1e-12));
  const auto sing = integrate_time(path, [](double s) { return 1.0 / (s * s); });
  CHECK(sing.regularized);
  CHECK(std::isfinite(sing.values.back()));
}

TEST_CASE("Ito isometry for f in {1, s, s^2}") {
  const int n = 10000;
  const double t = 1.0;
  const std::vector<std::function<double(double)>> fs{[](double) { return 1.0; }, [](double s) { return s; },
                                                      [](double s) { return s * s; }};
  const std::vector<double> exact{t, t * t * t / 3.0, std::pow(t, 5) / 5.0};
  for (std::size_t f = 0; f < fs.size(); ++f) {
    stats::RunningStats sq;
    for (int i = 0; i < n; ++i) {
      const auto p = sample_path(1, t, 1e-2, 100 + f, i);
      sq.add(std::pow(integrate_stochastic(p, fs[f]).values.back(), 2));
    }
    // Left-point sums of s^k are biased by O(dt); compare against the
    // discrete isometry sum_k f(t_k)^2 dt, which converges to the integral.
    double discrete = 0.0;
    for (int k = 0; k < 100; ++k) discrete += std::pow(fs[f](k * 1e-2), 2) * 1e-2;
    CHECK(std::abs(sq.mean() - discrete) <= 4.0 * sq.stderr_of_mean());
    CHECK(discrete == doctest::Approx(exact[f]).epsilon(0.03));
  }
}

TEST_CASE("parallel_for is schedule independent") {
  std::vector<double> a(64), b(64);
  auto fill = [](std::vector<double>& v) {
    return [&v](int i) { v[i] = sample_path(1, 1.0, 0.01, 3, i).increments.sum(); };
  };
  parallel_for(64, 1, fill(a));
  parallel_for(64, 4, fill(b));
  CHECK(a == b);
}

TEST_CASE("binary trajectory dump") {
  const auto file = (std::filesystem::temp_directory_path() / "qfilter_dump.bin").string();
  std::vector<Eigen::VectorXcd> rows{Eigen::VectorXcd::Constant(3, cplx(1.0, -1.0)), Eigen::VectorXcd::Zero(3)};
  write_binary_trajectory(file, {0.0, 0.5}, rows);
  CHECK(std::filesystem::file_size(file) == 4 + 4 + 4 + 2 * 8 + 2 * 3 * 8);
  std::filesystem::remove(file);
}

TEST_CASE("statistics helpers") {
  std::vector<double> xs(3200);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(2.0, 1.0);
  for (double& x : xs) x = n(rng);
  const auto mom = stats::median_of_means(xs, 32);
  CHECK(std::abs(mom.mean - 2.0) < 0.1);
  CHECK(mom.count == 3200);

  // Pareto with tail index 1.5.
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> pareto(100000);
  for (double& x : pareto) x = std::pow(1.0 - u(rng), -1.0 / 1.5);
  const auto hill = stats::hill_tail_index(pareto, 1000);
  CHECK(std::abs(hill.kappa - 1.5) <= 4.0 * hill.stderr);

  const std::vector<double> lx{1.0, 2.0, 3.0}, ly{3.0, 5.0, 7.0};
  const auto line = stats::fit_line(lx, ly);
  CHECK(line.slope == doctest::Approx(2.0));
  CHECK(line.intercept == doctest::Approx(1.0));
  const std::vector<double> dts{1e-2, 1e-3}, errs{1e-1, 1e-2};
  CHECK(stats::observed_order(dts, errs) == doctest::Approx(1.0));
}
