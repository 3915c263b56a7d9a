#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "models.hpp"
#include "qfilter/pure_filter.hpp"
#include "qfilter/stats.hpp"

using namespace qfilter;
using namespace testmodels;

TEST_CASE("linear filter: silent model keeps the state") {
  const Eigen::VectorXcd chi0 = unit(4, 1);
  const auto traj = simulate_linear(silent(4), chi0, sample_path(1, 0.5, 1e-2, 1, 0));
  for (const auto& s : traj.states) CHECK((s - chi0).norm() == 0.0);
  CHECK(traj.role == StateRole::Linear);
  CHECK(traj.picture == Picture::Output);
}

TEST_CASE("linear filter: scalar model follows the Ito closed form") {
  // d chi = -1/2 chi dt + chi dY -> chi0 exp(Y - t).
  double mean_err = 0.0;
  const int paths = 50;
  for (int i = 0; i < paths; ++i) {
    const auto y = sample_path(1, 1.0, 1e-4, 3, i);
    const auto traj = simulate_linear(scalar(1.0), Eigen::VectorXcd::Constant(1, 1.0), y, FilterOptions{y.steps()});
    const double exact = std::exp(y.increments.sum() - 1.0);
    mean_err += std::abs(traj.states.back()(0) - exact) / exact / paths;
  }
  CHECK(mean_err < 0.02);
}

TEST_CASE("linear filter: oscillator norm martingale") {
  const ModelSpec model = oscillator_model(16);
  EnsembleSpec spec;
  spec.horizon = 0.5;
  spec.dt = 1e-3;
  spec.trajectories = 500;
  spec.seed = 4;
  spec.record_stride = 100;
  const auto ens = simulate_linear_ensemble(model, basis_vector(16, 0), spec);
  stats::RunningStats s;
  for (const auto& t : ens) {
    s.add(t.norm_sq.back());
    for (double n : t.norm_sq) CHECK(n > 0.0);
  }
  CHECK(std::abs(s.mean() - 1.0) <= 3.0 * s.stderr_of_mean() + 0.02);
}

TEST_CASE("nonlinear filter: trivial cases and unit norm") {
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(3, 3);
  const auto ident = custom(h, Eigen::MatrixXcd::Identity(3, 3));
  const Eigen::VectorXcd phi0 = unit(3, 2);
  const auto t1 = simulate_nonlinear(ident, phi0, sample_path(1, 0.5, 1e-2, 5, 0));
  for (const auto& s : t1.states) CHECK((s - phi0).norm() < 1e-13);

  const auto t2 = simulate_nonlinear(oscillator_model(16), unit(16, 3), sample_path(1, 0.5, 1e-3, 5, 0));
  for (const auto& s : t2.states) CHECK(std::abs(s.norm() - 1.0) <= 1e-12);
  CHECK(t2.picture == Picture::Innovation);
  CHECK_THROWS_AS(simulate_nonlinear(ident, Eigen::VectorXcd(2.0 * phi0), sample_path(1, 0.1, 1e-2, 5, 0)),
                  InvalidArgument);
}

TEST_CASE("nonlinear filter: pre-renormalization defect is first order") {
  const ModelSpec model = oscillator_model(16);
  const Eigen::VectorXcd phi0 = unit(16, 4);
  double coarse = 0.0, fine = 0.0;
  for (int i = 0; i < 40; ++i) {
    const auto b = sample_path(1, 0.2, 2e-3, 6, i);
    coarse += simulate_nonlinear(model, phi0, b).max_norm_defect;
    fine += simulate_nonlinear(model, phi0, refine(b, 2)).max_norm_defect;
  }
  const double ratio = coarse / fine;
  CHECK(ratio >= 1.5);
  CHECK(ratio <= 2.5);
}

TEST_CASE("nonlinear filter: C-moment growth bound") {
  const ModelSpec model = oscillator_model(16);
  const double alpha = check_dissipativity(model).alpha_hat;
  EnsembleSpec spec;
  spec.horizon = 0.5;
  spec.dt = 1e-3;
  spec.trajectories = 200;
  spec.seed = 8;
  spec.record_stride = 50;
  const Eigen::VectorXcd phi0 = basis_vector(16, 1);
  const auto ens = simulate_nonlinear_ensemble(model, phi0, spec);
  const double c0 = c_moment(phi0, model.control);
  for (std::size_t k = 0; k < ens.front().times.size(); ++k) {
    stats::RunningStats s;
    for (const auto& t : ens) s.add(c_moment(t.states[k], model.control));
    CHECK(s.mean() <= growth_bound(alpha, 0.0, ens.front().times[k], c0, 1.0) + 3.0 * s.stderr_of_mean());
  }
}

TEST_CASE("picture conversions") {
  SUBCASE("no coupling: innovation equals output") {
    const auto y = sample_path(1, 0.2, 1e-2, 9, 0);
    const auto lin = simulate_linear(silent(3), unit(3, 5), y);
    const auto n = normalize_trajectory(silent(3), lin);
    CHECK((n.innovation.increments - y.increments).norm() == 0.0);
    for (const auto& s : n.normalized.states) CHECK(std::abs(s.norm() - 1.0) <= 1e-14);

    const auto b = sample_path(1, 0.2, 1e-2, 9, 1);
    const auto nl = simulate_nonlinear(silent(3), unit(3, 5), b);
    const auto lift = lift_to_linear(silent(3), nl);
    CHECK((lift.output.increments - b.increments).norm() == 0.0);
    for (double v : lift.linear.norm_sq) CHECK(v == doctest::Approx(1.0));
  }

  SUBCASE("normalize after lift is the identity on the discrete grid") {
    const ModelSpec model = oscillator_model(12);
    const auto b = sample_path(1, 0.3, 1e-3, 10, 0);
    const auto nl = simulate_nonlinear(model, unit(12, 6), b);
    const auto lift = lift_to_linear(model, nl);
    CHECK(lift.floor_hits == 0);
    const auto back = normalize_trajectory(model, lift.linear);
    for (std::size_t k = 0; k < nl.states.size(); ++k) CHECK((back.normalized.states[k] - nl.states[k]).norm() <= 1e-10);
    CHECK((back.innovation.increments - b.increments).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SUBCASE("scalar inverse norm against its closed form") {
    // L = 1: d(1/||chi||^2) = -2 (1/||chi||^2) dB, so 1/||chi||^2 = exp(-2B - 2t).
    double mean_err = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto b = sample_path(1, 0.5, 1e-4, 11, i);
      const auto lift = lift_to_linear(scalar(1.0), simulate_nonlinear(scalar(1.0), Eigen::VectorXcd::Constant(1, 1.0), b));
      const double exact = std::exp(-2.0 * b.increments.sum() - 1.0);
      mean_err += std::abs(1.0 / lift.linear.norm_sq.back() - exact) / exact / 20;
    }
    CHECK(mean_err < 0.02);
  }

  SUBCASE("strided trajectories are rejected") {
    const ModelSpec model = oscillator_model(4);
    const auto traj = simulate_linear(model, unit(4, 1), sample_path(1, 0.1, 1e-2, 1, 0), FilterOptions{2});
    CHECK_THROWS_AS(normalize_trajectory(model, traj), InvalidArgument);
  }
}

TEST_CASE("pathwise equivalence improves with the step") {
  const auto s = equivalence_study(oscillator_model(8), unit(8, 7), 0.2, {4e-3, 2e-3, 1e-3}, 64, 12);
  CHECK(s.decreasing);
  CHECK(s.order >= 0.4);
}

TEST_CASE("Galerkin convergence") {
  SUBCASE("block-diagonal model has no truncation error") {
    auto family = [](int m) {
      Eigen::MatrixXcd h = build_oscillator_ladder(m).as_matrix();
      Eigen::MatrixXcd l = Eigen::MatrixXcd::Zero(m, m);
      for (int k = 0; k < m; ++k) l(k, k) = 1.0 / (1.0 + k);
      return custom(h, l);
    };
    const auto t = galerkin_convergence(family, {4, 8, 16}, unit(4, 8), 0.2, 1e-3, 4, 13);
    for (double e : t.errors) CHECK(e == 0.0);
  }
  SUBCASE("oscillator from the ground state") {
    const auto t = galerkin_convergence([](int m) { return oscillator_model(m); }, {8, 16, 32, 64},
                                        basis_vector(8, 0), 0.5, 1e-3, 8, 14);
    CHECK(t.strictly_decreasing);
    CHECK(t.slope <= -0.4);
    CHECK(t.reference_dim == 64);
    CHECK(t.lambdas.front() == doctest::Approx(15.0));
  }
}

TEST_CASE("martingale report") {
  const ModelSpec model = silent(3);
  EnsembleSpec spec;
  spec.horizon = 0.2;
  spec.dt = 1e-2;
  spec.trajectories = 10;
  const auto ens = simulate_linear_ensemble(model, unit(3, 1), spec);
  const auto r = martingale_report(ens, model.control, {});
  for (double se : r.se_norm_sq) CHECK(se == 0.0);
  CHECK_FALSE(r.any_norm_violation);

  spec.trajectories = 4000;
  spec.dt = 1e-3;
  const auto g = simulate_linear_ensemble(scalar(1.0), Eigen::VectorXcd::Constant(1, 1.0), spec);
  MartingaleOptions o;
  o.allowance = 0.0;
  const auto rg = martingale_report(g, scalar(1.0).control, o);
  CHECK_FALSE(rg.any_norm_violation);
}

TEST_CASE("ensembles are independent of parallelism") {
  EnsembleSpec spec;
  spec.horizon = 0.1;
  spec.dt = 1e-3;
  spec.trajectories = 16;
  spec.seed = 3;
  spec.record_stride = 100;
  const auto a = simulate_linear_ensemble(oscillator_model(8), unit(8, 2), spec);
  spec.parallelism = 4;
  const auto b = simulate_linear_ensemble(oscillator_model(8), unit(8, 2), spec);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].states.back() == b[i].states.back());
}
