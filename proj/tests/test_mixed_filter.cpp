#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "models.hpp"
#include "qfilter/mixed_filter.hpp"
#include "qfilter/pure_filter.hpp"
#include "qfilter/stats.hpp"

using namespace qfilter;
using namespace testmodels;

namespace {

Eigen::MatrixXcd projector(const Eigen::VectorXcd& x) { return x * x.adjoint(); }

BrownianPath refined(const BrownianPath& p, int factor) { return factor == 1 ? p : refine(p, factor); }

ModelSpec damping(double drive) {
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(2, 2);
  h(0, 1) = h(1, 0) = 0.5 * drive;
  return custom(h, build_lowering(2).entries());
}

}  // namespace

TEST_CASE("linear master: silent model and factorized states") {
  const Eigen::MatrixXcd g0 = diagonal_density(3, {0.2, 0.3, 0.5});
  const auto t = simulate_linear_master(silent(3), g0, sample_path(1, 0.3, 1e-2, 1, 0));
  for (const auto& g : t.states) CHECK((g - g0).norm() == 0.0);

  // gamma = chi chi^* solves the linear master equation pathwise up to O(dt).
  const ModelSpec model = oscillator_model(8);
  const Eigen::VectorXcd chi0 = unit(8, 3);
  std::vector<double> errs;
  for (double dt : {1e-3, 2.5e-4}) {
    double e = 0.0;
    for (int i = 0; i < 8; ++i) {
      const auto y = refined(sample_path(1, 0.2, 1e-3, 2, i), static_cast<int>(std::lround(1e-3 / dt)));
      const auto pure = simulate_linear(model, chi0, y, FilterOptions{y.steps()});
      const auto mixed = simulate_linear_master(model, projector(chi0), y, MasterOptions{y.steps(), false});
      e += (mixed.states.back() - projector(pure.states.back())).norm() / 8;
    }
    errs.push_back(e);
  }
  CHECK(errs[0] < 0.05);
  CHECK(errs[1] < 0.5 * errs[0]);
}

TEST_CASE("linear master: scalar closed form and trace martingale") {
  double err = 0.0;
  for (int i = 0; i < 20; ++i) {
    const auto y = sample_path(1, 0.5, 1e-4, 3, i);
    const auto t = simulate_linear_master(scalar(1.0), Eigen::MatrixXcd::Constant(1, 1, 1.0), y,
                                          MasterOptions{y.steps(), false});
    const double exact = std::exp(2.0 * y.increments.sum() - 1.0);
    err += std::abs(t.traces.back() - exact) / exact / 20;
  }
  CHECK(err < 0.03);
}

TEST_CASE("trace martingale report") {
  SUBCASE("no coupling: trace constant, zero residual") {
    std::vector<DensityTrajectory> ens;
    for (int i = 0; i < 3; ++i) {
      ens.push_back(simulate_linear_master(silent(3), diagonal_density(3, {1.0}), sample_path(1, 0.1, 1e-2, 4, i)));
    }
    const auto r = trace_martingale_report(std::span<const DensityTrajectory>(ens), build_oscillator_ladder(3), {});
    CHECK(r.max_trace_residual == 0.0);
    for (double m : r.mean_trace) CHECK(m == doctest::Approx(1.0));
    CHECK_FALSE(r.any_trace_violation);
  }
  SUBCASE("oscillator, rank-2 start: conservative and within the growth bound") {
    const ModelSpec model = oscillator_model(16);
    const CompiledModel compiled(model);
    const double alpha = check_dissipativity(model).alpha_hat;
    const Eigen::MatrixXcd g0 = diagonal_density(16, {0.5, 0.5});
    std::vector<TraceSummary> sums;
    for (int i = 0; i < 2000; ++i) {
      const auto y = sample_path(1, 0.5, 1e-3, 5, i);
      sums.push_back(summarize_trace(simulate_linear_master(compiled, g0, y, MasterOptions{100, false}), model.control));
    }
    MartingaleOptions o;
    o.alpha = alpha;
    o.se_multiplier = 3.0;
    const auto r = trace_martingale_report(std::span<const TraceSummary>(sums), o);
    CHECK(std::abs(r.mean_trace.back() - 1.0) <= 3.0 * r.se_trace.back());
    CHECK_FALSE(r.any_growth_violation);
    CHECK(r.max_trace_residual < 1e-12);
  }
}

TEST_CASE("nonlinear master") {
  SUBCASE("identity coupling leaves the state fixed") {
    const auto model = custom(Eigen::MatrixXcd::Zero(3, 3), Eigen::MatrixXcd::Identity(3, 3));
    const Eigen::MatrixXcd r0 = diagonal_density(3, {0.6, 0.4});
    const auto t = simulate_nonlinear_master(model, r0, sample_path(1, 0.3, 1e-2, 6, 0));
    for (const auto& r : t.states) CHECK((r - r0).norm() < 1e-13);
  }
  SUBCASE("unit trace every step") {
    const auto t = simulate_nonlinear_master(oscillator_model(8), diagonal_density(8, {0.5, 0.3, 0.2}),
                                             sample_path(1, 0.3, 1e-3, 7, 0), MasterOptions{1, true});
    for (double tr : t.traces) CHECK(std::abs(tr - 1.0) <= 1e-12);
    for (const auto& r : t.states) CHECK(std::abs(r.trace().real() - 1.0) <= 1e-12);
    CHECK(t.min_eigenvalues.size() == t.states.size());
  }
  SUBCASE("amplitude damping in mean") {
    const ModelSpec model = damping(0.0);
    const CompiledModel compiled(model);
    const Eigen::MatrixXcd r0 = diagonal_density(2, {0.0, 1.0});
    stats::RunningStats ee;
    for (int i = 0; i < 1000; ++i) {
      const auto b = sample_path(1, 1.0, 1e-3, 8, i);
      ee.add(simulate_nonlinear_master(compiled, r0, b, MasterOptions{1000, false}).states.back()(1, 1).real());
    }
    CHECK(std::abs(ee.mean() - std::exp(-1.0)) <= 3.0 * ee.stderr_of_mean());
  }
  SUBCASE("invalid starts") {
    const auto b = sample_path(1, 0.1, 1e-2, 1, 0);
    CHECK_THROWS_AS(simulate_nonlinear_master(oscillator_model(3), diagonal_density(3, {0.5}), b), NotAStateError);
    CHECK_THROWS_AS(simulate_nonlinear_master(oscillator_model(3), diagonal_density(3, {1.5, -0.5}), b), NotAStateError);
  }
}

TEST_CASE("master picture conversions") {
  SUBCASE("no coupling") {
    const auto y = sample_path(1, 0.2, 1e-2, 9, 0);
    const auto lin = simulate_linear_master(silent(2), diagonal_density(2, {0.4, 0.6}), y);
    const auto n = normalize_master(silent(2), lin);
    CHECK((n.innovation.increments - y.increments).norm() == 0.0);
    const auto nl = simulate_nonlinear_master(silent(2), diagonal_density(2, {0.4, 0.6}), y);
    const auto lift = lift_master(silent(2), nl);
    CHECK((lift.output.increments - y.increments).norm() == 0.0);
    for (double tr : lift.linear.traces) CHECK(tr == doctest::Approx(1.0));
  }
  SUBCASE("round trip on the discrete grid") {
    const ModelSpec model = oscillator_model(8);
    const auto b = sample_path(1, 0.3, 1e-3, 10, 0);
    const auto nl = simulate_nonlinear_master(model, diagonal_density(8, {0.7, 0.3}), b);
    const auto lift = lift_master(model, nl);
    CHECK(lift.floor_hits == 0);
    const auto back = normalize_master(model, lift.linear);
    for (std::size_t k = 0; k < nl.states.size(); ++k) CHECK((back.normalized.states[k] - nl.states[k]).norm() <= 1e-10);
    CHECK((back.innovation.increments - b.increments).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("scalar trace closed form") {
    // tr gamma = exp(2Y - 2t) with dY = dB + 2 dt, i.e. exp(2B + 2t).
    double err = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto b = sample_path(1, 0.5, 1e-4, 11, i);
      const auto nl = simulate_nonlinear_master(scalar(1.0), Eigen::MatrixXcd::Constant(1, 1, 1.0), b);
      const auto lift = lift_master(scalar(1.0), nl);
      const double y = lift.output.increments.sum();
      const double exact = std::exp(2.0 * y - 1.0);
      err += std::abs(lift.linear.traces.back() - exact) / exact / 20;
    }
    CHECK(err < 0.03);
  }
}

TEST_CASE("deterministic Lindblad solver") {
  SUBCASE("no coupling: isospectral") {
    const ModelSpec model = custom(build_hamiltonian([](double x) { return x * x; }, 6).entries(),
                                   Eigen::MatrixXcd::Zero(6, 6));
    const Eigen::MatrixXcd g0 = projector(unit(6, 4)) * 0.5 + diagonal_density(6, {0.2, 0.3});
    const auto t = solve_lindblad(model, g0, 1.0, 1e-3, 100);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> e0(g0), e1(t.states.back());
    CHECK((e0.eigenvalues() - e1.eigenvalues()).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("amplitude damping closed form") {
    const auto t = solve_lindblad(damping(0.0), diagonal_density(2, {0.0, 1.0}), 1.0, 1e-3, 100);
    for (std::size_t k = 0; k < t.states.size(); ++k) {
      CHECK(t.states[k](1, 1).real() == doctest::Approx(std::exp(-t.times[k])).epsilon(1e-10));
    }
  }
  SUBCASE("trace conservation") {
    const auto t = solve_lindblad(oscillator_model(16), diagonal_density(16, {0.5, 0.5}), 1.0, 1e-3, 10);
    for (double tr : t.traces) CHECK(std::abs(tr - 1.0) <= 1e-10);
  }
  SUBCASE("ensemble mean of the linear equation") {
    const ModelSpec model = damping(1.0);
    const CompiledModel compiled(model);
    const Eigen::MatrixXcd g0 = diagonal_density(2, {0.0, 1.0});
    const auto exact = solve_lindblad(model, g0, 0.5, 1e-4, 5000).states.back();
    Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(2, 2);
    stats::RunningStats s00, sre;
    for (int i = 0; i < 1000; ++i) {
      const auto g = simulate_linear_master(compiled, g0, sample_path(1, 0.5, 1e-4, 12, i), MasterOptions{5000, false})
                         .states.back();
      s00.add(g(0, 0).real());
      sre.add(g(0, 1).imag());
    }
    CHECK(std::abs(s00.mean() - exact(0, 0).real()) <= 3.0 * s00.stderr_of_mean());
    CHECK(std::abs(sre.mean() - exact(0, 1).imag()) <= 3.0 * sre.stderr_of_mean());
  }
}

TEST_CASE("spectral decomposition") {
  const auto half = spectral_decompose(Eigen::MatrixXcd::Identity(2, 2) * 0.5);
  REQUIRE(half.weights.size() == 2);
  CHECK(half.weights[0] == doctest::Approx(0.5));
  CHECK(half.weights[1] == doctest::Approx(0.5));
  CHECK(std::abs(half.members[0].dot(half.members[1])) < 1e-14);

  const Eigen::VectorXcd phi = unit(5, 9);
  const auto pure = spectral_decompose(projector(phi));
  REQUIRE(pure.weights.size() == 1);
  CHECK(pure.weights[0] == doctest::Approx(1.0));

  const Eigen::MatrixXcd rho = 0.3 * projector(unit(5, 1)) + 0.7 * projector(unit(5, 2));
  CHECK((spectral_decompose(rho).reconstruct() - rho).norm() <= 1e-12);

  CHECK_THROWS_AS(spectral_decompose(diagonal_density(2, {1.1, -0.1})), NotAStateError);
  Eigen::MatrixXcd tiny = diagonal_density(2, {1.0, 0.0});
  tiny(1, 1) = -1e-12;
  const auto clipped = spectral_decompose(tiny);
  CHECK(clipped.clipped);
  CHECK(clipped.weights.size() == 1);
}

TEST_CASE("vectorized unraveling") {
  const ModelSpec model = oscillator_model(8);
  SUBCASE("single member matches the nonlinear pure filter") {
    const Eigen::VectorXcd phi0 = unit(8, 3);
    const auto b = sample_path(1, 0.2, 1e-4, 13, 0);
    const auto unr = simulate_vectorized_unraveling(model, spectral_decompose(projector(phi0)), b, MasterOptions{200, false});
    const auto pure = simulate_nonlinear(model, phi0, b, FilterOptions{200});
    for (std::size_t k = 0; k < pure.states.size(); ++k) {
      CHECK((unr.density.states[k] - projector(pure.states[k])).norm() < 2e-2);
    }
  }
  SUBCASE("rank-1 start agrees with the direct nonlinear master equation") {
    const Eigen::MatrixXcd r0 = projector(unit(8, 4));
    const auto b = sample_path(1, 0.2, 1e-4, 14, 0);
    const auto unr = simulate_vectorized_unraveling(model, spectral_decompose(r0), b, MasterOptions{200, true});
    const auto direct = simulate_nonlinear_master(model, r0, b, MasterOptions{200, false});
    for (std::size_t k = 0; k < direct.states.size(); ++k) {
      CHECK((unr.density.states[k] - direct.states[k]).norm() < 2e-2);
    }
    for (double e : unr.density.min_eigenvalues) CHECK(e >= -1e-10);
    CHECK(unr.feedback.rows() == 1);
  }
  SUBCASE("rank-3 start converges under step halving") {
    const auto s = unraveling_study(model, diagonal_density(8, {0.5, 0.3, 0.2}), 0.2, {8e-4, 4e-4, 2e-4}, 32, 15);
    CHECK(s.decreasing);
    CHECK(s.order >= 0.4);
    CHECK(s.min_eigenvalue >= -1e-10);
  }
}

TEST_CASE("Hamiltonian sensitivity") {
  const ModelSpec m1 = oscillator_model(8);
  const Eigen::MatrixXcd g0 = diagonal_density(8, {1.0});
  SensitivityOptions o;
  o.trajectories = 20;
  o.horizon = 0.2;
  const auto same = hamiltonian_sensitivity(m1, m1, g0, o);
  for (double d : same.mean_distance) CHECK(d == 0.0);

  ModelSpec shifted = m1;
  shifted.hamiltonian = TruncatedOperator(m1.hamiltonian.entries() + 0.1 * Eigen::MatrixXcd::Identity(8, 8));
  const auto r = hamiltonian_sensitivity(m1, shifted, g0, o);
  for (double d : r.mean_distance) CHECK(d < 1e-12);
  CHECK(r.hamiltonian_gap == doctest::Approx(0.1));
  CHECK(r.bound.back() == doctest::Approx(2.0 * 0.2 * 0.1));
  CHECK_FALSE(r.any_violation);

  ModelSpec other = m1;
  other.couplings[0] = build_coupling(0.0, 1.0, 8);
  CHECK_THROWS_AS(hamiltonian_sensitivity(m1, other, g0, o), IncompatibleModels);
  CHECK_THROWS_AS(hamiltonian_sensitivity(m1, oscillator_model(6), g0, o), IncompatibleModels);
}

TEST_CASE("C-weighted trace norm") {
  const TruncationLadder one(Eigen::VectorXd::Constant(1, 1.0));
  CHECK(c_trace_norm(Eigen::MatrixXcd::Constant(1, 1, 1.0), one) == doctest::Approx(1.0));
  const TruncationLadder two(Eigen::Vector2d(1.0, 3.0));
  CHECK(c_trace_norm(diagonal_density(2, {0.5, 0.5}), two) == doctest::Approx(5.0));

  const auto ladder = build_oscillator_ladder(6);
  const Eigen::MatrixXcd g = 0.4 * projector(unit(6, 5)) + 0.6 * projector(unit(6, 6));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(g);
  const Eigen::MatrixXcd root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                                es.eigenvectors().adjoint();
  const double hs = (ladder.as_matrix() * root).squaredNorm();
  CHECK(std::abs(c_trace_norm(g, ladder) - hs) <= 1e-10);
  CHECK(trace_norm(diagonal_density(2, {0.5, -0.25})) == doctest::Approx(0.75));
}

TEST_CASE("positivity of the linear scheme is first order") {
  const ModelSpec model = oscillator_model(8);
  const Eigen::MatrixXcd g0 = diagonal_density(8, {0.5, 0.5});
  std::vector<double> scaled;
  for (double dt : {2e-3, 1e-3}) {
    double lowest = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto y = refined(sample_path(1, 0.2, 2e-3, 16, i), static_cast<int>(std::lround(2e-3 / dt)));
      const auto t = simulate_linear_master(model, g0, y, MasterOptions{1, true});
      for (double e : t.min_eigenvalues) lowest = std::min(lowest, e);
    }
    scaled.push_back(-lowest / dt);
  }
  // c = -min_eig / dt stays bounded under halving.
  CHECK(scaled[1] <= 2.0 * scaled[0] + 1e-6);
}
