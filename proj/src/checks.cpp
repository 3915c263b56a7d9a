#include "qfilter/checks.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "qfilter/errors.hpp"
#include "qfilter/harness.hpp"
#include "qfilter/io.hpp"
#include "qfilter/stats.hpp"

namespace qfilter {

namespace {

constexpr double kAllowance = 0.02;

Eigen::MatrixXcd qubit_hamiltonian(double drive) {
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(2, 2);
  h(0, 1) = h(1, 0) = 0.5 * drive;
  return h;
}

ModelSpec qubit_model(double drive) {
  ModelSpec m;
  m.hamiltonian = TruncatedOperator(qubit_hamiltonian(drive));
  m.couplings.push_back(build_lowering(2));
  m.control = build_oscillator_ladder(2);
  return m;
}

// H2 = H1 + eps V / ||V|| with a bounded potential.
ModelSpec perturbed(const ModelSpec& base, double eps) {
  ModelSpec m = base;
  const Eigen::MatrixXcd v = build_potential([](double x) { return std::cos(x); }, base.dim()).entries();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(v, Eigen::EigenvaluesOnly);
  const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
  m.hamiltonian = TruncatedOperator(base.hamiltonian.entries() + (eps / norm) * v);
  return m;
}

}  // namespace

struct CheckContext {
  std::uint64_t seed;
  int parallelism;
  std::optional<MartingaleReport> norm_report;
  std::optional<TraceMartingaleReport> trace_report;
  double alpha_pure = 0.0;
  double alpha_mixed = 0.0;
  std::optional<CoefficientSamples> coefficients;

  std::uint64_t seed_for(int id) const { return stream_seed(seed, static_cast<std::uint64_t>(id), 0x61636365ULL); }

  static double alpha_for(const ModelSpec& model, std::uint64_t s) {
    DissipativityOptions o;
    o.seed = s;
    return check_dissipativity(model, o).alpha_hat;
  }

  const MartingaleReport& norm() {
    if (!norm_report) {
      const ModelSpec model = oscillator_model(32);
      alpha_pure = alpha_for(model, seed);
      EnsembleSpec spec;
      spec.horizon = 0.5;
      spec.dt = 1e-3;
      spec.trajectories = 2000;
      spec.seed = seed_for(1);
      spec.parallelism = parallelism;
      spec.record_stride = 10;
      const auto ens = simulate_linear_ensemble(model, basis_vector(32, 0), spec);
      MartingaleOptions mo;
      mo.alpha = alpha_pure;
      mo.se_multiplier = 3.0;
      mo.allowance = kAllowance;
      mo.growth_se_multiplier = 3.0;
      norm_report = martingale_report(ens, model.control, mo);
    }
    return *norm_report;
  }

  const TraceMartingaleReport& trace() {
    if (!trace_report) {
      const ModelSpec model = oscillator_model(32);
      alpha_mixed = alpha_for(model, seed);
      const CompiledModel compiled(model);
      const Eigen::MatrixXcd gamma0 = diagonal_density(32, {0.5, 0.5});
      const int n = 2000;
      const std::uint64_t s = seed_for(2);
      std::vector<TraceSummary> summaries(n);
      parallel_for(n, parallelism, [&](int i) {
        const BrownianPath y = sample_path(1, 0.5, 1e-3, s, static_cast<std::uint64_t>(i));
        summaries[i] = summarize_trace(simulate_linear_master(compiled, gamma0, y, MasterOptions{10, false}),
                                       model.control);
      });
      MartingaleOptions mo;
      mo.alpha = alpha_mixed;
      mo.se_multiplier = 3.0;
      mo.allowance = kAllowance;
      mo.growth_se_multiplier = 3.0;
      trace_report = trace_martingale_report(std::span<const TraceSummary>(summaries), mo);
    }
    return *trace_report;
  }

  const CoefficientSamples& coefficient_samples() {
    if (!coefficients) coefficients = sample_coefficients(1.0, 0.01, 100000, 1000, seed_for(6), parallelism);
    return *coefficients;
  }
};

namespace {

double worst_ratio(const std::vector<double>& mean, const std::vector<double>& se, double target, double allowance) {
  // Largest |mean - target| / (3 se + allowance); <= 1 means inside the band.
  double worst = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k) {
    const double band = 3.0 * se[k] + allowance;
    worst = std::max(worst, band > 0.0 ? std::abs(mean[k] - target) / band : (mean[k] == target ? 0.0 : INFINITY));
  }
  return worst;
}

CheckResult norm_martingale(CheckContext& c) {
  const auto& r = c.norm();
  CheckResult out;
  out.passed = !r.any_norm_violation;
  const auto [lo, hi] = std::minmax_element(r.mean_norm_sq.begin(), r.mean_norm_sq.end());
  out.detail = {{"recorded_times", r.times.size()},
                {"min_mean", *lo},
                {"max_mean", *hi},
                {"worst_band_ratio", worst_ratio(r.mean_norm_sq, r.se_norm_sq, 1.0, kAllowance)}};
  return out;
}

CheckResult trace_martingale(CheckContext& c) {
  const auto& r = c.trace();
  CheckResult out;
  out.passed = !r.any_trace_violation;
  const auto [lo, hi] = std::minmax_element(r.mean_trace.begin(), r.mean_trace.end());
  out.detail = {{"recorded_times", r.times.size()},
                {"min_mean", *lo},
                {"max_mean", *hi},
                {"worst_band_ratio", worst_ratio(r.mean_trace, r.se_trace, 1.0, kAllowance)},
                {"max_trace_residual", r.max_trace_residual}};
  return out;
}

CheckResult pathwise_equivalence(CheckContext& c) {
  Eigen::VectorXcd phi0 = basis_vector(16, 0) + basis_vector(16, 1);
  phi0.normalize();
  const auto s = equivalence_study(oscillator_model(16), phi0, 0.2, {4e-3, 2e-3, 1e-3}, 256, c.seed_for(3), c.parallelism);
  CheckResult out;
  out.passed = s.decreasing && s.order >= 0.4;
  out.detail = {{"dts", s.dts}, {"errors", s.errors}, {"order", s.order}, {"min_order", 0.4}};
  return out;
}

CheckResult unraveling(CheckContext& c) {
  const auto s = unraveling_study(oscillator_model(16), diagonal_density(16, {0.5, 0.3, 0.2}), 0.4,
                                  {8e-4, 4e-4, 2e-4, 1e-4}, 64, c.seed_for(4), c.parallelism);
  CheckResult out;
  out.passed = s.decreasing && s.order >= 0.4 && s.distances.back() <= 5e-2;
  out.detail = {{"dts", s.dts},
                {"distances", s.distances},
                {"order", s.order},
                {"min_order", 0.4},
                {"tolerance_at_finest", 5e-2},
                {"min_eigenvalue", s.min_eigenvalue}};
  return out;
}

CheckResult lindblad_consistency(CheckContext& c) {
  const ModelSpec model = qubit_model(1.0);
  const CompiledModel compiled(model);
  const Eigen::MatrixXcd gamma0 = diagonal_density(2, {0.0, 1.0});
  // Euler keeps the ensemble mean on the explicit Euler Lindblad recursion, so
  // dt must be small enough for that bias to sit well inside 3 SE.
  const double horizon = 1.0, dt = 1e-4;
  const int stride = 2500;
  const int n = 4000;
  const DensityTrajectory exact = solve_lindblad(model, gamma0, horizon, dt, stride);
  const std::size_t records = exact.states.size();
  // Real components: rho_00, rho_11, Re rho_01, Im rho_01.
  std::vector<std::vector<Eigen::Vector4d>> samples(n);
  const std::uint64_t s = c.seed_for(5);
  parallel_for(n, c.parallelism, [&](int i) {
    const BrownianPath y = sample_path(1, horizon, dt, s, static_cast<std::uint64_t>(i));
    const auto traj = simulate_linear_master(compiled, gamma0, y, MasterOptions{stride, false});
    for (const auto& g : traj.states) {
      samples[i].emplace_back(g(0, 0).real(), g(1, 1).real(), g(0, 1).real(), g(0, 1).imag());
    }
  });
  double worst_z = 0.0;
  bool ok = true;
  for (std::size_t k = 1; k < records; ++k) {
    const Eigen::MatrixXcd& e = exact.states[k];
    const Eigen::Vector4d target(e(0, 0).real(), e(1, 1).real(), e(0, 1).real(), e(0, 1).imag());
    for (int comp = 0; comp < 4; ++comp) {
      stats::RunningStats rs;
      for (int i = 0; i < n; ++i) rs.add(samples[i][k](comp));
      const double diff = std::abs(rs.mean() - target(comp));
      const double se = rs.stderr_of_mean();
      ok = ok && diff <= 3.0 * se;
      worst_z = std::max(worst_z, se > 0.0 ? diff / se : (diff == 0.0 ? 0.0 : INFINITY));
    }
  }
  // Damping analytic check.
  const DensityTrajectory damped = solve_lindblad(qubit_model(0.0), gamma0, 1.0, 1e-3, 1000);
  const double excited = damped.states.back()(1, 1).real();
  const double rel = std::abs(excited / std::exp(-1.0) - 1.0);
  CheckResult out;
  out.passed = ok && rel <= 0.01;
  out.detail = {{"trajectories", n},
                {"compared_times", records - 1},
                {"max_component_z", worst_z},
                {"damping_excited_population", excited},
                {"damping_relative_error", rel}};
  return out;
}

CheckResult moment_boundary(CheckContext& c) {
  const auto& samples = c.coefficient_samples();
  const auto m05 = estimate_moment(0.5, samples);
  const auto m1 = estimate_moment(1.0, samples);
  const auto m2 = estimate_moment(2.0, samples);
  const double e05 = std::abs(m05.estimate / moment_limit(0.5) - 1.0);
  const double e1 = std::abs(m1.estimate / moment_limit(1.0) - 1.0);
  CheckResult out;
  out.passed = e05 <= 0.05 && e1 <= 0.10 && m1.estimator == MomentEstimator::MedianOfMeans && m2.diverging;
  out.detail = {{"p0.5", {{"estimate", m05.estimate}, {"target", moment_limit(0.5)}, {"relative_error", e05}}},
                {"p1", {{"estimate", m1.estimate}, {"target", moment_limit(1.0)}, {"relative_error", e1},
                        {"estimator", estimator_name(m1.estimator)}}},
                {"p2", {{"running_median_of_means", m2.running_median_of_means},
                        {"checkpoints", m2.checkpoints},
                        {"tail_index", m2.tail_index},
                        {"diverging", m2.diverging}}}};
  return out;
}

CheckResult coefficient_statistics(CheckContext& c) {
  const auto s = coefficient_stats(c.coefficient_samples());
  const double za = std::abs(s.var_a - s.expected_var) / s.var_a_se;
  const double zb = std::abs(s.var_b - s.expected_var) / s.var_b_se;
  const double zc = std::abs(s.cov_ab - s.expected_cov) / s.cov_ab_se;
  CheckResult out;
  out.passed = za <= 4.0 && zb <= 4.0 && zc <= 4.0;
  out.detail = io::to_json(s);
  out.detail["z"] = {za, zb, zc};
  return out;
}

CheckResult oracle(CheckContext& c) {
  OracleOptions o;
  o.seed = c.seed_for(8);
  const auto cmp = oracle_comparison(o);
  const auto st = small_time_check(1.0, 1.0, 1e-3, 1e-6);
  const double small = std::max({st.omega_relative_error, st.beta_relative_error, st.omega_real_relative_error,
                                 st.beta_real_relative_error});
  CheckResult out;
  out.passed = cmp.relative_l2_error <= 1e-2 && small <= 1e-3;
  out.detail = {{"relative_l2_error", cmp.relative_l2_error},
                {"first_integral_drift", cmp.first_integral_drift},
                {"small_time",
                 {{"omega", st.omega_relative_error},
                  {"beta", st.beta_relative_error},
                  {"omega_real", st.omega_real_relative_error},
                  {"beta_real", st.beta_real_relative_error}}}};
  return out;
}

CheckResult galerkin(CheckContext& c) {
  const auto table = galerkin_convergence([](int m) { return oscillator_model(m); }, {8, 16, 32, 64},
                                          basis_vector(8, 0), 0.5, 1e-3, 16, c.seed_for(9), c.parallelism);
  CheckResult out;
  out.passed = table.strictly_decreasing && table.slope <= -0.4;
  out.detail = io::to_json(table);
  return out;
}

CheckResult growth(CheckContext& c) {
  const auto& pure = c.norm();
  const auto& mixed = c.trace();
  CheckResult out;
  out.passed = !pure.any_growth_violation && !mixed.any_growth_violation;
  double pure_ratio = 0.0, mixed_ratio = 0.0;
  for (std::size_t k = 1; k < pure.times.size(); ++k) {
    pure_ratio = std::max(pure_ratio, pure.mean_c_sq[k] / pure.growth_bound[k]);
  }
  for (std::size_t k = 1; k < mixed.times.size(); ++k) {
    mixed_ratio = std::max(mixed_ratio, mixed.mean_c_norm[k] / mixed.growth_bound[k]);
  }
  out.detail = {{"alpha_pure", c.alpha_pure},
                {"alpha_mixed", c.alpha_mixed},
                {"beta", 0.0},
                {"max_pure_mean_over_bound", pure_ratio},
                {"max_mixed_mean_over_bound", mixed_ratio}};
  return out;
}

CheckResult sensitivity(CheckContext& c) {
  const ModelSpec m1 = oscillator_model(16);
  const ModelSpec m2 = perturbed(m1, 0.1);
  SensitivityOptions o;
  o.seed = c.seed_for(11);
  o.parallelism = c.parallelism;
  const auto r = hamiltonian_sensitivity(m1, m2, diagonal_density(16, {1.0}), o);
  CheckResult out;
  out.passed = !r.any_violation;
  double worst = 0.0;
  for (std::size_t k = 1; k < r.times.size(); ++k) worst = std::max(worst, r.mean_distance[k] / r.bound[k]);
  out.detail = {{"hamiltonian_gap", r.hamiltonian_gap}, {"max_mean_over_bound", worst}, {"trajectories", o.trajectories}};
  return out;
}

CheckResult girsanov(CheckContext& c) {
  const auto r = girsanov_density_check(oscillator_model(16), basis_vector(16, 0), 0.5, 1e-3, 5000, c.seed_for(12),
                                        {"one", "population:0", "population:1"}, c.parallelism);
  CheckResult out;
  out.passed = r.max_abs_z <= 4.0;
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"functional", row.functional},
                    {"weighted_mean", row.weighted_mean},
                    {"direct_mean", row.direct_mean},
                    {"z", row.z}});
  }
  out.detail = {{"rows", rows}, {"max_abs_z", r.max_abs_z}};
  return out;
}

}  // namespace

AcceptanceSuite::AcceptanceSuite(std::uint64_t seed, int parallelism)
    : ctx_(std::make_unique<CheckContext>(CheckContext{seed, parallelism, {}, {}, 0.0, 0.0, {}})) {}

AcceptanceSuite::~AcceptanceSuite() = default;

std::string AcceptanceSuite::title(int id) {
  static const char* titles[kCount] = {"norm martingale",
                                       "trace martingale",
                                       "pathwise linear/nonlinear equivalence",
                                       "unraveling equivalence",
                                       "Lindblad consistency",
                                       "moment boundary",
                                       "coefficient statistics",
                                       "Gaussian oracle cross-validation",
                                       "Galerkin convergence",
                                       "growth bounds",
                                       "Hamiltonian perturbation",
                                       "Girsanov density identity"};
  if (id < 1 || id > kCount) throw InvalidArgument("acceptance id out of range");
  return titles[id - 1];
}

CheckResult AcceptanceSuite::run(int id) {
  using Fn = CheckResult (*)(CheckContext&);
  static const Fn fns[kCount] = {norm_martingale, trace_martingale, pathwise_equivalence, unraveling,
                                 lindblad_consistency, moment_boundary, coefficient_statistics, oracle,
                                 galerkin, growth, sensitivity, girsanov};
  const std::string t = title(id);
  CheckResult r = fns[id - 1](*ctx_);
  r.id = id;
  r.title = t;
  return r;
}

std::vector<CheckResult> AcceptanceSuite::run_all(const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  for (int id = 1; id <= kCount; ++id) {
    out.push_back(run(id));
    if (on_result) on_result(out.back());
  }
  return out;
}

}  // namespace qfilter
