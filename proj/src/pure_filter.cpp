#include "qfilter/pure_filter.hpp"

#include <algorithm>
#include <cmath>

#include "qfilter/errors.hpp"
#include "qfilter/stats.hpp"

namespace qfilter {

namespace {

using Vec = Eigen::VectorXcd;

void check_state(const CompiledModel& model, const Vec& x, const BrownianPath& path) {
  if (x.size() != model.dim) throw InvalidDimension("initial state dimension differs from model");
  if (path.channels < model.channels) throw InvalidArgument("driving path has fewer channels than the model");
}

void fill_norms(PureTrajectory& traj) {
  traj.norm_sq.resize(traj.states.size());
  for (std::size_t k = 0; k < traj.states.size(); ++k) traj.norm_sq[k] = traj.states[k].squaredNorm();
}

void require_full_grid(const PureTrajectory& traj, const char* who) {
  if (traj.record_stride != 1 || static_cast<int>(traj.states.size()) != traj.driving.steps() + 1) {
    throw InvalidArgument(std::string(who) + " needs a trajectory recorded at every grid point");
  }
}

}  // namespace

PureTrajectory simulate_linear(const CompiledModel& model, const Vec& chi0, const BrownianPath& output,
                               const FilterOptions& options) {
  check_state(model, chi0, output);
  if (!(chi0.norm() > 0.0)) throw InvalidArgument("simulate_linear: zero initial state");

  StateMap<Vec> drift = [&model](const Vec& x) -> Vec { return model.generator * x; };
  std::vector<StateMap<Vec>> diffusion;
  for (int j = 0; j < model.channels; ++j) {
    diffusion.emplace_back([&model, j](const Vec& x) -> Vec { return model.coupling[j] * x; });
  }
  auto em = euler_maruyama<Vec>(drift, diffusion, chi0, output, {}, EmOptions{options.record_stride});

  PureTrajectory traj;
  traj.times = std::move(em.times);
  traj.states = std::move(em.states);
  traj.role = StateRole::Linear;
  traj.picture = Picture::Output;
  traj.driving = output;
  traj.record_stride = options.record_stride;
  fill_norms(traj);
  return traj;
}

PureTrajectory simulate_linear(const ModelSpec& model, const Vec& chi0, const BrownianPath& output,
                               const FilterOptions& options) {
  return simulate_linear(CompiledModel(model), chi0, output, options);
}

PureTrajectory simulate_nonlinear(const CompiledModel& model, const Vec& phi0, const BrownianPath& innovation,
                                  const FilterOptions& options) {
  check_state(model, phi0, innovation);
  if (std::abs(phi0.norm() - 1.0) > 1e-12) throw InvalidArgument("simulate_nonlinear: initial state must be unit");

  // Expanding the generator: -iH - 1/2 L*L + sum_j (s_j L_j - s_j^2 / 2).
  StateMap<Vec> drift = [&model](const Vec& x) -> Vec {
    const Eigen::VectorXd s = model.sym_expectations(x);
    Vec out = model.generator * x;
    for (int j = 0; j < model.channels; ++j) {
      out += s(j) * (model.coupling[j] * x) - 0.5 * s(j) * s(j) * x;
    }
    return out;
  };
  std::vector<StateMap<Vec>> diffusion;
  for (int j = 0; j < model.channels; ++j) {
    diffusion.emplace_back([&model, j](const Vec& x) -> Vec {
      const double s = model.sym_expectations(x)(j);
      return model.coupling[j] * x - s * x;
    });
  }

  std::vector<double> defects;
  defects.reserve(innovation.steps());
  auto renormalize = [&defects](int step, Vec& x) {
    const double n = x.norm();
    if (!(n > 0.0)) throw DegenerateStateError(step + 1, "zero-norm state before renormalization");
    defects.push_back(std::abs(n - 1.0));
    x /= n;
  };
  auto em = euler_maruyama<Vec>(drift, diffusion, phi0, innovation, renormalize, EmOptions{options.record_stride});

  PureTrajectory traj;
  traj.times = std::move(em.times);
  traj.states = std::move(em.states);
  traj.role = StateRole::Normalized;
  traj.picture = Picture::Innovation;
  traj.driving = innovation;
  traj.record_stride = options.record_stride;
  traj.norm_defect = std::move(defects);
  traj.max_norm_defect =
      traj.norm_defect.empty() ? 0.0 : *std::max_element(traj.norm_defect.begin(), traj.norm_defect.end());
  fill_norms(traj);
  return traj;
}

PureTrajectory simulate_nonlinear(const ModelSpec& model, const Vec& phi0, const BrownianPath& innovation,
                                  const FilterOptions& options) {
  return simulate_nonlinear(CompiledModel(model), phi0, innovation, options);
}

NormalizedResult normalize_trajectory(const ModelSpec& model, const PureTrajectory& linear) {
  if (linear.role != StateRole::Linear) throw InvalidArgument("normalize_trajectory: input must be linear");
  require_full_grid(linear, "normalize_trajectory");
  const CompiledModel compiled(model);
  const BrownianPath& y = linear.driving;

  NormalizedResult out;
  out.normalized.times = linear.times;
  out.normalized.norm_sq = linear.norm_sq;
  out.normalized.role = StateRole::Normalized;
  out.normalized.picture = Picture::Innovation;
  out.normalized.record_stride = 1;
  out.normalized.states.reserve(linear.states.size());
  for (std::size_t k = 0; k < linear.states.size(); ++k) {
    const double n = linear.states[k].norm();
    if (!(n > 0.0)) throw DegenerateStateError(static_cast<int>(k), "vanishing norm in linear trajectory");
    out.normalized.states.push_back(linear.states[k] / n);
  }

  Eigen::MatrixXd db(y.channels, y.steps());
  for (int k = 0; k < y.steps(); ++k) {
    const Eigen::VectorXd s = compiled.sym_expectations(out.normalized.states[k]);
    for (int j = 0; j < y.channels; ++j) {
      const double feedback = j < compiled.channels ? 2.0 * s(j) : 0.0;
      db(j, k) = y.increments(j, k) - feedback * y.dt;
    }
  }
  out.innovation = make_path(std::move(db), y.dt, y.master_seed, y.trajectory_index);
  out.innovation.refinement_level = y.refinement_level;
  out.normalized.driving = out.innovation;
  return out;
}

LiftResult lift_to_linear(const ModelSpec& model, const PureTrajectory& nonlinear) {
  if (nonlinear.role != StateRole::Normalized) throw InvalidArgument("lift_to_linear: input must be normalized");
  require_full_grid(nonlinear, "lift_to_linear");
  const CompiledModel compiled(model);
  const BrownianPath& b = nonlinear.driving;

  LiftResult out;
  Eigen::MatrixXd dy(b.channels, b.steps());
  std::vector<double> inverse_norm(b.steps() + 1, 1.0);
  for (int k = 0; k < b.steps(); ++k) {
    const Eigen::VectorXd s = compiled.sym_expectations(nonlinear.states[k]);
    double change = 0.0;
    for (int j = 0; j < b.channels; ++j) {
      const double sj = j < compiled.channels ? s(j) : 0.0;
      change += 2.0 * sj * b.increments(j, k);
      dy(j, k) = b.increments(j, k) + 2.0 * sj * b.dt;
    }
    double next = inverse_norm[k] * (1.0 - change);
    if (next <= kInverseNormFloor) {
      next = kInverseNormFloor;
      ++out.floor_hits;
    }
    inverse_norm[k + 1] = next;
  }

  out.linear.times = nonlinear.times;
  out.linear.role = StateRole::Linear;
  out.linear.picture = Picture::Output;
  out.linear.record_stride = 1;
  out.linear.states.reserve(nonlinear.states.size());
  out.linear.norm_sq.reserve(nonlinear.states.size());
  for (std::size_t k = 0; k < nonlinear.states.size(); ++k) {
    out.linear.states.push_back(nonlinear.states[k] / std::sqrt(inverse_norm[k]));
    out.linear.norm_sq.push_back(1.0 / inverse_norm[k]);
  }
  out.output = make_path(std::move(dy), b.dt, b.master_seed, b.trajectory_index);
  out.output.refinement_level = b.refinement_level;
  out.linear.driving = out.output;
  return out;
}

ConvergenceTable galerkin_convergence(const std::function<ModelSpec(int)>& family, const std::vector<int>& dims,
                                      const Vec& chi0, double horizon, double dt, int paths, std::uint64_t seed,
                                      int parallelism) {
  if (dims.size() < 2) throw InvalidArgument("galerkin_convergence needs at least two dimensions");
  if (!std::is_sorted(dims.begin(), dims.end()) ||
      std::adjacent_find(dims.begin(), dims.end()) != dims.end()) {
    throw InvalidArgument("galerkin_convergence: dimensions must be strictly increasing");
  }
  if (chi0.size() > dims.front()) throw InvalidDimension("initial state must fit the smallest truncation");
  if (paths < 2) throw InvalidArgument("galerkin_convergence needs at least two paths");

  std::vector<ModelSpec> models;
  std::vector<CompiledModel> compiled;
  for (int m : dims) {
    models.push_back(family(m));
    if (models.back().dim() != m) throw InvalidDimension("model family returned the wrong dimension");
    compiled.emplace_back(models.back());
  }
  const int reference = dims.back();
  const std::size_t levels = dims.size() - 1;
  const int channels = models.front().channels();

  std::vector<std::vector<double>> sq_errors(levels, std::vector<double>(paths));
  parallel_for(paths, parallelism, [&](int p) {
    const BrownianPath y = sample_path(channels, horizon, dt, seed, static_cast<std::uint64_t>(p));
    const FilterOptions opts{std::max(1, y.steps())};
    const Vec ref = simulate_linear(compiled.back(), embed(chi0, reference), y, opts).states.back();
    for (std::size_t i = 0; i < levels; ++i) {
      const Vec approx = simulate_linear(compiled[i], embed(chi0, dims[i]), y, opts).states.back();
      sq_errors[i][p] = (ref - embed(approx, reference)).squaredNorm();
    }
  });

  ConvergenceTable table;
  table.reference_dim = reference;
  std::vector<double> log_lambda;
  std::vector<double> log_error;
  for (std::size_t i = 0; i < levels; ++i) {
    const auto est = stats::mean_estimate(sq_errors[i]);
    table.dims.push_back(dims[i]);
    table.lambdas.push_back(models.back().control.lambda(dims[i]));
    table.errors.push_back(est.mean);
    table.stderrs.push_back(est.stderr);
    if (est.mean > 0.0) {
      log_lambda.push_back(std::log(table.lambdas.back()));
      log_error.push_back(std::log(est.mean));
    }
  }
  table.strictly_decreasing = true;
  for (std::size_t i = 1; i < levels; ++i) {
    if (!(table.errors[i] < table.errors[i - 1])) table.strictly_decreasing = false;
  }
  table.slope = log_lambda.size() >= 2 ? stats::fit_line(log_lambda, log_error).slope : 0.0;
  return table;
}

double growth_bound(double alpha, double beta, double t, double c0, double n0) {
  return std::exp(alpha * t) * (c0 + alpha * t * (n0 + beta));
}

double c_moment(const Vec& x, const TruncationLadder& control) {
  if (x.size() != control.dim()) throw InvalidDimension("c_moment: dimension mismatch");
  return (control.eigenvalues().cast<cplx>().asDiagonal() * x).squaredNorm();
}

MartingaleReport martingale_report(std::span<const PureTrajectory> ensemble, const TruncationLadder& control,
                                   const MartingaleOptions& options) {
  if (ensemble.size() < 2) throw InvalidArgument("martingale_report needs at least two trajectories");
  const auto& first = ensemble.front();
  for (const auto& traj : ensemble) {
    if (traj.role != StateRole::Linear) throw InvalidArgument("martingale_report expects linear trajectories");
    if (traj.times.size() != first.times.size()) throw InvalidArgument("ensemble grids differ");
  }
  MartingaleReport report;
  report.times = first.times;
  report.initial_norm_sq = first.norm_sq.front();
  const double c0 = c_moment(first.states.front(), control);
  for (std::size_t k = 0; k < first.times.size(); ++k) {
    stats::RunningStats norm;
    stats::RunningStats cm;
    for (const auto& traj : ensemble) {
      norm.add(traj.norm_sq[k]);
      cm.add(c_moment(traj.states[k], control));
    }
    const double bound =
        growth_bound(options.alpha, options.beta, report.times[k], c0, report.initial_norm_sq);
    report.mean_norm_sq.push_back(norm.mean());
    report.se_norm_sq.push_back(norm.stderr_of_mean());
    report.mean_c_sq.push_back(cm.mean());
    report.se_c_sq.push_back(cm.stderr_of_mean());
    report.growth_bound.push_back(bound);
    const bool nv = std::abs(norm.mean() - report.initial_norm_sq) >
                    options.se_multiplier * norm.stderr_of_mean() + options.allowance;
    const bool gv = cm.mean() > bound + options.growth_se_multiplier * cm.stderr_of_mean();
    report.norm_violated.push_back(nv);
    report.growth_violated.push_back(gv);
    report.any_norm_violation = report.any_norm_violation || nv;
    report.any_growth_violation = report.any_growth_violation || gv;
  }
  return report;
}

namespace {

template <class Simulate>
std::vector<PureTrajectory> run_ensemble(const ModelSpec& model, const EnsembleSpec& spec, Simulate&& simulate) {
  const CompiledModel compiled(model);
  std::vector<PureTrajectory> out(spec.trajectories);
  parallel_for(spec.trajectories, spec.parallelism, [&](int i) {
    const BrownianPath path = sample_path(model.channels(), spec.horizon, spec.dt, spec.seed,
                                          spec.first_index + static_cast<std::uint64_t>(i));
    out[i] = simulate(compiled, path);
  });
  return out;
}

}  // namespace

std::vector<PureTrajectory> simulate_linear_ensemble(const ModelSpec& model, const Vec& chi0,
                                                     const EnsembleSpec& spec) {
  return run_ensemble(model, spec, [&](const CompiledModel& cm, const BrownianPath& y) {
    return simulate_linear(cm, chi0, y, FilterOptions{spec.record_stride});
  });
}

std::vector<PureTrajectory> simulate_nonlinear_ensemble(const ModelSpec& model, const Vec& phi0,
                                                        const EnsembleSpec& spec) {
  return run_ensemble(model, spec, [&](const CompiledModel& cm, const BrownianPath& b) {
    return simulate_nonlinear(cm, phi0, b, FilterOptions{spec.record_stride});
  });
}

}  // namespace qfilter
