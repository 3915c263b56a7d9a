#include "qfilter/mixed_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "qfilter/errors.hpp"
#include "qfilter/stats.hpp"

namespace qfilter {

namespace {

using Mat = Eigen::MatrixXcd;

double real_trace(const Mat& a) { return a.trace().real(); }

void check_hermitian_input(const Mat& a, int dim, const char* who) {
  if (a.rows() != dim || a.cols() != dim) throw InvalidDimension(std::string(who) + ": dimension mismatch");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.adjoint()).cwiseAbs().maxCoeff() > kHermitianTolerance * scale) {
    throw InvalidArgument(std::string(who) + ": initial matrix is not Hermitian");
  }
}

// G gamma + gamma G^* + sum_j L_j gamma L_j^*, which equals
// -i[H, gamma] + sum_j (L_j gamma L_j^* - 1/2 {L_j^* L_j, gamma}).
Mat lindblad_rhs(const CompiledModel& model, const Mat& g) {
  Mat gg = model.generator * g;
  Mat out = gg + gg.adjoint();
  for (int j = 0; j < model.channels; ++j) {
    const Mat lg = model.coupling[j] * g;
    out += lg * model.coupling_adj[j];
  }
  // The adjoint trick above assumed g Hermitian; it is, since every step ends
  // with a hermitization.
  return out;
}

Mat coupling_action(const CompiledModel& model, int j, const Mat& g) {
  const Mat lg = model.coupling[j] * g;
  return lg + lg.adjoint();
}

void fill_diagnostics(DensityTrajectory& traj, bool track_min_eig) {
  traj.traces.clear();
  for (const auto& s : traj.states) traj.traces.push_back(real_trace(s));
  if (track_min_eig) {
    traj.min_eigenvalues.clear();
    for (const auto& s : traj.states) traj.min_eigenvalues.push_back(min_eigenvalue(s));
  }
}

void require_full_grid(const DensityTrajectory& traj, const char* who) {
  if (traj.record_stride != 1 || static_cast<int>(traj.states.size()) != traj.driving.steps() + 1) {
    throw InvalidArgument(std::string(who) + " needs a trajectory recorded at every grid point");
  }
}

}  // namespace

Mat hermitize(const Mat& a) { return 0.5 * (a + a.adjoint()); }

double min_eigenvalue(const Mat& hermitian) {
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitian, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

DensityTrajectory simulate_linear_master(const CompiledModel& model, const Mat& gamma0, const BrownianPath& output,
                                         const MasterOptions& options) {
  check_hermitian_input(gamma0, model.dim, "simulate_linear_master");
  if (!(real_trace(gamma0) > 0.0)) throw NotAStateError("simulate_linear_master: trace must be positive");
  if (output.channels < model.channels) throw InvalidArgument("driving path has fewer channels than the model");

  StateMap<Mat> drift = [&model](const Mat& g) -> Mat { return lindblad_rhs(model, g); };
  std::vector<StateMap<Mat>> diffusion;
  for (int j = 0; j < model.channels; ++j) {
    diffusion.emplace_back([&model, j](const Mat& g) -> Mat { return coupling_action(model, j, g); });
  }

  DensityTrajectory traj;
  Mat last = hermitize(gamma0);
  auto post = [&](int k, Mat& g) {
    const Mat h = hermitize(g);
    traj.max_hermitization = std::max(traj.max_hermitization, (g - h).cwiseAbs().maxCoeff());
    g = h;
    double expected = real_trace(last);
    const Eigen::VectorXd f = model.trace_feedback(last);
    for (int j = 0; j < model.channels; ++j) expected += f(j) * output.increments(j, k);
    traj.max_trace_residual = std::max(traj.max_trace_residual, std::abs(real_trace(g) - expected));
    last = g;
  };
  auto em = euler_maruyama<Mat>(drift, diffusion, hermitize(gamma0), output, post, EmOptions{options.record_stride});

  traj.times = std::move(em.times);
  traj.states = std::move(em.states);
  traj.role = StateRole::Linear;
  traj.picture = Picture::Output;
  traj.driving = output;
  traj.record_stride = options.record_stride;
  fill_diagnostics(traj, options.track_min_eigenvalue);
  return traj;
}

DensityTrajectory simulate_linear_master(const ModelSpec& model, const Mat& gamma0, const BrownianPath& output,
                                         const MasterOptions& options) {
  return simulate_linear_master(CompiledModel(model), gamma0, output, options);
}

DensityTrajectory simulate_nonlinear_master(const CompiledModel& model, const Mat& rho0,
                                            const BrownianPath& innovation, const MasterOptions& options) {
  check_hermitian_input(rho0, model.dim, "simulate_nonlinear_master");
  if (std::abs(real_trace(rho0) - 1.0) > 1e-12) throw NotAStateError("simulate_nonlinear_master: trace must be 1");
  if (min_eigenvalue(rho0) < -kNegativeTolerance) throw NotAStateError("simulate_nonlinear_master: not PSD");
  if (innovation.channels < model.channels) throw InvalidArgument("driving path has fewer channels than the model");

  StateMap<Mat> drift = [&model](const Mat& r) -> Mat { return lindblad_rhs(model, r); };
  std::vector<StateMap<Mat>> diffusion;
  for (int j = 0; j < model.channels; ++j) {
    diffusion.emplace_back([&model, j](const Mat& r) -> Mat {
      const Mat a = coupling_action(model, j, r);
      return a - r * a.trace().real();
    });
  }

  DensityTrajectory traj;
  traj.min_raw_trace = 1.0;
  auto post = [&traj](int k, Mat& r) {
    const Mat h = hermitize(r);
    traj.max_hermitization = std::max(traj.max_hermitization, (r - h).cwiseAbs().maxCoeff());
    const double tr = real_trace(h);
    if (!(tr > 1e-12)) throw DegenerateStateError(k + 1, "trace collapse before renormalization");
    traj.min_raw_trace = std::min(traj.min_raw_trace, tr);
    r = h / tr;
  };
  auto em = euler_maruyama<Mat>(drift, diffusion, hermitize(rho0), innovation, post,
                                EmOptions{options.record_stride});

  traj.times = std::move(em.times);
  traj.states = std::move(em.states);
  traj.role = StateRole::Normalized;
  traj.picture = Picture::Innovation;
  traj.driving = innovation;
  traj.record_stride = options.record_stride;
  fill_diagnostics(traj, options.track_min_eigenvalue);
  return traj;
}

DensityTrajectory simulate_nonlinear_master(const ModelSpec& model, const Mat& rho0, const BrownianPath& innovation,
                                            const MasterOptions& options) {
  return simulate_nonlinear_master(CompiledModel(model), rho0, innovation, options);
}

NormalizedMasterResult normalize_master(const ModelSpec& model, const DensityTrajectory& linear) {
  if (linear.role != StateRole::Linear) throw InvalidArgument("normalize_master: input must be linear");
  require_full_grid(linear, "normalize_master");
  const CompiledModel compiled(model);
  const BrownianPath& y = linear.driving;

  NormalizedMasterResult out;
  out.normalized.times = linear.times;
  out.normalized.role = StateRole::Normalized;
  out.normalized.picture = Picture::Innovation;
  out.normalized.record_stride = 1;
  out.normalized.traces = linear.traces;
  for (std::size_t k = 0; k < linear.states.size(); ++k) {
    const double tr = real_trace(linear.states[k]);
    if (!(tr > 0.0)) throw NotAStateError("normalize_master: nonpositive trace at step " + std::to_string(k));
    out.normalized.states.push_back(linear.states[k] / tr);
  }
  Eigen::MatrixXd db(y.channels, y.steps());
  for (int k = 0; k < y.steps(); ++k) {
    const Eigen::VectorXd f = compiled.trace_feedback(out.normalized.states[k]);
    for (int j = 0; j < y.channels; ++j) {
      db(j, k) = y.increments(j, k) - (j < compiled.channels ? f(j) : 0.0) * y.dt;
    }
  }
  out.innovation = make_path(std::move(db), y.dt, y.master_seed, y.trajectory_index);
  out.innovation.refinement_level = y.refinement_level;
  out.normalized.driving = out.innovation;
  return out;
}

LiftMasterResult lift_master(const ModelSpec& model, const DensityTrajectory& normalized) {
  if (normalized.role != StateRole::Normalized) throw InvalidArgument("lift_master: input must be normalized");
  require_full_grid(normalized, "lift_master");
  const CompiledModel compiled(model);
  const BrownianPath& b = normalized.driving;

  LiftMasterResult out;
  Eigen::MatrixXd dy(b.channels, b.steps());
  std::vector<double> inverse_trace(b.steps() + 1, 1.0);
  for (int k = 0; k < b.steps(); ++k) {
    const Eigen::VectorXd f = compiled.trace_feedback(normalized.states[k]);
    double change = 0.0;
    for (int j = 0; j < b.channels; ++j) {
      const double fj = j < compiled.channels ? f(j) : 0.0;
      change += fj * b.increments(j, k);
      dy(j, k) = b.increments(j, k) + fj * b.dt;
    }
    double next = inverse_trace[k] * (1.0 - change);
    if (next <= kInverseNormFloor) {
      next = kInverseNormFloor;
      ++out.floor_hits;
    }
    inverse_trace[k + 1] = next;
  }
  out.linear.times = normalized.times;
  out.linear.role = StateRole::Linear;
  out.linear.picture = Picture::Output;
  out.linear.record_stride = 1;
  for (std::size_t k = 0; k < normalized.states.size(); ++k) {
    out.linear.states.push_back(normalized.states[k] / inverse_trace[k]);
    out.linear.traces.push_back(1.0 / inverse_trace[k]);
  }
  out.output = make_path(std::move(dy), b.dt, b.master_seed, b.trajectory_index);
  out.output.refinement_level = b.refinement_level;
  out.linear.driving = out.output;
  return out;
}

DensityTrajectory solve_lindblad(const ModelSpec& model, const Mat& gamma0, double horizon, double dt,
                                 int record_stride) {
  const CompiledModel compiled(model);
  check_hermitian_input(gamma0, compiled.dim, "solve_lindblad");
  const int steps = grid_steps(horizon, dt);
  const int stride = std::max(1, record_stride);

  DensityTrajectory traj;
  traj.role = StateRole::Linear;
  traj.record_stride = stride;
  Mat g = hermitize(gamma0);
  traj.times.push_back(0.0);
  traj.states.push_back(g);
  for (int k = 0; k < steps; ++k) {
    const Mat k1 = lindblad_rhs(compiled, g);
    const Mat k2 = lindblad_rhs(compiled, hermitize(g + 0.5 * dt * k1));
    const Mat k3 = lindblad_rhs(compiled, hermitize(g + 0.5 * dt * k2));
    const Mat k4 = lindblad_rhs(compiled, hermitize(g + dt * k3));
    g = hermitize(g + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    if (!g.allFinite()) throw BlowUpError(k + 1, "non-finite Lindblad state");
    if ((k + 1) % stride == 0 || k + 1 == steps) {
      traj.times.push_back((k + 1) * dt);
      traj.states.push_back(g);
    }
  }
  fill_diagnostics(traj, false);
  return traj;
}

Mat WeightedEnsemble::reconstruct() const {
  if (members.empty()) return Mat();
  const auto m = members.front().size();
  Mat out = Mat::Zero(m, m);
  for (std::size_t k = 0; k < members.size(); ++k) out += weights[k] * members[k] * members[k].adjoint();
  return out;
}

WeightedEnsemble spectral_decompose(const Mat& rho) {
  if (rho.rows() != rho.cols() || rho.rows() == 0) throw InvalidDimension("spectral_decompose: not square");
  check_hermitian_input(rho, static_cast<int>(rho.rows()), "spectral_decompose");
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(rho));
  const Eigen::VectorXd& ev = es.eigenvalues();
  if (ev(0) < -kNegativeTolerance) {
    throw NotAStateError("eigenvalue " + std::to_string(ev(0)) + " below -1e-10");
  }
  WeightedEnsemble out;
  out.input_trace = real_trace(rho);
  double total = 0.0;
  for (Eigen::Index k = ev.size() - 1; k >= 0; --k) {
    double p = ev(k);
    if (p < 0.0) {
      out.clipped = true;
      p = 0.0;
    }
    if (p < kWeightCutoff) continue;
    out.weights.push_back(p);
    out.members.push_back(es.eigenvectors().col(k));
    total += p;
  }
  if (!(total > 0.0)) throw NotAStateError("spectral_decompose: zero matrix");
  for (double& p : out.weights) p /= total;
  return out;
}

UnravelingResult simulate_vectorized_unraveling(const ModelSpec& model, const WeightedEnsemble& ensemble0,
                                                const BrownianPath& innovation, const MasterOptions& options) {
  const CompiledModel compiled(model);
  const int members = static_cast<int>(ensemble0.members.size());
  if (members == 0) throw InvalidArgument("unraveling: empty ensemble");
  const double total = std::accumulate(ensemble0.weights.begin(), ensemble0.weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw InvalidArgument("unraveling: weights must sum to 1");
  if (innovation.channels < compiled.channels) throw InvalidArgument("driving path has fewer channels than the model");

  Mat e0(compiled.dim, members);
  for (int k = 0; k < members; ++k) {
    if (ensemble0.members[k].size() != compiled.dim) throw InvalidDimension("unraveling: member dimension");
    e0.col(k) = ensemble0.members[k];
  }
  const Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(ensemble0.weights.data(), members);

  UnravelingResult out;
  out.weights = ensemble0.weights;
  out.feedback = Eigen::MatrixXd::Zero(compiled.channels, innovation.steps());
  int step = 0;

  // One synchronization point per step: pi is computed from all members at
  // the left point and shared by every member's drift.
  StateMap<Mat> drift = [&](const Mat& e) -> Mat {
    const double denom = p.dot(e.colwise().squaredNorm().transpose());
    if (!(denom > 1e-12)) throw DegenerateStateError(step, "degenerate ensemble weight");
    Mat d = compiled.generator * e;
    for (int j = 0; j < compiled.channels; ++j) {
      const Mat le = compiled.coupling[j] * e;
      double num = 0.0;
      for (int k = 0; k < members; ++k) num += p(k) * 2.0 * std::real(e.col(k).dot(le.col(k)));
      const double pi = num / denom;
      out.feedback(j, step) = pi;
      d += pi * le;
    }
    return d;
  };
  std::vector<StateMap<Mat>> diffusion;
  for (int j = 0; j < compiled.channels; ++j) {
    diffusion.emplace_back([&compiled, j](const Mat& e) -> Mat { return compiled.coupling[j] * e; });
  }
  auto advance = [&step](int k, Mat&) { step = k + 1; };
  auto em = euler_maruyama<Mat>(drift, diffusion, e0, innovation, advance, EmOptions{options.record_stride});

  out.times = em.times;
  out.density.times = em.times;
  out.density.role = StateRole::Normalized;
  out.density.picture = Picture::Innovation;
  out.density.driving = innovation;
  out.density.record_stride = options.record_stride;
  for (const Mat& e : em.states) {
    std::vector<Eigen::VectorXcd> cols;
    for (int k = 0; k < members; ++k) cols.push_back(e.col(k));
    out.members.push_back(std::move(cols));
    const Mat gamma = e * p.cast<cplx>().asDiagonal() * e.adjoint();
    out.density.states.push_back(hermitize(gamma) / real_trace(gamma));
  }
  fill_diagnostics(out.density, options.track_min_eigenvalue);
  return out;
}

double trace_norm(const Mat& hermitian) {
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(hermitian), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().sum();
}

double c_trace_norm(const Mat& gamma, const TruncationLadder& control) {
  if (gamma.rows() != control.dim()) throw InvalidDimension("c_trace_norm: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(gamma));
  const Mat abs_gamma =
      es.eigenvectors() * es.eigenvalues().cwiseAbs().cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
  const Eigen::VectorXd lam2 = control.eigenvalues().cwiseAbs2();
  return lam2.dot(abs_gamma.diagonal().real());
}

TraceSummary summarize_trace(const DensityTrajectory& linear, const TruncationLadder& control) {
  TraceSummary s;
  s.times = linear.times;
  s.traces = linear.traces;
  for (const auto& g : linear.states) s.c_norms.push_back(c_trace_norm(g, control));
  s.max_trace_residual = linear.max_trace_residual;
  return s;
}

TraceMartingaleReport trace_martingale_report(std::span<const TraceSummary> ensemble,
                                              const MartingaleOptions& options) {
  if (ensemble.size() < 2) throw InvalidArgument("trace_martingale_report needs at least two trajectories");
  const auto& first = ensemble.front();
  TraceMartingaleReport r;
  r.times = first.times;
  r.initial_trace = first.traces.front();
  const double c0 = first.c_norms.front();
  for (const auto& s : ensemble) {
    if (s.times.size() != r.times.size()) throw InvalidArgument("ensemble grids differ");
    r.max_trace_residual = std::max(r.max_trace_residual, s.max_trace_residual);
  }
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    stats::RunningStats tr;
    stats::RunningStats cn;
    for (const auto& s : ensemble) {
      tr.add(s.traces[k]);
      cn.add(s.c_norms[k]);
    }
    const double bound = growth_bound(options.alpha, options.beta, r.times[k], c0, r.initial_trace);
    r.mean_trace.push_back(tr.mean());
    r.se_trace.push_back(tr.stderr_of_mean());
    r.mean_c_norm.push_back(cn.mean());
    r.se_c_norm.push_back(cn.stderr_of_mean());
    r.growth_bound.push_back(bound);
    const bool tv =
        std::abs(tr.mean() - r.initial_trace) > options.se_multiplier * tr.stderr_of_mean() + options.allowance;
    const bool gv = cn.mean() > bound + options.growth_se_multiplier * cn.stderr_of_mean();
    r.trace_violated.push_back(tv);
    r.growth_violated.push_back(gv);
    r.any_trace_violation = r.any_trace_violation || tv;
    r.any_growth_violation = r.any_growth_violation || gv;
  }
  return r;
}

TraceMartingaleReport trace_martingale_report(std::span<const DensityTrajectory> ensemble,
                                              const TruncationLadder& control, const MartingaleOptions& options) {
  std::vector<TraceSummary> summaries;
  for (const auto& traj : ensemble) {
    if (traj.role != StateRole::Linear) throw InvalidArgument("trace_martingale_report expects linear trajectories");
    summaries.push_back(summarize_trace(traj, control));
  }
  return trace_martingale_report(std::span<const TraceSummary>(summaries), options);
}

SensitivityReport hamiltonian_sensitivity(const ModelSpec& model1, const ModelSpec& model2, const Mat& gamma0,
                                          const SensitivityOptions& options) {
  if (model1.dim() != model2.dim() || model1.channels() != model2.channels()) {
    throw IncompatibleModels("models differ in dimension or channel count");
  }
  for (int j = 0; j < model1.channels(); ++j) {
    const Mat& a = model1.couplings[j].entries();
    const Mat& b = model2.couplings[j].entries();
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if ((a - b).cwiseAbs().maxCoeff() > 1e-12 * scale) throw IncompatibleModels("models differ in coupling operators");
  }
  const CompiledModel c1(model1);
  const CompiledModel c2(model2);
  const Mat diff = model2.hamiltonian.entries() - model1.hamiltonian.entries();

  SensitivityReport r;
  {
    Eigen::SelfAdjointEigenSolver<Mat> es(hermitize(diff), Eigen::EigenvaluesOnly);
    r.hamiltonian_gap = es.eigenvalues().cwiseAbs().maxCoeff();
  }
  const double tr0 = real_trace(gamma0);
  const MasterOptions mo{options.record_stride, false};

  std::vector<std::vector<double>> distance(options.trajectories);
  std::vector<double> times;
  parallel_for(options.trajectories, options.parallelism, [&](int i) {
    const BrownianPath y = sample_path(model1.channels(), options.horizon, options.dt, options.seed,
                                       static_cast<std::uint64_t>(i));
    const auto g1 = simulate_linear_master(c1, gamma0, y, mo);
    const auto g2 = simulate_linear_master(c2, gamma0, y, mo);
    for (std::size_t k = 0; k < g1.states.size(); ++k) distance[i].push_back(trace_norm(g1.states[k] - g2.states[k]));
    if (i == 0) times = g1.times;
  });

  r.times = times;
  for (std::size_t k = 0; k < times.size(); ++k) {
    stats::RunningStats s;
    for (const auto& d : distance) s.add(d[k]);
    const double bound = 2.0 * times[k] * r.hamiltonian_gap * tr0;
    r.mean_distance.push_back(s.mean());
    r.se_distance.push_back(s.stderr_of_mean());
    r.bound.push_back(bound);
    const bool v = s.mean() > bound + options.se_multiplier * s.stderr_of_mean() + options.allowance;
    r.violated.push_back(v);
    r.any_violation = r.any_violation || v;
  }
  return r;
}

}  // namespace qfilter
