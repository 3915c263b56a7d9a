#include "qfilter/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <sstream>

#include "qfilter/errors.hpp"
#include "qfilter/io.hpp"
#include "qfilter/stats.hpp"

namespace qfilter {

namespace fs = std::filesystem;

// ---- model construction -------------------------------------------------

ModelSpec oscillator_model(int m, double position_coef, double momentum_coef, int control_power) {
  ModelSpec model;
  model.hamiltonian = build_hamiltonian([](double x) { return x * x; }, m);
  model.couplings.push_back(build_coupling(position_coef, momentum_coef, m));
  model.control = build_oscillator_ladder(m, control_power);
  return model;
}

namespace {

template <class T>
T field(const json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

template <class T>
T required(const json& j, const std::string& path, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(path + "." + key, "missing");
  return field<T>(j, path, key, T{});
}

Potential named_potential(const json& spec, const std::string& path) {
  if (spec.is_string()) {
    const auto name = spec.get<std::string>();
    if (name == "zero") return [](double) { return 0.0; };
    if (name == "harmonic") return [](double x) { return x * x; };
    if (name == "quartic") return [](double x) { return x * x * x * x; };
    if (name == "cos") return [](double x) { return std::cos(x); };
    throw ConfigError(path, "unknown potential '" + name + "'");
  }
  if (spec.is_object() && spec.contains("polynomial")) {
    const auto coefs = field<std::vector<double>>(spec, path, "polynomial", {});
    return [coefs](double x) {
      double acc = 0.0;
      for (auto it = coefs.rbegin(); it != coefs.rend(); ++it) acc = acc * x + *it;
      return acc;
    };
  }
  throw ConfigError(path, "expected a potential name or {\"polynomial\": [...]}");
}

TruncatedOperator operator_field(const json& j, const std::string& path, int dim) {
  TruncatedOperator op = io::operator_from_json(j);
  if (op.dim() != dim) throw ConfigError(path, "matrix dimension differs from model.dim");
  return op;
}

TruncatedOperator hamiltonian_from_json(const json& h, int dim) {
  const std::string path = "model.hamiltonian";
  if (h.contains("matrix")) return operator_field(h.at("matrix"), path + ".matrix", dim);
  const double kinetic = field<double>(h, path, "kinetic", 1.0);
  const Potential v = named_potential(h.value("potential", json("harmonic")), path + ".potential");
  const double scale = field<double>(h, path, "scale", 1.0);
  TruncatedOperator out(kinetic * build_momentum_squared(dim).entries() +
                        scale * build_potential(v, dim).entries());
  if (h.contains("perturbation")) {
    // Adds eps * V / ||V|| so that the Hamiltonian gap is exactly eps.
    const json& p = h.at("perturbation");
    const Potential w = named_potential(p.value("potential", json("cos")), path + ".perturbation.potential");
    const double eps = field<double>(p, path + ".perturbation", "norm", 0.1);
    const Eigen::MatrixXcd wm = build_potential(w, dim).entries();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(wm, Eigen::EigenvaluesOnly);
    const double norm = es.eigenvalues().cwiseAbs().maxCoeff();
    if (!(norm > 0.0)) throw ConfigError(path + ".perturbation", "perturbation potential vanishes");
    out = TruncatedOperator(out.entries() + (eps / norm) * wm);
  }
  return out;
}

TruncatedOperator coupling_from_json(const json& c, const std::string& path, int dim) {
  if (c.contains("matrix")) return operator_field(c.at("matrix"), path + ".matrix", dim);
  if (c.contains("lowering")) return cplx(field<double>(c, path, "lowering", 1.0)) * build_lowering(dim);
  if (c.contains("position") || c.contains("momentum")) {
    return build_coupling(field<double>(c, path, "position", 0.0), field<double>(c, path, "momentum", 0.0), dim);
  }
  throw ConfigError(path, "expected one of position/momentum, lowering, matrix");
}

}  // namespace

ModelSpec model_from_json(const json& block) {
  if (!block.is_object()) throw ConfigError("model", "expected an object");
  const int dim = required<int>(block, "model", "dim");
  if (dim < 2) throw ConfigError("model.dim", "must be >= 2");
  ModelSpec model;
  try {
    model.hamiltonian = hamiltonian_from_json(block.value("hamiltonian", json::object()), dim);
    const json couplings = block.value("couplings", json::array({json{{"position", 1.0}}}));
    if (!couplings.is_array() || couplings.empty()) throw ConfigError("model.couplings", "need at least one channel");
    for (std::size_t j = 0; j < couplings.size(); ++j) {
      model.couplings.push_back(coupling_from_json(couplings[j], "model.couplings[" + std::to_string(j) + "]", dim));
    }
    const int power = field<int>(block, "model", "control_power", 1);
    if (power < 1) throw ConfigError("model.control_power", "must be >= 1");
    model.control = build_oscillator_ladder(dim, power);
    model.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("model", e.what());
  }
  return model;
}

Eigen::VectorXcd basis_vector(int dim, int k) {
  if (k < 0 || k >= dim) throw InvalidDimension("basis index out of range");
  Eigen::VectorXcd e = Eigen::VectorXcd::Zero(dim);
  e(k) = 1.0;
  return e;
}

Eigen::MatrixXcd diagonal_density(int dim, const std::vector<double>& weights) {
  if (static_cast<int>(weights.size()) > dim) throw InvalidDimension("more weights than dimensions");
  Eigen::MatrixXcd rho = Eigen::MatrixXcd::Zero(dim, dim);
  for (std::size_t k = 0; k < weights.size(); ++k) rho(k, k) = weights[k];
  return rho;
}

Eigen::VectorXcd initial_vector_from_json(const json& block, int dim) {
  if (block.is_null()) return basis_vector(dim, 0);
  if (block.contains("basis")) {
    const int k = field<int>(block, "initial", "basis", 0);
    if (k < 0 || k >= dim) throw ConfigError("initial.basis", "index out of range");
    return basis_vector(dim, k);
  }
  if (block.contains("vector")) {
    const json& v = block.at("vector");
    const auto re = field<std::vector<double>>(v, "initial.vector", "re", {});
    const auto im = field<std::vector<double>>(v, "initial.vector", "im", std::vector<double>(re.size(), 0.0));
    if (static_cast<int>(re.size()) > dim || im.size() != re.size()) {
      throw ConfigError("initial.vector", "length mismatch");
    }
    Eigen::VectorXcd x = Eigen::VectorXcd::Zero(dim);
    for (std::size_t k = 0; k < re.size(); ++k) x(k) = cplx(re[k], im[k]);
    if (!(x.norm() > 0.0)) throw ConfigError("initial.vector", "zero vector");
    return x / x.norm();
  }
  throw ConfigError("initial", "expected basis or vector");
}

Eigen::MatrixXcd initial_density_from_json(const json& block, int dim) {
  if (block.is_object() && block.contains("weights")) {
    const auto w = field<std::vector<double>>(block, "initial", "weights", {});
    double total = 0.0;
    for (double p : w) {
      if (p < 0.0) throw ConfigError("initial.weights", "negative weight");
      total += p;
    }
    if (!(total > 0.0) || static_cast<int>(w.size()) > dim) throw ConfigError("initial.weights", "invalid weights");
    auto normalized = w;
    for (double& p : normalized) p /= total;
    return diagonal_density(dim, normalized);
  }
  const Eigen::VectorXcd x = initial_vector_from_json(block, dim);
  return x * x.adjoint();
}

// ---- studies ------------------------------------------------------------

namespace {

std::vector<BrownianPath> refined_family(const BrownianPath& base, std::size_t levels) {
  std::vector<BrownianPath> out{base};
  for (std::size_t i = 1; i < levels; ++i) out.push_back(refine(out.back(), 2));
  return out;
}

void check_halving(const std::vector<double>& dts) {
  if (dts.size() < 2) throw InvalidArgument("need at least two step sizes");
  for (std::size_t i = 1; i < dts.size(); ++i) {
    if (std::abs(dts[i] * 2.0 - dts[i - 1]) > 1e-12 * dts[i - 1]) {
      throw InvalidArgument("step sizes must halve successively");
    }
  }
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (!(v[i] < v[i - 1])) return false;
  }
  return true;
}

}  // namespace

EquivalenceStudy equivalence_study(const ModelSpec& model, const Eigen::VectorXcd& phi0, double horizon,
                                   const std::vector<double>& dts, int paths, std::uint64_t seed, int parallelism) {
  check_halving(dts);
  const CompiledModel compiled(model);
  const std::size_t levels = dts.size();
  std::vector<std::vector<double>> err(levels, std::vector<double>(paths));
  parallel_for(paths, parallelism, [&](int p) {
    const auto family = refined_family(sample_path(model.channels(), horizon, dts[0], seed, p), levels);
    for (std::size_t i = 0; i < levels; ++i) {
      const PureTrajectory nl = simulate_nonlinear(compiled, phi0, family[i]);
      const LiftResult lifted = lift_to_linear(model, nl);
      const PureTrajectory lin = simulate_linear(compiled, phi0, lifted.output);
      const NormalizedResult back = normalize_trajectory(model, lin);
      double worst = 0.0;
      for (std::size_t k = 0; k < nl.states.size(); ++k) {
        worst = std::max(worst, (back.normalized.states[k] - nl.states[k]).norm());
      }
      err[i][p] = worst;
    }
  });
  EquivalenceStudy s;
  s.dts = dts;
  for (const auto& e : err) s.errors.push_back(stats::mean_estimate(e).mean);
  s.order = stats::observed_order(s.dts, s.errors);
  s.decreasing = strictly_decreasing(s.errors);
  return s;
}

UnravelingStudy unraveling_study(const ModelSpec& model, const Eigen::MatrixXcd& rho0, double horizon,
                                 const std::vector<double>& dts, int paths, std::uint64_t seed, int parallelism) {
  check_halving(dts);
  const CompiledModel compiled(model);
  const WeightedEnsemble ensemble = spectral_decompose(rho0);
  const Eigen::MatrixXcd start = ensemble.reconstruct();
  const std::size_t levels = dts.size();
  std::vector<std::vector<double>> dist(levels, std::vector<double>(paths));
  std::vector<double> min_eig(paths, 0.0);
  parallel_for(paths, parallelism, [&](int p) {
    const auto family = refined_family(sample_path(model.channels(), horizon, dts[0], seed, p), levels);
    double lowest = 1.0;
    for (std::size_t i = 0; i < levels; ++i) {
      const DensityTrajectory direct = simulate_nonlinear_master(compiled, start, family[i]);
      const bool last = i + 1 == levels;
      const UnravelingResult unr = simulate_vectorized_unraveling(model, ensemble, family[i], MasterOptions{1, last});
      double worst = 0.0;
      for (std::size_t k = 0; k < direct.states.size(); ++k) {
        worst = std::max(worst, (unr.density.states[k] - direct.states[k]).norm());
      }
      dist[i][p] = worst;
      if (last) {
        for (double e : unr.density.min_eigenvalues) lowest = std::min(lowest, e);
      }
    }
    min_eig[p] = lowest;
  });
  UnravelingStudy s;
  s.dts = dts;
  for (const auto& d : dist) s.distances.push_back(stats::mean_estimate(d).mean);
  s.order = stats::observed_order(s.dts, s.distances);
  s.decreasing = strictly_decreasing(s.distances);
  s.min_eigenvalue = *std::min_element(min_eig.begin(), min_eig.end());
  return s;
}

OracleComparison oracle_comparison(const OracleOptions& o) {
  ModelSpec model;
  model.hamiltonian = TruncatedOperator(cplx(0.5 * o.h) * build_momentum_squared(o.dim).entries());
  model.couplings.push_back(cplx(o.alpha) * build_position(o.dim));
  model.control = build_oscillator_ladder(o.dim);

  const BrownianPath path = sample_path(1, o.horizon, o.dt, o.seed, o.trajectory_index);
  const int steps = path.steps();
  const PureTrajectory galerkin = simulate_linear(model, basis_vector(o.dim, 0), path, FilterOptions{steps});
  const KernelTrajectory kernel = propagate_coefficients(o.alpha, o.h, path, 1);

  OracleComparison r;
  r.final_state = kernel.states.back();
  r.fitted_g = r.final_state.fitted_g();
  const cplx sigma2 = r.final_state.sigma() * r.final_state.sigma();
  // Early states are dominated by rounding in omega^2 - beta^2 (both ~ 1/t^2),
  // so the first integral is monitored from t = 100 dt on.
  for (const auto& st : kernel.states) {
    if (st.t < 100.0 * o.dt * (1.0 - 1e-9)) continue;
    r.first_integral_drift =
        std::max(r.first_integral_drift, std::abs(st.omega * st.omega - st.beta * st.beta - sigma2) / std::abs(sigma2));
  }

  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(o.grid_points, -o.grid_half_width, o.grid_half_width);
  const Eigen::VectorXcd f = galerkin_to_grid(basis_vector(1, 0), grid);
  const Eigen::VectorXcd g = apply_kernel(r.final_state, grid, f);
  const Eigen::VectorXcd psi = galerkin_to_grid(galerkin.states.back(), grid);
  r.galerkin_norm = std::sqrt(grid_norm_sq(grid, psi));
  r.kernel_norm = std::sqrt(grid_norm_sq(grid, g));
  r.relative_l2_error = std::sqrt(grid_norm_sq(grid, g - psi)) / r.galerkin_norm;
  return r;
}

SmallTimeCheck small_time_check(double alpha, double h, double t, double dt) {
  const int steps = grid_steps(t, dt);
  // omega and beta do not depend on the noise; a zero record suffices.
  const BrownianPath quiet = make_path(Eigen::MatrixXd::Zero(1, steps), dt);
  const GaussianKernelState st = propagate_coefficients(alpha, h, quiet, steps).states.back();
  SmallTimeCheck c;
  c.t = st.t;
  c.omega = st.omega;
  c.beta = st.beta;
  c.omega_law = small_time_omega(alpha, h, st.t);
  c.beta_law = small_time_beta(alpha, h, st.t);
  c.omega_relative_error = std::abs(c.omega - c.omega_law) / std::abs(c.omega_law);
  c.beta_relative_error = std::abs(c.beta - c.beta_law) / std::abs(c.beta_law);
  c.omega_real_relative_error = std::abs(c.omega.real() - c.omega_law.real()) / std::abs(c.omega_law.real());
  c.beta_real_relative_error = std::abs(c.beta.real() - c.beta_law.real()) / std::abs(c.beta_law.real());
  return c;
}

namespace {

struct Functional {
  std::string name;
  int index = -1;  // -1: constant one
};

Functional parse_functional(const std::string& spec, int dim) {
  if (spec == "one") return {spec, -1};
  const std::string prefix = "population:";
  if (spec.rfind(prefix, 0) == 0) {
    const int k = std::stoi(spec.substr(prefix.size()));
    if (k < 0 || k >= dim) throw InvalidArgument("functional index out of range: " + spec);
    return {spec, k};
  }
  throw InvalidArgument("unknown functional " + spec);
}

double evaluate(const Functional& f, const Eigen::VectorXcd& phi) {
  return f.index < 0 ? 1.0 : std::norm(phi(f.index));
}

constexpr std::uint64_t kGirsanovTag = 0x67697273ULL;

}  // namespace

GirsanovReport girsanov_density_check(const ModelSpec& model, const Eigen::VectorXcd& chi0, double horizon, double dt,
                                      int trajectories, std::uint64_t seed, const std::vector<std::string>& functionals,
                                      int parallelism) {
  if (std::abs(chi0.norm() - 1.0) > 1e-12) throw InvalidArgument("girsanov check needs a unit initial vector");
  std::vector<Functional> fs;
  for (const auto& s : functionals) fs.push_back(parse_functional(s, model.dim()));
  const int steps = grid_steps(horizon, dt);

  EnsembleSpec spec;
  spec.horizon = horizon;
  spec.dt = dt;
  spec.trajectories = trajectories;
  spec.seed = seed;
  spec.parallelism = parallelism;
  spec.record_stride = steps;
  const auto output_ensemble = simulate_linear_ensemble(model, chi0, spec);
  // The innovation ensemble runs on unrelated streams.
  spec.seed = stream_seed(seed, 0, kGirsanovTag);
  const auto innovation_ensemble = simulate_nonlinear_ensemble(model, chi0, spec);

  GirsanovReport r;
  for (const auto& f : fs) {
    std::vector<double> weighted;
    std::vector<double> direct;
    for (const auto& traj : output_ensemble) {
      const Eigen::VectorXcd& chi = traj.states.back();
      const double w = chi.squaredNorm();
      weighted.push_back(evaluate(f, chi / std::sqrt(w)) * w);
    }
    for (const auto& traj : innovation_ensemble) direct.push_back(evaluate(f, traj.states.back()));
    const auto a = stats::mean_estimate(weighted);
    const auto b = stats::mean_estimate(direct);
    GirsanovRow row;
    row.functional = f.name;
    row.weighted_mean = a.mean;
    row.weighted_se = a.stderr;
    row.direct_mean = b.mean;
    row.direct_se = b.stderr;
    const double se = std::hypot(a.stderr, b.stderr);
    row.z = se > 0.0 ? (a.mean - b.mean) / se : (a.mean == b.mean ? 0.0 : INFINITY);
    r.max_abs_z = std::max(r.max_abs_z, std::abs(row.z));
    r.rows.push_back(row);
  }
  return r;
}

// ---- configuration ----------------------------------------------------------

namespace {

const std::vector<std::string>& known_tasks() {
  static const std::vector<std::string> tasks = {
      "pure-linear", "pure-nonlinear", "equivalence", "master-linear", "master-nonlinear", "unravel",
      "lindblad",    "oracle-compare", "moments",     "dissipativity", "convergence",      "girsanov",
      "sensitivity"};
  return tasks;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  ExperimentConfig c;
  c.model = j.value("model", json::object());
  c.initial = j.value("initial", json(nullptr));
  const json run = j.value("run", json::object());
  c.horizon = field<double>(run, "run", "T", c.horizon);
  c.dt = field<double>(run, "run", "dt", c.dt);
  c.trajectories = field<int>(run, "run", "trajectories", c.trajectories);
  c.master_seed = field<std::uint64_t>(run, "run", "master_seed", c.master_seed);
  c.parallelism = field<int>(run, "run", "parallelism", c.parallelism);
  c.task = required<std::string>(j, "config", "task");
  c.params = j.value("params", json::object());
  const json out = j.value("output", json::object());
  c.output_dir = field<std::string>(out, "output", "directory", c.output_dir);
  c.stride = field<int>(out, "output", "stride", c.stride);
  return c;
}

json ExperimentConfig::to_json() const {
  return json{{"model", model},
              {"initial", initial},
              {"run",
               {{"T", horizon},
                {"dt", dt},
                {"trajectories", trajectories},
                {"master_seed", master_seed},
                {"parallelism", parallelism}}},
              {"task", task},
              {"params", params},
              {"output", {{"directory", output_dir}, {"stride", stride}}}};
}

void ExperimentConfig::validate() const {
  if (std::find(known_tasks().begin(), known_tasks().end(), task) == known_tasks().end()) {
    throw ConfigError("task", "unknown task '" + task + "'");
  }
  if (!(dt > 0.0)) throw ConfigError("run.dt", "must be positive");
  try {
    grid_steps(horizon, dt);
  } catch (const GridError& e) {
    throw ConfigError("run.T", e.what());
  }
  if (trajectories < 1) throw ConfigError("run.trajectories", "must be >= 1");
  if (parallelism < 1) throw ConfigError("run.parallelism", "must be >= 1");
  if (stride < 1) throw ConfigError("output.stride", "must be >= 1");
  if (!params.is_object()) throw ConfigError("params", "expected an object");
  const bool needs_model = task != "moments" && task != "oracle-compare";
  if (needs_model) model_from_json(model);
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("parse error: ") + e.what());
  } catch (const Error& e) {
    throw ConfigError("config", e.what());
  }
  return ExperimentConfig::from_json(j);
}

bool RunManifest::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckRecord& c) { return c.passed; });
}

json RunManifest::to_json() const {
  json outs = json::array();
  for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"bytes", o.bytes}});
  json cks = json::array();
  for (const auto& c : checks) cks.push_back({{"id", c.id}, {"passed", c.passed}, {"detail", c.detail}});
  return json{{"config_hash", config_hash},
              {"code_version", code_version},
              {"task", task},
              {"master_seed", master_seed},
              {"outputs", outs},
              {"checks", cks},
              {"wall_time", wall_time},
              {"all_passed", all_passed()}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.config_hash = j.at("config_hash").get<std::string>();
    m.code_version = j.value("code_version", std::string());
    m.task = j.value("task", std::string());
    m.master_seed = j.value("master_seed", std::uint64_t{0});
    m.wall_time = j.value("wall_time", 0.0);
    for (const auto& o : j.at("outputs")) m.outputs.push_back({o.at("path"), o.at("bytes")});
    for (const auto& c : j.at("checks")) m.checks.push_back({c.at("id"), c.at("passed"), c.value("detail", json())});
  } catch (const json::exception& e) {
    throw ConfigError("manifest", e.what());
  }
  return m;
}

std::string config_hash(const ExperimentConfig& config) {
  // FNV-1a over the canonical dump (object keys are sorted by the library).
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---- task dispatch ------------------------------------------------------------

namespace {

class TaskRun {
 public:
  explicit TaskRun(const ExperimentConfig& config) : cfg_(config) {
    fs::create_directories(cfg_.output_dir);
    manifest_.task = cfg_.task;
    manifest_.master_seed = cfg_.master_seed;
    manifest_.config_hash = config_hash(cfg_);
  }

  void emit(const std::string& name, const std::string& content) {
    const std::string path = (fs::path(cfg_.output_dir) / name).string();
    manifest_.outputs.push_back({name, io::write_file(path, content)});
  }
  void emit_json(const std::string& name, const json& j) { emit(name, j.dump(2) + "\n"); }
  void check(const std::string& id, bool passed, json detail) {
    manifest_.checks.push_back({id, passed, std::move(detail)});
  }

  template <class T>
  T param(const char* key, T fallback) const {
    return field<T>(cfg_.params, "params", key, fallback);
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  RunManifest& manifest() { return manifest_; }

  EnsembleSpec ensemble() const {
    EnsembleSpec s;
    s.horizon = cfg_.horizon;
    s.dt = cfg_.dt;
    s.trajectories = cfg_.trajectories;
    s.seed = cfg_.master_seed;
    s.parallelism = cfg_.parallelism;
    s.record_stride = cfg_.stride;
    return s;
  }

 private:
  ExperimentConfig cfg_;
  RunManifest manifest_;
};

double dissipativity_alpha(const ModelSpec& model, std::uint64_t seed) {
  DissipativityOptions o;
  o.seed = seed;
  return check_dissipativity(model, o).alpha_hat;
}

void task_pure_linear(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::VectorXcd chi0 = initial_vector_from_json(r.cfg().initial, model.dim());
  const auto ens = simulate_linear_ensemble(model, chi0, r.ensemble());
  r.emit("trajectory_0.csv", io::pure_csv(ens.front()));
  MartingaleOptions mo;
  mo.alpha = dissipativity_alpha(model, r.cfg().master_seed);
  mo.beta = 0.0;
  mo.se_multiplier = r.param("se_multiplier", 3.0);
  mo.allowance = r.param("allowance", 0.02);
  mo.growth_se_multiplier = r.param("growth_se_multiplier", 3.0);
  const auto rep = martingale_report(ens, model.control, mo);
  r.emit_json("martingale.json", io::to_json(rep));
  r.check("norm-martingale", !rep.any_norm_violation, {{"alpha", mo.alpha}});
  r.check("growth-bound", !rep.any_growth_violation, {{"alpha", mo.alpha}});
}

void task_pure_nonlinear(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::VectorXcd phi0 = initial_vector_from_json(r.cfg().initial, model.dim());
  const auto ens = simulate_nonlinear_ensemble(model, phi0, r.ensemble());
  r.emit("trajectory_0.csv", io::pure_csv(ens.front()));
  const double alpha = dissipativity_alpha(model, r.cfg().master_seed);
  const double c0 = c_moment(phi0, model.control);
  double worst_norm = 0.0;
  double worst_defect = 0.0;
  json times = json::array(), mean = json::array(), se = json::array(), bound = json::array();
  bool growth_ok = true;
  for (std::size_t k = 0; k < ens.front().times.size(); ++k) {
    stats::RunningStats s;
    for (const auto& t : ens) {
      s.add(c_moment(t.states[k], model.control));
      worst_norm = std::max(worst_norm, std::abs(t.states[k].norm() - 1.0));
    }
    const double t = ens.front().times[k];
    const double b = growth_bound(alpha, 0.0, t, c0, 1.0);
    growth_ok = growth_ok && s.mean() <= b + 3.0 * s.stderr_of_mean();
    times.push_back(t);
    mean.push_back(s.mean());
    se.push_back(s.stderr_of_mean());
    bound.push_back(b);
  }
  for (const auto& t : ens) worst_defect = std::max(worst_defect, t.max_norm_defect);
  r.emit_json("nonlinear.json", {{"times", times},
                                 {"c_moment_mean", mean},
                                 {"c_moment_se", se},
                                 {"bound", bound},
                                 {"alpha", alpha},
                                 {"max_norm_defect", worst_defect},
                                 {"max_unit_norm_error", worst_norm}});
  r.check("unit-norm", worst_norm <= 1e-12, {{"max_unit_norm_error", worst_norm}});
  r.check("growth-bound", growth_ok, {{"alpha", alpha}});
}

void task_equivalence(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::VectorXcd phi0 = initial_vector_from_json(r.cfg().initial, model.dim());
  const auto dts = r.param("dts", std::vector<double>{4e-3, 2e-3, 1e-3});
  const double min_order = r.param("min_order", 0.4);
  const auto s = equivalence_study(model, phi0, r.cfg().horizon, dts, r.cfg().trajectories, r.cfg().master_seed,
                                   r.cfg().parallelism);
  const json j{{"dts", s.dts}, {"errors", s.errors}, {"order", s.order}, {"decreasing", s.decreasing}};
  r.emit_json("equivalence.json", j);
  r.check("equivalence", s.decreasing && s.order >= min_order, j);
}

void task_master_linear(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::MatrixXcd gamma0 = initial_density_from_json(r.cfg().initial, model.dim());
  const CompiledModel compiled(model);
  const auto spec = r.ensemble();
  std::vector<TraceSummary> summaries(spec.trajectories);
  std::string first;
  parallel_for(spec.trajectories, spec.parallelism, [&](int i) {
    const BrownianPath y = sample_path(model.channels(), spec.horizon, spec.dt, spec.seed, i);
    const auto traj = simulate_linear_master(compiled, gamma0, y, MasterOptions{spec.record_stride, i == 0});
    summaries[i] = summarize_trace(traj, model.control);
    if (i == 0) first = io::density_jsonl(traj);
  });
  r.emit("trajectory_0.jsonl", first);
  MartingaleOptions mo;
  mo.alpha = dissipativity_alpha(model, r.cfg().master_seed);
  mo.se_multiplier = r.param("se_multiplier", 3.0);
  mo.allowance = r.param("allowance", 0.02);
  mo.growth_se_multiplier = r.param("growth_se_multiplier", 3.0);
  const auto rep = trace_martingale_report(std::span<const TraceSummary>(summaries), mo);
  r.emit_json("trace_martingale.json", io::to_json(rep));
  r.check("trace-martingale", !rep.any_trace_violation, {{"max_trace_residual", rep.max_trace_residual}});
  r.check("growth-bound", !rep.any_growth_violation, {{"alpha", mo.alpha}});
}

void task_master_nonlinear(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::MatrixXcd rho0 = initial_density_from_json(r.cfg().initial, model.dim());
  const CompiledModel compiled(model);
  const auto spec = r.ensemble();
  double worst_trace = 0.0;
  double lowest_eig = 1.0;
  for (int i = 0; i < spec.trajectories; ++i) {
    const BrownianPath b = sample_path(model.channels(), spec.horizon, spec.dt, spec.seed, i);
    const auto traj = simulate_nonlinear_master(compiled, rho0, b, MasterOptions{spec.record_stride, true});
    for (double t : traj.traces) worst_trace = std::max(worst_trace, std::abs(t - 1.0));
    for (double e : traj.min_eigenvalues) lowest_eig = std::min(lowest_eig, e);
    if (i == 0) r.emit("trajectory_0.jsonl", io::density_jsonl(traj));
  }
  const json j{{"max_trace_error", worst_trace}, {"min_eigenvalue", lowest_eig}};
  r.emit_json("nonlinear_master.json", j);
  r.check("unit-trace", worst_trace <= 1e-12, j);
}

void task_unravel(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::MatrixXcd rho0 = initial_density_from_json(r.cfg().initial, model.dim());
  const auto dts = r.param("dts", std::vector<double>{8e-4, 4e-4, 2e-4, 1e-4});
  const double tol = r.param("tolerance", 5e-2);
  const auto s = unraveling_study(model, rho0, r.cfg().horizon, dts, r.cfg().trajectories, r.cfg().master_seed,
                                  r.cfg().parallelism);
  const json j{{"dts", s.dts},
               {"distances", s.distances},
               {"order", s.order},
               {"decreasing", s.decreasing},
               {"min_eigenvalue", s.min_eigenvalue}};
  r.emit_json("unraveling.json", j);
  r.check("unraveling", s.decreasing && s.order >= 0.4 && s.distances.back() <= tol, j);
}

void task_lindblad(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::MatrixXcd gamma0 = initial_density_from_json(r.cfg().initial, model.dim());
  const auto traj = solve_lindblad(model, gamma0, r.cfg().horizon, r.cfg().dt, r.cfg().stride);
  r.emit("lindblad.jsonl", io::density_jsonl(traj));
  double drift = 0.0;
  for (double t : traj.traces) drift = std::max(drift, std::abs(t - traj.traces.front()));
  r.check("trace-conserved", drift <= 1e-10, {{"max_trace_drift", drift}});
}

void task_oracle(TaskRun& r) {
  OracleOptions o;
  o.alpha = r.param("alpha", 1.0);
  o.h = r.param("h", 1.0);
  o.horizon = r.cfg().horizon;
  o.dt = r.cfg().dt;
  o.dim = r.param("dim", 64);
  o.grid_half_width = r.param("grid_half_width", 10.0);
  o.grid_points = r.param("grid_points", 4001);
  o.seed = r.cfg().master_seed;
  const auto c = oracle_comparison(o);
  const double small_t = r.param("small_t", 1e-3);
  const auto st = small_time_check(o.alpha, o.h, small_t, small_t / 1000.0);
  const json j{{"relative_l2_error", c.relative_l2_error},
               {"galerkin_norm", c.galerkin_norm},
               {"kernel_norm", c.kernel_norm},
               {"fitted_g", {c.fitted_g.real(), c.fitted_g.imag()}},
               {"first_integral_drift", c.first_integral_drift},
               {"kernel_state", io::to_json(c.final_state)},
               {"small_time",
                {{"t", st.t},
                 {"omega_relative_error", st.omega_relative_error},
                 {"beta_relative_error", st.beta_relative_error},
                 {"omega_real_relative_error", st.omega_real_relative_error},
                 {"beta_real_relative_error", st.beta_real_relative_error}}}};
  r.emit_json("oracle.json", j);
  r.check("oracle-l2", c.relative_l2_error <= r.param("tolerance", 1e-2), j);
  r.check("small-time", std::max({st.omega_relative_error, st.beta_relative_error, st.omega_real_relative_error,
                                  st.beta_real_relative_error}) <= 1e-3,
          j["small_time"]);
}

void task_moments(TaskRun& r) {
  const double alpha = r.param("alpha", 1.0);
  const double t = r.param("t", 0.01);
  const int steps = r.param("steps", 1000);
  const auto ps = r.param("p", std::vector<double>{0.5, 1.0, 2.0});
  const auto samples = sample_coefficients(alpha, t, r.cfg().trajectories, steps, r.cfg().master_seed,
                                           r.cfg().parallelism);
  std::vector<MomentEstimate> rows;
  json all = json::array();
  bool ok = true;
  for (double p : ps) {
    rows.push_back(estimate_moment(p, samples));
    const auto& m = rows.back();
    all.push_back(io::to_json(m));
    if (p < 2.0) {
      const double tol = p < 1.0 ? 0.05 : 0.10;
      ok = ok && !m.diverging && std::abs(m.estimate / moment_limit(p) - 1.0) <= tol;
    } else {
      ok = ok && m.diverging;
    }
  }
  r.emit("moments.csv", io::moments_csv(rows));
  r.emit_json("moments.json", all);
  r.emit_json("coefficients.json", io::to_json(coefficient_stats(samples)));
  r.check("moment-boundary", ok, all);
}

void task_dissipativity(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  DissipativityOptions o;
  o.seed = r.cfg().master_seed;
  o.samples = r.param("samples", 512);
  o.power_iterations = r.param("power_iterations", 50);
  const auto rep = check_dissipativity(model, o);
  r.emit_json("dissipativity.json", io::to_json(rep));
  r.emit_json("hamiltonian.json", io::to_json(model.hamiltonian));
  r.check("mr0", rep.mr0_satisfied, {{"K_hat", rep.K_hat}});
  r.check("mr1a", rep.mr1a_satisfied, {{"alpha_hat", rep.alpha_hat}});
  r.check("commutator-consistent", rep.commutator_consistent,
          {{"alpha_hat", rep.alpha_hat}, {"commutator_alpha", rep.commutator_alpha}});
}

void task_convergence(TaskRun& r) {
  const json base = r.cfg().model;
  const auto dims = r.param("dims", std::vector<int>{8, 16, 32, 64});
  auto family = [&base](int m) {
    json b = base;
    b["dim"] = m;
    return model_from_json(b);
  };
  const Eigen::VectorXcd chi0 = initial_vector_from_json(r.cfg().initial, dims.front());
  const auto table = galerkin_convergence(family, dims, chi0, r.cfg().horizon, r.cfg().dt, r.cfg().trajectories,
                                          r.cfg().master_seed, r.cfg().parallelism);
  const json j = io::to_json(table);
  r.emit_json("convergence.json", j);
  r.check("galerkin-convergence", table.strictly_decreasing && table.slope <= r.param("max_slope", -0.4), j);
}

void task_girsanov(TaskRun& r) {
  const ModelSpec model = model_from_json(r.cfg().model);
  const Eigen::VectorXcd chi0 = initial_vector_from_json(r.cfg().initial, model.dim());
  const auto fns = r.param("functionals", std::vector<std::string>{"one", "population:0", "population:1"});
  const auto rep = girsanov_density_check(model, chi0, r.cfg().horizon, r.cfg().dt, r.cfg().trajectories,
                                          r.cfg().master_seed, fns, r.cfg().parallelism);
  json rows = json::array();
  for (const auto& row : rep.rows) {
    rows.push_back({{"functional", row.functional},
                    {"weighted_mean", row.weighted_mean},
                    {"weighted_se", row.weighted_se},
                    {"direct_mean", row.direct_mean},
                    {"direct_se", row.direct_se},
                    {"z", row.z}});
  }
  r.emit_json("girsanov.json", rows);
  r.check("girsanov", rep.max_abs_z <= r.param("max_z", 4.0), {{"max_abs_z", rep.max_abs_z}});
}

void task_sensitivity(TaskRun& r) {
  const ModelSpec model1 = model_from_json(r.cfg().model);
  json perturbed = r.cfg().model;
  perturbed["hamiltonian"]["perturbation"] = r.param("perturbation", json{{"potential", "cos"}, {"norm", 0.1}});
  const ModelSpec model2 = model_from_json(perturbed);
  const Eigen::MatrixXcd gamma0 = initial_density_from_json(r.cfg().initial, model1.dim());
  SensitivityOptions o;
  o.horizon = r.cfg().horizon;
  o.dt = r.cfg().dt;
  o.trajectories = r.cfg().trajectories;
  o.seed = r.cfg().master_seed;
  o.parallelism = r.cfg().parallelism;
  o.record_stride = r.cfg().stride;
  const auto rep = hamiltonian_sensitivity(model1, model2, gamma0, o);
  r.emit_json("sensitivity.json", io::to_json(rep));
  r.check("hamiltonian-perturbation", !rep.any_violation, {{"hamiltonian_gap", rep.hamiltonian_gap}});
}

}  // namespace

RunManifest run(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  TaskRun r(config);
  const std::string& t = config.task;
  if (t == "pure-linear") task_pure_linear(r);
  else if (t == "pure-nonlinear") task_pure_nonlinear(r);
  else if (t == "equivalence") task_equivalence(r);
  else if (t == "master-linear") task_master_linear(r);
  else if (t == "master-nonlinear") task_master_nonlinear(r);
  else if (t == "unravel") task_unravel(r);
  else if (t == "lindblad") task_lindblad(r);
  else if (t == "oracle-compare") task_oracle(r);
  else if (t == "moments") task_moments(r);
  else if (t == "dissipativity") task_dissipativity(r);
  else if (t == "convergence") task_convergence(r);
  else if (t == "girsanov") task_girsanov(r);
  else if (t == "sensitivity") task_sensitivity(r);
  r.emit_json("config.json", config.to_json());
  RunManifest& m = r.manifest();
  m.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  io::write_file((fs::path(config.output_dir) / "manifest.json").string(), m.to_json().dump(2) + "\n");
  return m;
}

ConsolidatedReport report(const std::vector<std::string>& manifest_paths) {
  if (manifest_paths.empty()) throw InvalidArgument("report: no manifests given");
  ConsolidatedReport out;
  json rows = json::array();
  std::ostringstream text;
  text << "manifest | task | check | result\n";
  out.all_passed = true;
  for (const auto& path : manifest_paths) {
    json j;
    try {
      j = json::parse(io::read_file(path));
    } catch (const json::exception& e) {
      throw ConfigError("manifest", path + ": " + e.what());
    }
    const RunManifest m = RunManifest::from_json(j);
    auto add = [&](const std::string& id, bool passed, const json& detail) {
      rows.push_back({{"manifest", path}, {"task", m.task}, {"check", id}, {"passed", passed}, {"detail", detail}});
      text << path << " | " << m.task << " | " << id << " | " << (passed ? "PASS" : "FAIL") << "\n";
      out.all_passed = out.all_passed && passed;
    };
    // Every listed output must exist with its recorded size.
    bool intact = true;
    json problems = json::array();
    const fs::path dir = fs::path(path).parent_path();
    for (const auto& o : m.outputs) {
      const fs::path p = dir / o.path;
      std::error_code ec;
      const auto size = fs::file_size(p, ec);
      if (ec || size != o.bytes) {
        intact = false;
        problems.push_back(o.path);
      }
    }
    add("manifest-integrity", intact, {{"mismatched", problems}});
    for (const auto& c : m.checks) add(c.id, c.passed, c.detail);
  }
  out.table = json{{"rows", rows}, {"all_passed", out.all_passed}};
  out.text = text.str();
  return out;
}

}  // namespace qfilter
