#pragma once

// Experiment configuration (JSON), multi-step studies shared by the CLI and
// the acceptance checks, task dispatch with manifests, and report aggregation.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "qfilter/gaussian_oracle.hpp"
#include "qfilter/mixed_filter.hpp"
#include "qfilter/operator_lab.hpp"
#include "qfilter/pure_filter.hpp"

namespace qfilter {

using nlohmann::json;

inline constexpr const char* kCodeVersion = "0.1.0";

// ---- model construction -------------------------------------------------

// Oscillator-family model: H = kinetic p^2 + V(x), couplings a x + b p, C of
// the given power. Used throughout tests and checks.
ModelSpec oscillator_model(int m, double position_coef = 1.0, double momentum_coef = 0.0, int control_power = 1);

// Builds a model from a config "model" block; throws ConfigError with the
// offending field path.
ModelSpec model_from_json(const json& block);

// "initial" block: {"basis": k} or {"vector": {"re": [...], "im": [...]}}.
Eigen::VectorXcd initial_vector_from_json(const json& block, int dim);
// Density: {"weights": [...]} (diagonal), or any vector form (projector).
Eigen::MatrixXcd initial_density_from_json(const json& block, int dim);

Eigen::VectorXcd basis_vector(int dim, int k);
Eigen::MatrixXcd diagonal_density(int dim, const std::vector<double>& weights);

// ---- studies ------------------------------------------------------------

struct EquivalenceStudy {
  std::vector<double> dts;
  std::vector<double> errors;  // mean over paths of max_t ||phi_roundtrip(t) - phi(t)||
  double order = 0.0;
  bool decreasing = false;
};

// Nonlinear solve on B, lift to (chi, Y), linear solve on Y, normalize, and
// compare with the nonlinear solution. Paths are generated at dts[0] and
// refined by bridge halving to the finer steps; dts must halve successively.
EquivalenceStudy equivalence_study(const ModelSpec& model, const Eigen::VectorXcd& phi0, double horizon,
                                   const std::vector<double>& dts, int paths, std::uint64_t seed,
                                   int parallelism = 1);

struct UnravelingStudy {
  std::vector<double> dts;
  std::vector<double> distances;  // mean over paths of max_t ||rho_unravel - rho_direct||_HS
  double order = 0.0;
  bool decreasing = false;
  double min_eigenvalue = 0.0;  // smallest eigenvalue seen in the reconstructions
};

UnravelingStudy unraveling_study(const ModelSpec& model, const Eigen::MatrixXcd& rho0, double horizon,
                                 const std::vector<double>& dts, int paths, std::uint64_t seed,
                                 int parallelism = 1);

struct OracleComparison {
  double relative_l2_error = 0.0;
  double galerkin_norm = 0.0;
  double kernel_norm = 0.0;
  cplx fitted_g;
  double first_integral_drift = 0.0;  // max |omega^2 - beta^2 - sigma^2| / |sigma^2|
  GaussianKernelState final_state;
};

struct OracleOptions {
  double alpha = 1.0;
  double h = 1.0;
  double horizon = 0.1;
  double dt = 1e-5;
  int dim = 64;
  double grid_half_width = 10.0;
  int grid_points = 4001;
  std::uint64_t seed = 0;
  std::uint64_t trajectory_index = 0;
};

// Galerkin solution from the ground state vs the kernel applied to the ground
// state, on one shared output path.
OracleComparison oracle_comparison(const OracleOptions& options);

struct SmallTimeCheck {
  double t = 0.0;
  cplx omega, omega_law;
  cplx beta, beta_law;
  double omega_relative_error = 0.0;
  double beta_relative_error = 0.0;
  double omega_real_relative_error = 0.0;  // Re omega against (2/3) alpha^2 t
  double beta_real_relative_error = 0.0;
};

SmallTimeCheck small_time_check(double alpha, double h, double t, double dt);

struct GirsanovRow {
  std::string functional;
  double weighted_mean = 0.0;  // E_P[f(chi/||chi||) ||chi||^2] over the output ensemble
  double weighted_se = 0.0;
  double direct_mean = 0.0;    // E_Q[f(phi)] over the innovation ensemble
  double direct_se = 0.0;
  double z = 0.0;
};

struct GirsanovReport {
  std::vector<GirsanovRow> rows;
  double max_abs_z = 0.0;
};

// Functionals: "one" or "population:k" (|<e_k, phi>|^2, 0-based k).
GirsanovReport girsanov_density_check(const ModelSpec& model, const Eigen::VectorXcd& chi0, double horizon, double dt,
                                      int trajectories, std::uint64_t seed, const std::vector<std::string>& functionals,
                                      int parallelism = 1);

// ---- configuration and runs ------------------------------------------------

struct ExperimentConfig {
  json model;
  json initial;
  double horizon = 1.0;
  double dt = 1e-3;
  int trajectories = 1;
  std::uint64_t master_seed = 0;
  int parallelism = 1;
  std::string task;
  json params = json::object();
  std::string output_dir = "out";
  int stride = 1;

  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  void validate() const;
};

ExperimentConfig load_config(const std::string& path);

struct OutputRecord {
  std::string path;
  std::size_t bytes = 0;
};

struct CheckRecord {
  std::string id;
  bool passed = false;
  json detail;
};

struct RunManifest {
  std::string config_hash;
  std::string code_version = kCodeVersion;
  std::string task;
  std::uint64_t master_seed = 0;
  std::vector<OutputRecord> outputs;
  std::vector<CheckRecord> checks;
  double wall_time = 0.0;

  bool all_passed() const;
  json to_json() const;
  static RunManifest from_json(const json& j);
};

std::string config_hash(const ExperimentConfig& config);

// Executes the task, writes data files and manifest.json into the output
// directory (created if missing), and returns the manifest.
RunManifest run(const ExperimentConfig& config);

struct ConsolidatedReport {
  json table;        // {"rows": [...], "all_passed": bool}
  std::string text;  // human-readable table
  bool all_passed = false;
};

// Throws InvalidArgument on empty input and Error("io") on a missing file.
// Each manifest is also verified against the byte lengths it records.
ConsolidatedReport report(const std::vector<std::string>& manifest_paths);

}  // namespace qfilter
