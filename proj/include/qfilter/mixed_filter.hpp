#pragma once

// Stochastic master equations (linear and normalized) for density matrices,
// the deterministic Lindblad flow, and the weighted pure-state unraveling.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qfilter/compiled_model.hpp"
#include "qfilter/operator_lab.hpp"
#include "qfilter/pure_filter.hpp"
#include "qfilter/sde_engine.hpp"

namespace qfilter {

struct DensityTrajectory {
  std::vector<double> times;
  std::vector<Eigen::MatrixXcd> states;
  std::vector<double> traces;
  // Filled per recorded time when MasterOptions::track_min_eigenvalue is set.
  std::vector<double> min_eigenvalues;
  StateRole role = StateRole::Linear;
  Picture picture = Picture::Output;
  BrownianPath driving;
  int record_stride = 1;
  // Largest ||gamma - gamma^*||_max / 2 removed by the per-step hermitization.
  double max_hermitization = 0.0;
  // Linear role: max_k | tr gamma_{k+1} - tr gamma_k - sum_j tr(L gamma_k + gamma_k L*) dY_j |.
  double max_trace_residual = 0.0;
  // Normalized role: smallest tr before renormalization.
  double min_raw_trace = 0.0;
};

struct MasterOptions {
  int record_stride = 1;
  bool track_min_eigenvalue = false;
};

// Hermitian part (a + a^*)/2.
Eigen::MatrixXcd hermitize(const Eigen::MatrixXcd& a);
double min_eigenvalue(const Eigen::MatrixXcd& hermitian);

// d gamma = (-i[H, gamma] + sum L gamma L* - 1/2 {L*L, gamma}) dt + sum_j (L_j gamma + gamma L_j*) dY_j
DensityTrajectory simulate_linear_master(const CompiledModel& model, const Eigen::MatrixXcd& gamma0,
                                         const BrownianPath& output, const MasterOptions& options = {});
DensityTrajectory simulate_linear_master(const ModelSpec& model, const Eigen::MatrixXcd& gamma0,
                                         const BrownianPath& output, const MasterOptions& options = {});

// Same drift, diffusion L rho + rho L* - rho tr(L rho + rho L*), driven by the
// innovation; hermitized and renormalized to unit trace after each step.
DensityTrajectory simulate_nonlinear_master(const CompiledModel& model, const Eigen::MatrixXcd& rho0,
                                            const BrownianPath& innovation, const MasterOptions& options = {});
DensityTrajectory simulate_nonlinear_master(const ModelSpec& model, const Eigen::MatrixXcd& rho0,
                                            const BrownianPath& innovation, const MasterOptions& options = {});

struct NormalizedMasterResult {
  DensityTrajectory normalized;  // traces keep tr gamma(t)
  BrownianPath innovation;       // dB = dY - tr(L rho + rho L*) dt
};
NormalizedMasterResult normalize_master(const ModelSpec& model, const DensityTrajectory& linear);

struct LiftMasterResult {
  DensityTrajectory linear;
  BrownianPath output;  // dY = dB + tr(L rho + rho L*) dt
  int floor_hits = 0;   // inverse trace clipped at kInverseNormFloor
};
// d(1 / tr gamma) = -(1 / tr gamma) tr(L rho + rho L*) dB from 1.
LiftMasterResult lift_master(const ModelSpec& model, const DensityTrajectory& normalized);

// Classical RK4 on the Lindblad equation, hermitized each step.
DensityTrajectory solve_lindblad(const ModelSpec& model, const Eigen::MatrixXcd& gamma0, double horizon, double dt,
                                 int record_stride = 1);

struct WeightedEnsemble {
  std::vector<double> weights;          // descending, sum 1
  std::vector<Eigen::VectorXcd> members;
  bool clipped = false;                 // small negative eigenvalues were set to 0
  double input_trace = 0.0;

  Eigen::MatrixXcd reconstruct() const;  // sum p_k e_k e_k^*
};

inline constexpr double kWeightCutoff = 1e-14;
inline constexpr double kNegativeTolerance = 1e-10;

WeightedEnsemble spectral_decompose(const Eigen::MatrixXcd& rho);

struct UnravelingResult {
  std::vector<double> times;
  std::vector<std::vector<Eigen::VectorXcd>> members;  // per recorded time
  std::vector<double> weights;
  Eigen::MatrixXd feedback;   // channels x steps, pi_j at the left point of each step
  DensityTrajectory density;  // normalized reconstruction rho = gamma / tr gamma
};

// de_k = (-iH - 1/2 L*L) e_k dt + sum_j L_j e_k (dB_j + pi_j dt),
// pi_j = sum_k p_k (e_k, (L_j + L_j*) e_k) / sum_k p_k ||e_k||^2.
UnravelingResult simulate_vectorized_unraveling(const ModelSpec& model, const WeightedEnsemble& ensemble0,
                                                const BrownianPath& innovation, const MasterOptions& options = {});

// tr(C |gamma| C) evaluated in the C-eigenbasis.
double c_trace_norm(const Eigen::MatrixXcd& gamma, const TruncationLadder& control);
// tr |a| for Hermitian a.
double trace_norm(const Eigen::MatrixXcd& hermitian);

struct TraceSummary {
  std::vector<double> times;
  std::vector<double> traces;
  std::vector<double> c_norms;  // c_trace_norm(gamma(t))
  double max_trace_residual = 0.0;
};
TraceSummary summarize_trace(const DensityTrajectory& linear, const TruncationLadder& control);

struct TraceMartingaleReport {
  std::vector<double> times;
  std::vector<double> mean_trace;
  std::vector<double> se_trace;
  std::vector<double> mean_c_norm;
  std::vector<double> se_c_norm;
  std::vector<double> growth_bound;
  std::vector<bool> trace_violated;
  std::vector<bool> growth_violated;
  double initial_trace = 0.0;
  double max_trace_residual = 0.0;
  bool any_trace_violation = false;
  bool any_growth_violation = false;
};

// Options reuse the pure-state fields: alpha, beta, se_multiplier, allowance,
// growth_se_multiplier.
TraceMartingaleReport trace_martingale_report(std::span<const TraceSummary> ensemble,
                                              const MartingaleOptions& options);
TraceMartingaleReport trace_martingale_report(std::span<const DensityTrajectory> ensemble,
                                              const TruncationLadder& control, const MartingaleOptions& options);

struct SensitivityOptions {
  double horizon = 0.5;
  double dt = 1e-3;
  int trajectories = 200;
  std::uint64_t seed = 0;
  int parallelism = 1;
  int record_stride = 10;
  double se_multiplier = 4.0;
  double allowance = 0.0;
};

struct SensitivityReport {
  std::vector<double> times;
  std::vector<double> mean_distance;  // E tr |gamma1(t) - gamma2(t)|
  std::vector<double> se_distance;
  std::vector<double> bound;          // 2 t ||H2 - H1|| tr gamma0
  std::vector<bool> violated;
  double hamiltonian_gap = 0.0;       // spectral norm ||H2 - H1||
  bool any_violation = false;
};

SensitivityReport hamiltonian_sensitivity(const ModelSpec& model1, const ModelSpec& model2,
                                          const Eigen::MatrixXcd& gamma0, const SensitivityOptions& options);

}  // namespace qfilter
