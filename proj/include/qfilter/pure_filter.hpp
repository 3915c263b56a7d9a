#pragma once

// Linear and nonlinear filtering SDEs for pure states on a Galerkin
// truncation, conversions between the output (Y) and innovation (B) pictures,
// and the convergence / martingale diagnostics built on them.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "qfilter/compiled_model.hpp"
#include "qfilter/operator_lab.hpp"
#include "qfilter/sde_engine.hpp"

namespace qfilter {

enum class StateRole { Linear, Normalized };
enum class Picture { Output, Innovation };

struct FilterOptions {
  int record_stride = 1;
};

struct PureTrajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXcd> states;
  std::vector<double> norm_sq;
  StateRole role = StateRole::Linear;
  Picture picture = Picture::Output;
  BrownianPath driving;
  int record_stride = 1;
  // Nonlinear role only: | ||phi|| - 1 | just before each renormalization.
  std::vector<double> norm_defect;
  double max_norm_defect = 0.0;
};

// d chi = (-iH - 1/2 sum L*L) chi dt + sum_j L_j chi dY_j, no renormalization.
PureTrajectory simulate_linear(const CompiledModel& model, const Eigen::VectorXcd& chi0, const BrownianPath& output,
                               const FilterOptions& options = {});
PureTrajectory simulate_linear(const ModelSpec& model, const Eigen::VectorXcd& chi0, const BrownianPath& output,
                               const FilterOptions& options = {});

// Norm-preserving nonlinear filter driven by the innovation B:
//   d phi = -[i(H - s L_A) + 1/2 (L - s)^*(L - s)] phi dt + (L - s) phi dB,
// s = <L_S>_phi, summed over channels, followed by renormalization each step.
PureTrajectory simulate_nonlinear(const CompiledModel& model, const Eigen::VectorXcd& phi0,
                                  const BrownianPath& innovation, const FilterOptions& options = {});
PureTrajectory simulate_nonlinear(const ModelSpec& model, const Eigen::VectorXcd& phi0,
                                  const BrownianPath& innovation, const FilterOptions& options = {});

struct NormalizedResult {
  PureTrajectory normalized;  // phi = chi / ||chi||, norm_sq keeps ||chi||^2
  BrownianPath innovation;    // dB_j = dY_j - 2 <L_S^j>_phi dt (left point)
};

// Requires a stride-1 linear trajectory with strictly positive norms.
NormalizedResult normalize_trajectory(const ModelSpec& model, const PureTrajectory& linear);

struct LiftResult {
  PureTrajectory linear;  // chi = phi ||chi||
  BrownianPath output;    // dY_j = dB_j + 2 <L_S^j>_phi dt
  // Steps where the Euler value of 1/||chi||^2 fell below 1e-12 and was clipped.
  int floor_hits = 0;
};

// Integrates d(1/||chi||^2) = -(2/||chi||^2) <L_S>_phi dB from 1 on the same
// grid. Requires a stride-1 normalized trajectory.
LiftResult lift_to_linear(const ModelSpec& model, const PureTrajectory& nonlinear);

inline constexpr double kInverseNormFloor = 1e-12;

struct ConvergenceTable {
  std::vector<int> dims;         // m_1 < ... < m_{K-1} (reference m_K excluded)
  int reference_dim = 0;
  std::vector<double> lambdas;   // lambda_{m_k}
  std::vector<double> errors;    // E ||chi_{m_K}(T) - chi_{m_k}(T)||^2
  std::vector<double> stderrs;
  double slope = 0.0;            // d log(error) / d log(lambda)
  bool strictly_decreasing = false;
};

// All truncations share the same output paths; chi0 is given at the smallest
// dimension and zero-padded.
ConvergenceTable galerkin_convergence(const std::function<ModelSpec(int)>& family, const std::vector<int>& dims,
                                      const Eigen::VectorXcd& chi0, double horizon, double dt, int paths,
                                      std::uint64_t seed, int parallelism = 1);

// e^{alpha t} [c0 + alpha t (n0 + beta)]
double growth_bound(double alpha, double beta, double t, double c0, double n0);

struct MartingaleOptions {
  double alpha = 0.0;
  double beta = 0.0;
  double se_multiplier = 4.0;         // band for the norm martingale
  double allowance = 0.0;             // discretization allowance c * dt
  double growth_se_multiplier = 3.0;  // allowance for the C-moment bound
};

struct MartingaleReport {
  std::vector<double> times;
  std::vector<double> mean_norm_sq;
  std::vector<double> se_norm_sq;
  std::vector<double> mean_c_sq;  // E ||C chi(t)||^2
  std::vector<double> se_c_sq;
  std::vector<double> growth_bound;
  std::vector<bool> norm_violated;
  std::vector<bool> growth_violated;
  double initial_norm_sq = 0.0;
  bool any_norm_violation = false;
  bool any_growth_violation = false;
};

MartingaleReport martingale_report(std::span<const PureTrajectory> ensemble, const TruncationLadder& control,
                                   const MartingaleOptions& options);

// ||C x||^2 in the C-eigenbasis.
double c_moment(const Eigen::VectorXcd& x, const TruncationLadder& control);

struct EnsembleSpec {
  double horizon = 0.0;
  double dt = 0.0;
  int trajectories = 1;
  std::uint64_t seed = 0;
  int parallelism = 1;
  int record_stride = 1;
  std::uint64_t first_index = 0;
};

std::vector<PureTrajectory> simulate_linear_ensemble(const ModelSpec& model, const Eigen::VectorXcd& chi0,
                                                     const EnsembleSpec& spec);
std::vector<PureTrajectory> simulate_nonlinear_ensemble(const ModelSpec& model, const Eigen::VectorXcd& phi0,
                                                        const EnsembleSpec& spec);

}  // namespace qfilter
