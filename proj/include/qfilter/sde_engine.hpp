#pragma once

// Reproducible multichannel Brownian paths and explicit Euler-Maruyama
// stepping for vector- and matrix-valued SDEs on a uniform grid.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qfilter/errors.hpp"

namespace qfilter {

// Hash of (master seed, trajectory index, stream tag) used to key each
// generator stream; distinct triples give unrelated 64-bit seeds.
std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t trajectory_index, std::uint64_t tag);

struct BrownianPath {
  int channels = 1;
  double horizon = 0.0;
  double dt = 0.0;
  Eigen::MatrixXd increments;  // channels x steps, N(0, dt) entries
  std::uint64_t master_seed = 0;
  std::uint64_t trajectory_index = 0;
  int refinement_level = 0;  // number of bridge halvings applied

  int steps() const { return static_cast<int>(increments.cols()); }
  double time(int k) const { return k * dt; }
  std::vector<double> grid() const;
  // Cumulative sums W(t_k), k = 0..steps, for one channel.
  std::vector<double> cumulative(int channel = 0) const;
};

// Number of steps T/dt; throws GridError unless integral within 1e-9.
int grid_steps(double horizon, double dt);

BrownianPath sample_path(int channels, double horizon, double dt, std::uint64_t master_seed,
                         std::uint64_t trajectory_index);

// Brownian-bridge refinement by a power-of-two factor. Implemented as repeated
// halvings whose randomness is keyed by the absolute refinement level, so
// refine(refine(p, 2), 2) == refine(p, 4) bit for bit.
BrownianPath refine(const BrownianPath& path, int factor);

// Sum consecutive groups of `factor` increments.
BrownianPath coarsen(const BrownianPath& path, int factor);

// Path with given increments and grid (used for innovation/output records).
BrownianPath make_path(Eigen::MatrixXd increments, double dt, std::uint64_t master_seed = 0,
                       std::uint64_t trajectory_index = 0);

struct ScalarPath {
  std::vector<double> times;
  std::vector<double> values;
  // True when a singular integrand at t = 0 forced the sum to start at index 1.
  bool regularized = false;
};

// Left-point Ito sums of int_0^t f(s) dB_channel(s) on the path grid.
ScalarPath integrate_stochastic(const BrownianPath& path, const std::function<double(double)>& integrand,
                                int channel = 0);

// Trapezoid sums of int_0^t g(s) ds for sampled integrand values on `times`.
// A non-finite value at index 0 is treated as a singularity: the integral
// starts from index 1 and the result is flagged.
ScalarPath integrate_time(std::span<const double> times, std::span<const double> integrand);
ScalarPath integrate_time(const BrownianPath& path, const std::function<double(double)>& integrand);

template <class State>
using StateMap = std::function<State(const State&)>;

template <class State>
struct EmTrajectory {
  std::vector<double> times;
  std::vector<State> states;
};

struct EmOptions {
  int record_stride = 1;  // store every k-th grid state (and always the last)
};

template <class State>
bool all_finite(const State& x) {
  return x.allFinite();
}

// x_{k+1} = post(x_k + drift(x_k) dt + sum_j diffusion_j(x_k) dW_j).
// `post_step` receives the step index (0-based, of the step just taken) and
// may modify the state in place (renormalization, hermitization, ...).
template <class State>
EmTrajectory<State> euler_maruyama(const StateMap<State>& drift, const std::vector<StateMap<State>>& diffusion,
                                   State x0, const BrownianPath& path,
                                   const std::function<void(int, State&)>& post_step = {},
                                   const EmOptions& options = {}) {
  if (static_cast<int>(diffusion.size()) > path.channels) {
    throw InvalidArgument("euler_maruyama: more diffusion maps than path channels");
  }
  const int steps = path.steps();
  const int stride = std::max(1, options.record_stride);
  EmTrajectory<State> out;
  out.times.reserve(steps / stride + 2);
  out.states.reserve(steps / stride + 2);
  out.times.push_back(0.0);
  out.states.push_back(x0);
  State x = std::move(x0);
  for (int k = 0; k < steps; ++k) {
    State next = x + drift(x) * path.dt;
    for (std::size_t j = 0; j < diffusion.size(); ++j) {
      if (diffusion[j]) next += diffusion[j](x) * path.increments(static_cast<Eigen::Index>(j), k);
    }
    if (!all_finite(next)) throw BlowUpError(k + 1, "non-finite state");
    if (post_step) post_step(k, next);
    if (!all_finite(next)) throw BlowUpError(k + 1, "non-finite state");
    x = std::move(next);
    if ((k + 1) % stride == 0 || k + 1 == steps) {
      out.times.push_back(path.time(k + 1));
      out.states.push_back(x);
    }
  }
  return out;
}

// Runs fn(i) for i in [0, count) on up to `parallelism` threads. Callers
// write results into slot i, so the outcome does not depend on scheduling.
void parallel_for(int count, int parallelism, const std::function<void(int)>& fn);

// Little-endian binary dump: "QFTR", u32 record count, u32 dimension, the
// f64 grid times, then one complex64 (f32 re, f32 im) row per record.
void write_binary_trajectory(const std::string& file, const std::vector<double>& times,
                             const std::vector<Eigen::VectorXcd>& rows);

}  // namespace qfilter
