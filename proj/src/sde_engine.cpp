#include "qfilter/sde_engine.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <thread>

namespace qfilter {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t kIncrementTag = 0x696e6372ULL;
constexpr std::uint64_t kBridgeTag = 0x62726964ULL;

}  // namespace

std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t trajectory_index, std::uint64_t tag) {
  std::uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ trajectory_index);
  return splitmix64(h ^ tag);
}

std::vector<double> BrownianPath::grid() const {
  std::vector<double> t(steps() + 1);
  for (int k = 0; k <= steps(); ++k) t[k] = time(k);
  return t;
}

std::vector<double> BrownianPath::cumulative(int channel) const {
  std::vector<double> w(steps() + 1, 0.0);
  for (int k = 0; k < steps(); ++k) w[k + 1] = w[k] + increments(channel, k);
  return w;
}

int grid_steps(double horizon, double dt) {
  if (!(dt > 0.0)) throw GridError("dt must be positive");
  if (!(horizon >= dt * (1.0 - 1e-12))) throw GridError("horizon must be at least dt");
  const double ratio = horizon / dt;
  const double rounded = std::round(ratio);
  if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, rounded)) {
    throw GridError("T/dt = " + std::to_string(ratio) + " is not integral");
  }
  return static_cast<int>(rounded);
}

BrownianPath sample_path(int channels, double horizon, double dt, std::uint64_t master_seed,
                         std::uint64_t trajectory_index) {
  if (channels < 1) throw InvalidArgument("sample_path: channels must be >= 1");
  const int steps = grid_steps(horizon, dt);
  BrownianPath path;
  path.channels = channels;
  path.horizon = steps * dt;
  path.dt = dt;
  path.master_seed = master_seed;
  path.trajectory_index = trajectory_index;
  path.increments.resize(channels, steps);
  std::mt19937_64 rng(stream_seed(master_seed, trajectory_index, kIncrementTag));
  std::normal_distribution<double> normal(0.0, std::sqrt(dt));
  for (int k = 0; k < steps; ++k) {
    for (int j = 0; j < channels; ++j) path.increments(j, k) = normal(rng);
  }
  return path;
}

namespace {

BrownianPath halve(const BrownianPath& path) {
  BrownianPath out = path;
  out.dt = path.dt / 2.0;
  out.refinement_level = path.refinement_level + 1;
  out.increments.resize(path.channels, 2 * path.steps());
  std::mt19937_64 rng(stream_seed(path.master_seed, path.trajectory_index,
                                  kBridgeTag + static_cast<std::uint64_t>(out.refinement_level)));
  // Given the coarse increment dW over [t, t + dt], the midpoint increments are
  // dW/2 +- sqrt(dt)/2 z with z standard normal.
  std::normal_distribution<double> normal(0.0, 0.5 * std::sqrt(path.dt));
  for (int k = 0; k < path.steps(); ++k) {
    for (int j = 0; j < path.channels; ++j) {
      const double half = 0.5 * path.increments(j, k);
      const double s = normal(rng);
      out.increments(j, 2 * k) = half + s;
      out.increments(j, 2 * k + 1) = half - s;
    }
  }
  return out;
}

bool is_power_of_two(int f) { return f >= 1 && std::has_single_bit(static_cast<unsigned>(f)); }

}  // namespace

BrownianPath refine(const BrownianPath& path, int factor) {
  if (factor < 2 || !is_power_of_two(factor)) {
    throw InvalidArgument("refine: factor must be a power of two >= 2");
  }
  BrownianPath out = path;
  for (int f = factor; f > 1; f /= 2) out = halve(out);
  return out;
}

BrownianPath coarsen(const BrownianPath& path, int factor) {
  if (factor < 1 || path.steps() % factor != 0) {
    throw InvalidArgument("coarsen: factor must divide the number of steps");
  }
  BrownianPath out = path;
  out.dt = path.dt * factor;
  const int steps = path.steps() / factor;
  out.increments = Eigen::MatrixXd::Zero(path.channels, steps);
  for (int k = 0; k < steps; ++k) {
    for (int i = 0; i < factor; ++i) out.increments.col(k) += path.increments.col(k * factor + i);
  }
  int f = factor;
  while (f > 1 && f % 2 == 0) {
    f /= 2;
    --out.refinement_level;
  }
  return out;
}

BrownianPath make_path(Eigen::MatrixXd increments, double dt, std::uint64_t master_seed,
                       std::uint64_t trajectory_index) {
  BrownianPath path;
  path.channels = static_cast<int>(increments.rows());
  path.dt = dt;
  path.horizon = dt * static_cast<double>(increments.cols());
  path.increments = std::move(increments);
  path.master_seed = master_seed;
  path.trajectory_index = trajectory_index;
  return path;
}

ScalarPath integrate_stochastic(const BrownianPath& path, const std::function<double(double)>& integrand,
                                int channel) {
  if (channel < 0 || channel >= path.channels) throw InvalidArgument("integrate_stochastic: bad channel");
  ScalarPath out;
  out.times = path.grid();
  out.values.assign(out.times.size(), 0.0);
  int start = 0;
  if (!std::isfinite(integrand(0.0))) {
    start = 1;
    out.regularized = true;
  }
  for (int k = 0; k < path.steps(); ++k) {
    double inc = 0.0;
    if (k >= start) {
      const double f = integrand(out.times[k]);
      if (!std::isfinite(f)) throw InvalidArgument("integrate_stochastic: non-finite integrand");
      inc = f * path.increments(channel, k);
    }
    out.values[k + 1] = out.values[k] + inc;
  }
  return out;
}

ScalarPath integrate_time(std::span<const double> times, std::span<const double> integrand) {
  if (times.size() != integrand.size() || times.empty()) {
    throw InvalidArgument("integrate_time: grid and integrand sizes differ");
  }
  ScalarPath out;
  out.times.assign(times.begin(), times.end());
  out.values.assign(times.size(), 0.0);
  std::size_t start = 0;
  if (!std::isfinite(integrand[0])) {
    start = 1;
    out.regularized = true;
  }
  for (std::size_t k = 0; k + 1 < times.size(); ++k) {
    double inc = 0.0;
    if (k >= start) {
      if (!std::isfinite(integrand[k + 1])) throw InvalidArgument("integrate_time: non-finite integrand");
      inc = 0.5 * (integrand[k] + integrand[k + 1]) * (times[k + 1] - times[k]);
    }
    out.values[k + 1] = out.values[k] + inc;
  }
  return out;
}

ScalarPath integrate_time(const BrownianPath& path, const std::function<double(double)>& integrand) {
  const auto times = path.grid();
  std::vector<double> values(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) values[k] = integrand(times[k]);
  return integrate_time(times, values);
}

void parallel_for(int count, int parallelism, const std::function<void(int)>& fn) {
  const int workers = std::max(1, std::min(parallelism, count));
  if (workers == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (int i = w; i < count; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

template <class T>
void put_le(std::ofstream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "binary dump assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

}  // namespace

void write_binary_trajectory(const std::string& file, const std::vector<double>& times,
                             const std::vector<Eigen::VectorXcd>& rows) {
  if (times.size() != rows.size()) throw InvalidArgument("binary dump: times and rows differ in length");
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("io", "cannot open " + file);
  out.write("QFTR", 4);
  const auto dim = rows.empty() ? 0u : static_cast<std::uint32_t>(rows.front().size());
  put_le(out, static_cast<std::uint32_t>(rows.size()));
  put_le(out, dim);
  for (double t : times) put_le(out, t);
  for (const auto& row : rows) {
    if (static_cast<std::uint32_t>(row.size()) != dim) throw InvalidArgument("binary dump: ragged rows");
    for (Eigen::Index k = 0; k < row.size(); ++k) {
      put_le(out, static_cast<float>(row(k).real()));
      put_le(out, static_cast<float>(row(k).imag()));
    }
  }
}

}  // namespace qfilter
