#include "qfilter/stats.hpp"

#include <algorithm>
#include <cmath>

#include "qfilter/errors.hpp"

namespace qfilter::stats {

void RunningStats::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

double RunningStats::variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

double RunningStats::stderr_of_mean() const {
  return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
}

MeanEstimate mean_estimate(std::span<const double> xs) {
  RunningStats acc;
  for (double x : xs) acc.add(x);
  return {acc.mean(), acc.stderr_of_mean(), acc.count()};
}

CovarianceEstimate covariance(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw InvalidArgument("covariance: need equal sizes >= 2");
  const auto n = static_cast<double>(xs.size());
  const double mx = mean_estimate(xs).mean;
  const double my = mean_estimate(ys).mean;
  RunningStats products;
  for (std::size_t i = 0; i < xs.size(); ++i) products.add((xs[i] - mx) * (ys[i] - my));
  return {products.mean() * n / (n - 1.0), products.stderr_of_mean()};
}

MeanEstimate median_of_means(std::span<const double> xs, int blocks) {
  if (blocks < 1) throw InvalidArgument("median_of_means: blocks must be >= 1");
  const std::size_t size = xs.size() / static_cast<std::size_t>(blocks);
  if (size == 0) throw InvalidArgument("median_of_means: fewer samples than blocks");
  std::vector<double> means(blocks);
  for (int b = 0; b < blocks; ++b) means[b] = mean_estimate(xs.subspan(b * size, size)).mean;
  RunningStats spread;
  for (double m : means) spread.add(m);
  std::vector<double> sorted = means;
  std::sort(sorted.begin(), sorted.end());
  const double median = blocks % 2 == 1 ? sorted[blocks / 2] : 0.5 * (sorted[blocks / 2 - 1] + sorted[blocks / 2]);
  return {median, 1.2533 * std::sqrt(spread.variance() / blocks), size * static_cast<std::size_t>(blocks)};
}

TailIndex hill_tail_index(std::span<const double> xs, std::size_t k) {
  if (k < 2 || k >= xs.size()) throw InvalidArgument("hill_tail_index: need 2 <= k < n");
  std::vector<double> sorted(xs.begin(), xs.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end(),
                   std::greater<>());
  const double threshold = sorted[k];
  if (!(threshold > 0.0)) throw InvalidArgument("hill_tail_index: samples must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) acc += std::log(sorted[i] / threshold);
  TailIndex out;
  out.k = k;
  out.kappa = static_cast<double>(k) / acc;
  out.stderr = out.kappa / std::sqrt(static_cast<double>(k));
  return out;
}

LineFit fit_line(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw InvalidArgument("fit_line: need >= 2 points");
  const double mx = mean_estimate(xs).mean;
  const double my = mean_estimate(ys).mean;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
  }
  if (sxx == 0.0) throw InvalidArgument("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

double observed_order(std::span<const double> steps, std::span<const double> errors) {
  std::vector<double> lx(steps.size());
  std::vector<double> ly(errors.size());
  for (std::size_t i = 0; i < steps.size(); ++i) lx[i] = std::log(steps[i]);
  for (std::size_t i = 0; i < errors.size(); ++i) ly[i] = std::log(errors[i]);
  return fit_line(lx, ly).slope;
}

}  // namespace qfilter::stats
