#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace qfilter::stats {

// Welford accumulator.
class RunningStats {
 public:
  void add(double x);
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const;  // unbiased
  double stderr_of_mean() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct MeanEstimate {
  double mean = 0.0;
  double stderr = 0.0;
  std::size_t count = 0;
};

MeanEstimate mean_estimate(std::span<const double> xs);

// Sample covariance (unbiased) and the standard error of that estimate from
// the empirical variance of the centered products.
struct CovarianceEstimate {
  double value = 0.0;
  double stderr = 0.0;
};
CovarianceEstimate covariance(std::span<const double> xs, std::span<const double> ys);

// Median of the means of `blocks` contiguous blocks (trailing remainder is
// dropped). The returned stderr is the normal-theory scale of the median,
// 1.2533 * sd(block means) / sqrt(blocks).
MeanEstimate median_of_means(std::span<const double> xs, int blocks = 32);

// Hill estimator of the tail index kappa (P(X > x) ~ x^-kappa) from the top k
// order statistics, with its asymptotic standard error kappa / sqrt(k).
struct TailIndex {
  double kappa = 0.0;
  double stderr = 0.0;
  std::size_t k = 0;
};
TailIndex hill_tail_index(std::span<const double> xs, std::size_t k);

// Least-squares line y = intercept + slope x.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};
LineFit fit_line(std::span<const double> xs, std::span<const double> ys);

// Observed convergence order from errors at step sizes (slope of log error
// against log step).
double observed_order(std::span<const double> steps, std::span<const double> errors);

}  // namespace qfilter::stats
