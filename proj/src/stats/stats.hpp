#pragma once

#include <utility>
#include <vector>

namespace ply::stats {

struct MeanSem {
  double mean;
  double sem;  // Bessel-corrected s / sqrt(n)
};

MeanSem mean_sem(const std::vector<double>& samples);

// Smallest k with P[B(n,p) <= k] >= target.
int binomial_quantile(int n, double p, double target);

// Order-statistic confidence interval for the p-th percentile: sorted-sample
// values at the binomial quantile ranks of B(n, p) at (1-level)/2 and
// 1-(1-level)/2, ranks clamped to [1, n].
std::pair<double, double> percentile_ci(std::vector<double> samples, double p,
                                        double level = 0.95);

// Empirical percentile: sorted value at rank ceil(p*n), clamped to [1, n].
double percentile(std::vector<double> samples, double p);

// sqrt of the sum of squared errors.
double propagate(const std::vector<double>& sigmas);

// Effect-at-percentile curve with confidence band, on a fixed grid of 199
// evenly spaced interior percentiles.
struct PercentileCurve {
  std::vector<double> p;
  std::vector<double> value;
  std::vector<double> ci_lo;
  std::vector<double> ci_hi;
  int n = 0;
};

PercentileCurve percentile_curve(std::vector<double> samples, double level = 0.95);

}  // namespace ply::stats
