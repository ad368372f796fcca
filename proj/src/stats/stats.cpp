#include "stats/stats.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"

namespace ply::stats {

MeanSem mean_sem(const std::vector<double>& samples) {
  const size_t n = samples.size();
  if (n < 2) fail(ErrorKind::Config, "mean_sem needs at least 2 samples");
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, s / std::sqrt(static_cast<double>(n))};
}

int binomial_quantile(int n, double p, double target) {
  if (n < 1 || p < 0.0 || p > 1.0 || target < 0.0 || target > 1.0)
    fail(ErrorKind::Config, "binomial_quantile arguments out of range");
  if (p == 0.0) return 0;
  if (p == 1.0) return n;
  // Walk the pmf with the multiplicative recurrence in log space so large n
  // cannot underflow.
  const double log_p = std::log(p), log_q = std::log1p(-p);
  double log_pmf = static_cast<double>(n) * log_q;  // k = 0
  double cdf = std::exp(log_pmf);
  int k = 0;
  // Tiny slack absorbs accumulated rounding at exact-quantile targets.
  while (cdf < target - 1e-12 && k < n) {
    log_pmf += std::log(static_cast<double>(n - k)) - std::log(static_cast<double>(k + 1)) +
               log_p - log_q;
    cdf += std::exp(log_pmf);
    ++k;
  }
  return k;
}

std::pair<double, double> percentile_ci(std::vector<double> samples, double p, double level) {
  const int n = static_cast<int>(samples.size());
  if (n < 20) fail(ErrorKind::Config, "percentile_ci needs at least 20 samples");
  if (p <= 0.0 || p >= 1.0) fail(ErrorKind::Config, "percentile p must be in (0,1)");
  std::sort(samples.begin(), samples.end());
  const double tail = (1.0 - level) / 2.0;
  const int k_lo = std::clamp(binomial_quantile(n, p, tail), 1, n);
  const int k_hi = std::clamp(binomial_quantile(n, p, 1.0 - tail), 1, n);
  return {samples[static_cast<size_t>(k_lo - 1)], samples[static_cast<size_t>(k_hi - 1)]};
}

double percentile(std::vector<double> samples, double p) {
  if (samples.empty()) fail(ErrorKind::Config, "percentile of empty sample set");
  std::sort(samples.begin(), samples.end());
  const int n = static_cast<int>(samples.size());
  const int rank = std::clamp(static_cast<int>(std::ceil(p * n)), 1, n);
  return samples[static_cast<size_t>(rank - 1)];
}

double propagate(const std::vector<double>& sigmas) {
  double ss = 0.0;
  for (double s : sigmas) {
    if (s < 0.0) fail(ErrorKind::Config, "propagate requires non-negative errors");
    ss += s * s;
  }
  return std::sqrt(ss);
}

PercentileCurve percentile_curve(std::vector<double> samples, double level) {
  PercentileCurve curve;
  curve.n = static_cast<int>(samples.size());
  std::sort(samples.begin(), samples.end());
  for (int i = 1; i <= 199; ++i) {
    const double p = static_cast<double>(i) / 200.0;
    curve.p.push_back(p);
    const int n = curve.n;
    const int rank = std::clamp(static_cast<int>(std::ceil(p * n)), 1, n);
    curve.value.push_back(samples[static_cast<size_t>(rank - 1)]);
    const double tail = (1.0 - level) / 2.0;
    const int k_lo = std::clamp(binomial_quantile(n, p, tail), 1, n);
    const int k_hi = std::clamp(binomial_quantile(n, p, 1.0 - tail), 1, n);
    curve.ci_lo.push_back(samples[static_cast<size_t>(k_lo - 1)]);
    curve.ci_hi.push_back(samples[static_cast<size_t>(k_hi - 1)]);
  }
  return curve;
}

}  // namespace ply::stats
