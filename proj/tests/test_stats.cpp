#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "common/error.hpp"
#include "stats/stats.hpp"

using namespace ply;

namespace {

// Exact binomial CDF oracle in long double, straight from the pmf recurrence
// but without logs; good to ~1e-15 for the n used here.
long double binom_cdf(int n, double p, int k) {
  long double pmf = std::pow(1.0L - static_cast<long double>(p), n);
  long double cdf = pmf;
  for (int i = 0; i < k; ++i) {
    pmf *= static_cast<long double>(n - i) / static_cast<long double>(i + 1);
    pmf *= static_cast<long double>(p) / (1.0L - static_cast<long double>(p));
    cdf += pmf;
  }
  return cdf;
}

}  // namespace

TEST_CASE("mean_sem hand values") {
  const auto r = stats::mean_sem({0.0, 2.0});
  CHECK(r.mean == doctest::Approx(1.0));
  CHECK(r.sem == doctest::Approx(1.0));  // s = sqrt(2), sem = sqrt(2)/sqrt(2)

  const auto r4 = stats::mean_sem({1.0, 2.0, 3.0, 4.0});
  CHECK(r4.mean == doctest::Approx(2.5));
  CHECK(r4.sem == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));

  CHECK_THROWS_AS(stats::mean_sem({}), Error);
  CHECK_THROWS_AS(stats::mean_sem({1.0}), Error);
}

TEST_CASE("propagate is the root-sum-square") {
  CHECK(stats::propagate({3.0, 4.0}) == 5.0);
  CHECK(stats::propagate({5.0, 12.0}) == 13.0);
  CHECK(stats::propagate({2.0}) == 2.0);
  CHECK(stats::propagate({}) == 0.0);
  CHECK_THROWS_AS(stats::propagate({-1.0}), Error);
}

TEST_CASE("binomial_quantile matches the exact CDF definition") {
  // Smallest k with CDF(k) >= target, across a grid of n/p/target.
  for (int n : {1, 2, 10, 100, 500}) {
    for (double p : {0.05, 0.25, 0.5, 0.9}) {
      for (double target : {0.025, 0.1, 0.5, 0.975}) {
        int expect = 0;
        while (expect < n && binom_cdf(n, p, expect) < static_cast<long double>(target) - 1e-12L)
          ++expect;
        INFO("n=" << n << " p=" << p << " target=" << target);
        CHECK(stats::binomial_quantile(n, p, target) == expect);
      }
    }
  }
  // Pinned values used by the percentile machinery.
  CHECK(stats::binomial_quantile(100, 0.5, 0.025) == 40);
  CHECK(stats::binomial_quantile(100, 0.5, 0.975) == 60);
  CHECK(stats::binomial_quantile(50, 0.0, 0.5) == 0);
  CHECK(stats::binomial_quantile(50, 1.0, 0.5) == 50);
  CHECK_THROWS_AS(stats::binomial_quantile(0, 0.5, 0.5), Error);
  CHECK_THROWS_AS(stats::binomial_quantile(10, 1.5, 0.5), Error);
}

TEST_CASE("percentile picks the ceil-rank order statistic") {
  std::vector<double> v{5.0, 1.0, 3.0, 2.0, 4.0};
  CHECK(stats::percentile(v, 0.5) == 3.0);   // rank ceil(2.5) = 3
  CHECK(stats::percentile(v, 0.2) == 1.0);   // rank 1
  CHECK(stats::percentile(v, 0.21) == 2.0);  // rank ceil(1.05) = 2
  CHECK(stats::percentile(v, 0.999) == 5.0);
  CHECK(stats::percentile({7.0}, 0.5) == 7.0);
  CHECK_THROWS_AS(stats::percentile({}, 0.5), Error);
}

TEST_CASE("percentile_ci brackets the point estimate and needs 20 samples") {
  std::vector<double> v(100);
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i + 1);
  const auto [lo, hi] = stats::percentile_ci(v, 0.5);
  CHECK(lo == 40.0);  // binomial_quantile(100,.5,.025) = 40 -> sorted[39]
  CHECK(hi == 60.0);
  CHECK(lo <= stats::percentile(v, 0.5));
  CHECK(stats::percentile(v, 0.5) <= hi);

  CHECK_THROWS_AS(stats::percentile_ci(std::vector<double>(19, 1.0), 0.5), Error);
  CHECK_THROWS_AS(stats::percentile_ci(v, 0.0), Error);
  CHECK_THROWS_AS(stats::percentile_ci(v, 1.0), Error);
}

TEST_CASE("percentile_ci Monte Carlo coverage on a known distribution") {
  // Exponential(1): the true p-quantile is -ln(1-p). With n=200 draws and a
  // 95% order-statistic interval, coverage over 1000 trials must clear 93%.
  std::mt19937_64 rng(11);
  std::exponential_distribution<double> exp1(1.0);
  for (double p : {0.5, 0.75}) {
    const double truth = -std::log1p(-p);
    int covered = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<double> draw(200);
      for (auto& v : draw) v = exp1(rng);
      const auto [lo, hi] = stats::percentile_ci(draw, p);
      if (lo <= truth && truth <= hi) ++covered;
    }
    INFO("p=" << p << " covered=" << covered);
    CHECK(covered >= 930);
    CHECK(covered <= 990);  // an always-[min,max] interval would fail this
  }
}

TEST_CASE("percentile_curve is the pointwise percentile with its CI") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(250);
  for (auto& x : v) x = gauss(rng);

  const auto curve = stats::percentile_curve(v);
  REQUIRE(curve.p.size() == 199);
  REQUIRE(curve.value.size() == 199);
  CHECK(curve.n == 250);
  CHECK(curve.p.front() == doctest::Approx(0.005));
  CHECK(curve.p.back() == doctest::Approx(0.995));
  for (size_t i = 0; i < curve.p.size(); ++i) {
    CHECK(curve.value[i] == stats::percentile(v, curve.p[i]));
    const auto [lo, hi] = stats::percentile_ci(v, curve.p[i]);
    CHECK(curve.ci_lo[i] == lo);
    CHECK(curve.ci_hi[i] == hi);
    CHECK(curve.ci_lo[i] <= curve.value[i]);
    CHECK(curve.value[i] <= curve.ci_hi[i]);
    if (i > 0) CHECK(curve.value[i] >= curve.value[i - 1]);  // monotone in p
  }
}
