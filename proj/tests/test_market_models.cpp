#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "cppi/market_models.hpp"
#include "oracles.hpp"

using namespace cppi;

namespace {

KouModel kou_scenario() {
  KouModel k;
  k.rate = -std::log(0.606) / 10.0;
  k.sigma = 0.20;
  k.lambda_up = 0.1;
  k.eta_up = 0.05;
  k.lambda_down = 0.1;
  k.eta_down = 0.1;
  return k;
}

double log_mean(const IncrementDistribution& d) { return std::log(d.moment(1)); }

}  // namespace

TEST(Lognormal, MedianHasHalfMass) {
  const double r = 0.05, s = 0.35, dt = 1.0 / 12.0;
  IncrementDistribution d(LognormalModel{r, s}, 0.0, dt);
  EXPECT_NEAR(d.cdf(std::exp((r - 0.5 * s * s) * dt)), 0.5, 1e-15);
}

TEST(Lognormal, FullMomentsAreClosedForm) {
  IncrementDistribution d(LognormalModel{0.05, 0.2}, 0.0, 0.5);
  EXPECT_NEAR(d.partial_moment(1, math::kInf), std::exp(0.025), 1e-15);
  IncrementDistribution e(LognormalModel{0.0, 0.35}, 0.0, 1.0);
  EXPECT_NEAR(e.partial_moment(2, math::kInf), std::exp(0.1225), 1e-14);
  EXPECT_DOUBLE_EQ(e.cdf(math::kInf), 1.0);
}

TEST(Lognormal, SecondMomentMatchesDensityQuadrature) {
  const double s = 0.35;
  IncrementDistribution d(LognormalModel{0.0, s}, 0.0, 1.0);
  const double mu = -0.5 * s * s;
  auto integrand = [&](double y) { return std::exp(2.0 * y) * math::norm_pdf((y - mu) / s) / s; };
  const double q = oracle::trapezoid_richardson(integrand, mu - 14 * s, mu + 20 * s, 8000);
  EXPECT_NEAR(q / d.moment(2), 1.0, 1e-8);
}

TEST(Lognormal, PartialMomentsMatchDensityQuadrature) {
  const double r = 0.03, s = 0.35, dt = 1.0 / 12.0;
  IncrementDistribution d(LognormalModel{r, s}, 0.0, dt);
  const double mu = (r - 0.5 * s * s) * dt, sd = s * std::sqrt(dt);
  for (double z : {0.8, 0.95, 1.0, 1.07, 1.3}) {
    for (int n = 0; n <= 2; ++n) {
      auto integrand = [&](double y) { return std::exp(n * y) * math::norm_pdf((y - mu) / sd) / sd; };
      const double q = oracle::trapezoid_richardson(integrand, mu - 14 * sd, std::log(z), 20000);
      EXPECT_NEAR(d.partial_moment(n, z) / q, 1.0, 1e-8) << "n=" << n << " z=" << z;
    }
  }
}

TEST(Lognormal, ZeroOrderIsCdfAndNonPositiveIsZero) {
  IncrementDistribution d(LognormalModel{0.01, 0.3}, 0.0, 0.25);
  for (double z : {0.5, 0.9, 1.0, 1.4}) EXPECT_EQ(d.partial_moment(0, z), d.cdf(z));
  EXPECT_EQ(d.cdf(0.0), 0.0);
  EXPECT_EQ(d.cdf(-1.0), 0.0);
}

TEST(Distribution, Errors) {
  EXPECT_THROW(IncrementDistribution(LognormalModel{0.0, 0.2}, 1.0, 1.0), ConfigError);
  IncrementDistribution d(LognormalModel{0.0, 0.2}, 0.0, 1.0);
  EXPECT_THROW(d.partial_moment(3, 1.0), UnsupportedOrder);
  EXPECT_THROW(d.partial_moment(-1, 1.0), UnsupportedOrder);
  KouModel bad = kou_scenario();
  bad.eta_up = 1.0;
  EXPECT_THROW(IncrementDistribution(bad, 0.0, 1.0), ConfigError);
}

TEST(Distribution, MonotoneInThreshold) {
  for (const Model& m : {Model(LognormalModel{0.02, 0.3}), Model(kou_scenario())}) {
    IncrementDistribution d(m, 0.0, 1.0 / 52.0);
    for (int n = 0; n <= 2; ++n) {
      double prev = 0.0;
      for (double z = 0.5; z < 1.6; z *= 1.003) {
        const double v = d.partial_moment(n, z);
        EXPECT_GE(v, prev - 1e-15);
        prev = v;
      }
    }
  }
}

TEST(Distribution, RiskNeutralFirstMomentOnSupport) {
  for (double dt : {1.0 / 252, 1.0 / 52, 1.0 / 12, 1.0}) {
    for (const Model& m : {Model(LognormalModel{0.05, 0.35}), Model(kou_scenario())}) {
      IncrementDistribution d(m, 0.0, dt);
      const double sd = std::sqrt(variance_rate(m) * dt);
      const double z_max = std::exp(log_mean(d) + 40.0 * sd + 2.0);
      EXPECT_NEAR(d.partial_moment(1, z_max), std::exp(model_rate(m) * dt), 1e-10) << "dt=" << dt;
      EXPECT_NEAR(d.partial_moment(0, z_max), 1.0, 1e-10);
    }
  }
}

TEST(Kou, MatchesFourierInversion) {
  const Model m = kou_scenario();
  for (double dt : {1.0 / 52, 1.0 / 12, 1.0}) {
    IncrementDistribution d(m, 0.0, dt);
    for (double z : {0.7, 0.9, 0.97, 1.0, 1.03, 1.1, 1.4}) {
      for (int n = 0; n <= 2; ++n) {
        const double ref = oracle::fourier_partial_moment(m, dt, n, z);
        const double got = d.partial_moment(n, z);
        if (ref > 1e-6)
          EXPECT_NEAR(got / ref, 1.0, 1e-6) << "dt=" << dt << " n=" << n << " z=" << z;
        else
          EXPECT_NEAR(got, ref, 1e-12) << "dt=" << dt << " n=" << n << " z=" << z;
      }
    }
  }
}

TEST(Kou, UpperAndLowerTailsAddUp) {
  IncrementDistribution d(kou_scenario(), 0.0, 1.0 / 12);
  for (double z : {0.6, 0.95, 1.0, 1.2, 2.0}) {
    PartialMoments pm;
    d.evaluate(z, 2, pm);
    for (int n = 0; n <= 2; ++n) EXPECT_NEAR((pm.lower[n] + pm.upper[n]) / d.moment(n), 1.0, 1e-12);
  }
}

TEST(Kou, PartialMomentsMatchDensityTrapezoid) {
  const Model m = kou_scenario();
  const double dt = 1.0 / 12;
  IncrementDistribution d(m, 0.0, dt);
  const double sd = 0.2 * std::sqrt(dt);
  for (double z : {0.92, 1.0, 1.05}) {
    for (int n = 0; n <= 2; ++n) {
      auto integrand = [&](double y) { return std::exp(n * y) * oracle::fourier_log_density(m, dt, y); };
      const double lo = -3.5;  // down-jump tail mass beyond this is < 1e-14
      const double q = oracle::trapezoid_richardson(integrand, lo, std::log(z), static_cast<int>((std::log(z) - lo) / (sd / 30)) / 2 * 2);
      EXPECT_NEAR(d.partial_moment(n, z) / q, 1.0, 1e-6) << "n=" << n << " z=" << z;
    }
  }
}

TEST(Kou, CdfAtOneMatchesMonteCarlo) {
  const Model m = kou_scenario();
  const double dt = 1.0 / 52;
  IncrementDistribution d(m, 0.0, dt);
  ReturnSampler sampler(m, dt);
  std::mt19937_64 rng(12345);
  const long paths = 10'000'000;
  long below = 0;
  for (long p = 0; p < paths; ++p) below += sampler.gross(sampler.draw(rng)) < 1.0;
  const double est = static_cast<double>(below) / paths;
  const double se = std::sqrt(est * (1 - est) / paths);
  EXPECT_NEAR(d.cdf(1.0), est, 3 * se);
}

TEST(Sampler, DegenerateIsDeterministic) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) EXPECT_DOUBLE_EQ(sample_return(LognormalModel{0.05, 0.0}, 1.0, rng), std::exp(0.05));
  std::mt19937_64 a(7), b(7);
  EXPECT_EQ(sample_return(kou_scenario(), 0.5, a), sample_return(kou_scenario(), 0.5, b));
  EXPECT_THROW(sample_return(LognormalModel{}, 0.0, a), ConfigError);
}

TEST(Sampler, MeansAreRiskNeutral) {
  for (const Model& m : {Model(LognormalModel{0.05, 0.35}), Model(kou_scenario())}) {
    ReturnSampler sampler(m, 1.0);
    std::mt19937_64 rng(99);
    const int n = 1'000'000;
    double s1 = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
      const double x = sampler.gross(sampler.draw(rng));
      s1 += x;
      s2 += x * x;
    }
    const double mean = s1 / n, se = std::sqrt((s2 / n - mean * mean) / n);
    EXPECT_NEAR(mean, std::exp(model_rate(m)), 3 * se);
  }
}

TEST(Sampler, ChiSquaredAgainstCdf) {
  const double crit = boost::math::quantile(boost::math::complement(boost::math::chi_squared(19), 0.01));
  for (const Model& m : {Model(LognormalModel{0.02, 0.3}), Model(kou_scenario())}) {
    const double dt = 1.0 / 12;
    IncrementDistribution d(m, 0.0, dt);
    ReturnSampler sampler(m, dt);
    // 20 equiprobable bins from the lattice cdf, located by bisection
    std::vector<double> edges;
    for (int b = 1; b < 20; ++b)
      edges.push_back(oracle::bisect([&](double z) { return d.cdf(z) - b / 20.0; }, 0.2, 5.0));
    std::vector<long> counts(20, 0);
    std::mt19937_64 rng(2024);
    const long n = 1'000'000;
    for (long i = 0; i < n; ++i) {
      const double x = sampler.gross(sampler.draw(rng));
      ++counts[std::upper_bound(edges.begin(), edges.end(), x) - edges.begin()];
    }
    double chi2 = 0.0;
    for (long c : counts) chi2 += std::pow(c - n / 20.0, 2) / (n / 20.0);
    EXPECT_LT(chi2, crit);
  }
}
