#pragma once

// Strategy set-ups shared by the test suites and the acceptance binary.

#include <cmath>
#include <random>

#include "cppi/market_models.hpp"
#include "cppi/product.hpp"

namespace scenario {

/// Put on a monthly CPPI, flat-curve stand-in for the historical yield curve.
inline cppi::StrategySpec flat_put_strategy() {
  cppi::StrategySpec s;
  s.schedule = cppi::Schedule::uniform(10.0, 120);
  s.curve = cppi::DiscountCurve::flat(0.03);
  s.rule = cppi::RawRule{4.0, cppi::Floor::linear(0.75)};
  s.fee = cppi::FeeRule{0.003};
  s.initial_value = 1000.0;
  s.guarantee = 1000.0;
  return s;
}

inline cppi::Model flat_put_model() { return cppi::LognormalModel{0.03, 0.35}; }

/// Rate giving a ten-year zero-coupon price of 0.606.
inline double kou_rate() { return -std::log(0.606) / 10.0; }

inline cppi::Model kou_model() {
  cppi::KouModel k;
  k.rate = kou_rate();
  k.sigma = 0.20;
  k.lambda_up = 0.1;
  k.eta_up = 0.05;
  k.lambda_down = 0.1;
  k.eta_down = 0.1;
  return k;
}

/// Weekly ten-year CPPI on the natural floor, unit investment and guarantee.
inline cppi::StrategySpec kou_vanilla() {
  cppi::StrategySpec s;
  s.schedule = cppi::Schedule::uniform(10.0, 520);
  s.curve = cppi::DiscountCurve::flat(kou_rate());
  s.rule = cppi::RawRule{4.0, cppi::Floor::natural()};
  return s;
}

inline cppi::StrategySpec kou_capped() {
  auto s = kou_vanilla();
  s.rule.cap = 1.5;
  return s;
}

inline cppi::StrategySpec kou_lockin(double fraction = 0.75) {
  auto s = kou_vanilla();
  s.schedule = s.schedule.with_lockin_every(52);
  s.lockin = cppi::LockInRule{fraction};
  return s;
}

/// Small randomized strategy for property tests.
struct Random {
  cppi::StrategySpec spec;
  cppi::Model model;
};

inline Random random_strategy(std::uint64_t seed, bool fees = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Random r;
  auto& s = r.spec;
  const std::size_t periods = 4 + static_cast<std::size_t>(u(rng) * 20);
  const double maturity = 0.5 + 4.5 * u(rng);
  s.schedule = cppi::Schedule::uniform(maturity, periods);
  const double rate = -0.01 + 0.06 * u(rng);
  s.curve = cppi::DiscountCurve::flat(rate);
  s.rule.multiplier = 1.0 + 5.0 * u(rng);
  s.rule.floor = u(rng) < 0.5 ? cppi::Floor::natural() : cppi::Floor::linear(0.6 + 0.3 * u(rng));
  if (u(rng) < 0.3) s.rule.cap = 1.0 + u(rng);
  s.fee.rate = fees && u(rng) < 0.5 ? 0.02 * u(rng) : 0.0;
  s.initial_value = 0.8 + 0.6 * u(rng);
  s.guarantee = 1.0;
  const double sigma = 0.05 + 0.35 * u(rng);
  if (u(rng) < 0.5) {
    r.model = cppi::LognormalModel{rate, sigma};
  } else {
    cppi::KouModel k;
    k.rate = rate;
    k.sigma = sigma;
    k.lambda_up = 0.5 * u(rng);
    k.eta_up = 0.02 + 0.1 * u(rng);
    k.lambda_down = 0.5 * u(rng);
    k.eta_down = 0.02 + 0.15 * u(rng);
    r.model = k;
  }
  return r;
}

}  // namespace scenario
