#include <gtest/gtest.h>

#include <cmath>

#include "cppi/pricer.hpp"
#include "scenarios.hpp"

using namespace cppi;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

Payoff constant(double c) { return Payoff::piecewise_linear({{0.0, c}, {1.0, c}}); }

// short version of the put strategy so every test stays fast
StrategySpec short_put() {
  auto s = scenario::flat_put_strategy();
  s.schedule = Schedule::uniform(2.0, 24);
  return s;
}

struct Setup {
  StrategySpec spec;
  Model model;
  Grid grid;
  int order;
};

Setup setup(StrategySpec spec, Model model, std::size_t n, int order, std::optional<double> kink = 1.0) {
  GridOptions opt;
  opt.midpoints = order == 3;
  Grid g = strategy_grid(spec, model, kink, n, opt);
  return {std::move(spec), std::move(model), std::move(g), order};
}

}  // namespace

TEST(European, ConstantPayoffIsDiscounted) {
  for (int order : {2, 3}) {
    const auto c = setup(short_put(), scenario::flat_put_model(), 200, order);
    MatrixChain chain(c.spec, c.model, c.grid, order);
    const double df = std::exp(-0.03 * 2.0);
    EXPECT_LT(rel(price_european(c.spec, chain, c.grid, constant(1.0)).price, 1000.0 * df), 1e-9);
    EXPECT_EQ(price_european(c.spec, chain, c.grid, constant(0.0)).price, 0.0);
  }
}

TEST(European, LinearInThePayoff) {
  const auto c = setup(short_put(), scenario::flat_put_model(), 200, 3);
  MatrixChain chain(c.spec, c.model, c.grid, 3);
  const std::vector<double> knots{0.0, 0.7, 1.0, 1.3, 2.5};
  const std::vector<double> p1{1.0, 0.3, 0.0, 0.0, 0.0}, p2{0.0, 0.0, 0.2, 1.1, 1.5};
  std::vector<std::pair<double, double>> t1, t2, mix;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    t1.emplace_back(knots[k], p1[k]);
    t2.emplace_back(knots[k], p2[k]);
    mix.emplace_back(knots[k], 2.0 * p1[k] - 3.0 * p2[k]);
  }
  const double a = price_european(c.spec, chain, c.grid, Payoff::piecewise_linear(t1)).price;
  const double b = price_european(c.spec, chain, c.grid, Payoff::piecewise_linear(t2)).price;
  const double m = price_european(c.spec, chain, c.grid, Payoff::piecewise_linear(mix)).price;
  EXPECT_NEAR(m, 2.0 * a - 3.0 * b, 1e-10 * (std::abs(a) + std::abs(b)));
}

TEST(European, PutCallParityAndMartingale) {
  auto spec = short_put();
  spec.fee.rate = 0.0;
  for (int order : {2, 3}) {
    const auto c = setup(spec, scenario::flat_put_model(), 200, order);
    MatrixChain chain(c.spec, c.model, c.grid, order);
    const double port = price_european(c.spec, chain, c.grid, Payoff::portfolio()).price;
    const double put = price_european(c.spec, chain, c.grid, Payoff::put(1.0)).price;
    const double call = price_european(c.spec, chain, c.grid, Payoff::call(1.0)).price;
    EXPECT_LT(rel(port + put - call, 1000.0 * std::exp(-0.06)), 1e-8);
    EXPECT_LT(rel(port, 1000.0), 1e-9) << "self-financing portfolio is a martingale";
  }
}

TEST(European, FeesScaleThePortfolioDeterministically) {
  const auto c = setup(short_put(), scenario::flat_put_model(), 200, 2);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  const double port = price_european(c.spec, chain, c.grid, Payoff::portfolio()).price;
  EXPECT_LT(rel(port, 1000.0 * std::pow(1.0 - 0.003 / 12.0, 24)), 1e-9);
}

TEST(European, RisklessStrategyStaysOnItsNode) {
  StrategySpec s;
  s.schedule = Schedule::uniform(3.0, 12);
  s.rule = RawRule{4.0, Floor::linear(1.2)};  // floor above the portfolio: never invested
  const auto c = setup(s, LognormalModel{0.0, 0.3}, 100, 2, std::nullopt);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  const Vector p = forward_distribution(c.spec, chain, c.grid).back();
  EXPECT_EQ(p[static_cast<Eigen::Index>(c.grid.j0)], 1.0);
  EXPECT_EQ(p.sum(), 1.0);
}

TEST(European, ForwardAndBackwardAgree) {
  for (int order : {2, 3}) {
    const auto c = setup(short_put(), scenario::flat_put_model(), 300, order);
    MatrixChain chain(c.spec, c.model, c.grid, order);
    const Vector term = forward_distribution(c.spec, chain, c.grid).back();
    EXPECT_NEAR(term.sum(), 1.0, 1e-9);
    for (const Payoff& p : {Payoff::portfolio(), Payoff::put(1.0), Payoff::call(1.2)}) {
      const double back = price_european(c.spec, chain, c.grid, p).price;
      const double fwd = price_from_distribution(c.spec, c.grid, term, p);
      EXPECT_LT(rel(back, fwd), 1e-9);
    }
  }
}

TEST(Bermudan, DominatesEuropean) {
  const auto c = setup(short_put(), scenario::flat_put_model(), 300, 3);
  MatrixChain chain(c.spec, c.model, c.grid, 3);
  const auto put = Payoff::put(1.0);
  const double eu = price_european(c.spec, chain, c.grid, put).price;
  const auto be = price_bermudan(c.spec, chain, c.grid, put, true);
  EXPECT_GT(be.price, eu);
  for (std::size_t i = 0; i <= 24; ++i) {
    const Vector ex = detail::payoff_on_grid(put, c.grid.nodes, c.spec.scale(i));
    EXPECT_TRUE((be.values[i].array() >= ex.array()).all());
  }
}

TEST(Bermudan, TrivialCases) {
  const auto c = setup(short_put(), scenario::flat_put_model(), 200, 2);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  // no intrinsic value anywhere: never exercised
  const auto zero = constant(0.0);
  EXPECT_EQ(price_bermudan(c.spec, chain, c.grid, zero).price, price_european(c.spec, chain, c.grid, zero).price);
  // positive rates make immediate exercise of a constant optimal
  EXPECT_DOUBLE_EQ(price_bermudan(c.spec, chain, c.grid, constant(1.0)).price, 1000.0);
}

TEST(Delta, ConstantAndPortfolio) {
  auto spec = short_put();
  spec.fee.rate = 0.0;
  const auto c = setup(spec, scenario::flat_put_model(), 300, 3);
  MatrixChain chain(c.spec, c.model, c.grid, 3);
  const auto k = constant(2.0);
  EXPECT_NEAR(delta(c.spec, chain, c.grid, k, price_european(c.spec, chain, c.grid, k, true)), 0.0, 1e-9);
  const auto p = Payoff::portfolio();
  EXPECT_NEAR(delta(c.spec, chain, c.grid, p, price_european(c.spec, chain, c.grid, p, true)), 1.0, 1e-7);
  const auto put = Payoff::put(1.0);
  const double d = delta(c.spec, chain, c.grid, put, price_european(c.spec, chain, c.grid, put, true));
  EXPECT_LT(d, 0.0);
  EXPECT_GT(d, -1.0);
  EXPECT_THROW(delta(c.spec, chain, c.grid, put, price_european(c.spec, chain, c.grid, put)), ConfigError);
}

namespace {

StrategySpec short_lockin(double fraction) {
  StrategySpec s;
  s.schedule = Schedule::uniform(3.0, 36).with_lockin_every(12);
  s.curve = DiscountCurve::flat(0.02);
  s.rule = RawRule{4.0, Floor::natural()};
  s.lockin = LockInRule{fraction};
  return s;
}

}  // namespace

TEST(LockIn, ZeroFractionMatchesEuropean) {
  const auto c = setup(short_lockin(0.0), LognormalModel{0.02, 0.2}, 200, 2, std::nullopt);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  for (const Payoff& p : {Payoff::portfolio(), Payoff::put(1.0)}) {
    const double eu = price_european(c.spec, chain, c.grid, p).price;
    EXPECT_LT(rel(price_lockin_homogeneous(c.spec, chain, c.grid, p).price, eu), 1e-12);
  }
}

TEST(LockIn, DegreeZeroConstantIsDiscounted) {
  const auto c = setup(short_lockin(0.75), LognormalModel{0.02, 0.2}, 200, 2, std::nullopt);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  auto one = constant(1.0);
  one.alpha = 0.0;
  EXPECT_LT(rel(price_lockin_homogeneous(c.spec, chain, c.grid, one).price, std::exp(-0.06)), 1e-9);
}

TEST(LockIn, AbsoluteDistributionIsNormalized) {
  const auto c = setup(short_lockin(0.75), LognormalModel{0.02, 0.2}, 200, 2, std::nullopt);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  const Vector psi = lockin_terminal_distribution(c.spec, chain, c.grid);
  EXPECT_NEAR(psi.sum(), 1.0, 1e-9);
  // the portfolio value does not depend on how the guarantee ratchets
  const double from_psi = price_from_distribution(c.spec, c.grid, psi, Payoff::portfolio());
  const double homogeneous = price_lockin_homogeneous(c.spec, chain, c.grid, Payoff::portfolio()).price;
  EXPECT_LT(rel(from_psi, homogeneous), 2e-3);
  EXPECT_LT(rel(homogeneous, 1.0), 2e-3);
}

TEST(LockIn, ZeroFractionDistributionMatchesPlainPropagation) {
  const auto c = setup(short_lockin(0.0), LognormalModel{0.02, 0.2}, 150, 2, std::nullopt);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  const Vector psi = lockin_terminal_distribution(c.spec, chain, c.grid);
  const Vector plain = forward_distribution(c.spec, chain, c.grid).back();
  EXPECT_LT((psi - plain).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BinMasses, PartitionTheDistribution) {
  const auto c = setup(short_put(), scenario::flat_put_model(), 200, 2);
  MatrixChain chain(c.spec, c.model, c.grid, 2);
  const Vector term = forward_distribution(c.spec, chain, c.grid).back();
  const auto bins = bin_masses(c.spec, c.grid, term, {0.5, 0.8, 1.0, 1.5, 3.0});
  ASSERT_EQ(bins.size(), 6u);
  double total = 0.0;
  for (double b : bins) {
    EXPECT_GE(b, 0.0);
    total += b;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

TEST(Chain, RejectsMismatchedSchedules) {
  const auto c = setup(short_put(), scenario::flat_put_model(), 100, 2);
  auto other = c.spec;
  other.schedule = Schedule::uniform(2.0, 12);
  MatrixChain chain(other, c.model, c.grid, 2);
  EXPECT_THROW(price_european(c.spec, chain, c.grid, Payoff::put(1.0)), ConfigError);
}

TEST(MakeGrid, OptimalGridPricesCloseToParametric) {
  const auto spec = short_put();
  const auto model = scenario::flat_put_model();
  const auto put = Payoff::put(1.0);
  auto price = [&](std::size_t n, bool optimal) {
    const Grid g = make_grid(spec, model, put, n, 3, optimal);
    MatrixChain chain(spec, model, g, 3);
    return price_european(spec, chain, g, put).price;
  };
  const double ref = price(1600, false);
  EXPECT_LT(std::abs(price(800, true) - ref), 1e-3 * ref);
  EXPECT_THROW(make_grid(spec, model, put, 301, 3, false), ConfigError);
}
