#pragma once

// Discretization grids for the normalized portfolio value.
//
// Nodes are stored in base coordinates: the value at date t_i of node j is
// scale(i) * nodes[j], scale(i) = B(t_i)/B(t_0) net of fees charged so far.
// With a zero rate and no fee this is the plain C/G grid.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <utility>
#include <vector>

// Boost 1.74's pchip calls isnan unqualified.
namespace boost::math::interpolators {
using std::isnan;
}
#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/tools/roots.hpp>

#include "cppi/error.hpp"
#include "cppi/market_models.hpp"
#include "cppi/math.hpp"
#include "cppi/product.hpp"

namespace cppi {

struct Bounds {
  double lower = 0.0;
  double upper = 0.0;
};

struct Span {
  double lo = 0.0;
  double hi = 0.0;
  double shift = 0.0;  // the central region is log-linear in v - shift
};

/// Node fractions per region; the central share is what remains.
struct Split {
  double lower = 0.15;
  double upper = 0.15;
};

/// Node generator g(x) on the global coordinate x in [-1, 1]:
/// shift + a e^{bx} on [x_lo, x_hi], c + d e^{f x^2} outside. C1 at x_lo and x_hi.
struct ParametricMap {
  double a = 1.0, b = 0.0, shift = 0.0;
  double x_lo = -1.0, x_hi = 1.0;
  double c_lo = 0.0, d_lo = 0.0, f_lo = 0.0;
  double c_hi = 0.0, d_hi = 0.0, f_hi = 0.0;
  bool has_lower = false, has_upper = false;

  double central(double x) const { return shift + a * std::exp(b * x); }

  double value(double x) const {
    if (has_lower && x < x_lo) return c_lo + d_lo * std::exp(f_lo * x * x);
    if (has_upper && x > x_hi) return c_hi + d_hi * std::exp(f_hi * x * x);
    return central(x);
  }

  double slope(double x) const {
    if (has_lower && x < x_lo) return 2.0 * f_lo * x * d_lo * std::exp(f_lo * x * x);
    if (has_upper && x > x_hi) return 2.0 * f_hi * x * d_hi * std::exp(f_hi * x * x);
    return b * a * std::exp(b * x);
  }
};

struct Grid {
  enum class Kind { parametric, optimal };

  std::vector<double> nodes;  // base coordinates, strictly increasing
  std::size_t j0 = 0;         // nodes[j0] == C(t_0)/G
  Kind kind = Kind::parametric;
  std::optional<ParametricMap> map;  // describes the even nodes when `midpoints` is set
  bool midpoints = false;            // odd nodes are exact midpoints of their neighbours

  std::size_t size() const { return nodes.size(); }
  std::size_t intervals() const { return nodes.size() - 1; }
  double operator[](std::size_t j) const { return nodes[j]; }
  double lower() const { return nodes.front(); }
  double upper() const { return nodes.back(); }

  void validate() const {
    if (nodes.size() < 3) throw GridError("grid needs at least two intervals");
    for (std::size_t j = 1; j < nodes.size(); ++j) {
      const double scale = std::max({std::abs(nodes[j]), std::abs(nodes[j - 1]), 1e-300});
      if (!(nodes[j] - nodes[j - 1] > 1e-12 * scale)) throw GridError("grid nodes must be strictly increasing");
    }
    if (j0 >= nodes.size()) throw GridError("initial node index out of range");
  }

  /// Index of the interval [h_k, h_{k+1}) containing v, clamped to [0, N-1].
  std::size_t locate(double v) const {
    const auto it = std::upper_bound(nodes.begin(), nodes.end(), v);
    const auto k = static_cast<std::ptrdiff_t>(it - nodes.begin()) - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(intervals()) - 1));
  }

  void write_csv(std::ostream& os, double scale = 1.0) const {
    os << "j,h\n";
    os.precision(17);
    for (std::size_t j = 0; j < nodes.size(); ++j) os << j << ',' << scale * nodes[j] << '\n';
  }
};

/// Widths of the cells dual to the nodes (half intervals at the ends); they sum to h_N - h_0.
inline std::vector<double> dual_widths(const std::vector<double>& h) {
  const std::size_t n = h.size();
  std::vector<double> w(n);
  w[0] = 0.5 * (h[1] - h[0]);
  w[n - 1] = 0.5 * (h[n - 1] - h[n - 2]);
  for (std::size_t j = 1; j + 1 < n; ++j) w[j] = 0.5 * (h[j + 1] - h[j - 1]);
  return w;
}

/// p-th derivative estimates (p = 2 or 3) at every node from non-uniform divided differences.
/// Interior second derivatives use the three-point stencil, ends the nearest one-sided window.
inline std::vector<double> finite_difference(const std::vector<double>& x, const std::vector<double>& f, int p) {
  const std::size_t n = x.size();
  if (p < 2 || p > 3) throw UnsupportedOrder("finite differences implemented for orders 2 and 3");
  if (n < static_cast<std::size_t>(p + 1)) throw GridError("too few nodes for finite differences");
  // p! times the divided difference over x[s..s+p]
  auto dd = [&](std::size_t s) {
    double c[4];
    for (int i = 0; i <= p; ++i) c[i] = f[s + i];
    for (int lvl = 1; lvl <= p; ++lvl)
      for (int i = p; i >= lvl; --i) c[i] = (c[i] - c[i - 1]) / (x[s + i] - x[s + i - lvl]);
    return (p == 2 ? 2.0 : 6.0) * c[p];
  };
  std::vector<double> d(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (p == 2) {
      const std::size_t s = std::clamp<std::size_t>(k == 0 ? 0 : k - 1, 0, n - 3);
      d[k] = dd(s);
    } else {
      // average the two windows touching k when both exist
      const std::size_t s1 = std::min(k == 0 ? 0 : k - 1, n - 4);
      const std::size_t s2 = std::min(k < 2 ? 0 : k - 2, n - 4);
      d[k] = s1 == s2 ? dd(s1) : 0.5 * (dd(s1) + dd(s2));
    }
  }
  return d;
}

namespace detail {

inline double norm_tail_quantile() { return math::norm_upper_quantile(1e-20); }

/// Solve (e^{f D} - 1)/f = target for f; the left side increases from 0 to infinity.
inline double solve_glue_exponent(double delta, double target) {
  if (!(target > 0.0) || !std::isfinite(target)) throw GridError("infeasible C1 glue: non-positive gap");
  auto fn = [&](double f) { return delta * math::expm1_over_x(f * delta) - target; };
  double lo = -1.0, hi = 1.0;
  while (fn(lo) > 0.0) lo *= 2.0;
  while (fn(hi) < 0.0) hi *= 2.0;
  boost::uintmax_t iters = 200;
  auto r = boost::math::tools::toms748_solve(fn, lo, hi, boost::math::tools::eps_tolerance<double>(50), iters);
  return 0.5 * (r.first + r.second);
}

inline double global_x(std::size_t j, std::size_t n) {
  return (static_cast<double>(j) - 0.5 * static_cast<double>(n)) / (0.5 * static_cast<double>(n));
}

}  // namespace detail

/// Grid bounds in base coordinates from the continuous-time CPPI law with natural floor:
/// the discounted cushion is lognormal with volatility m * sigma_effective.
inline Bounds default_bounds(const StrategySpec& spec, double sigma_effective) {
  const double m = spec.rule.multiplier;
  const double h0 = spec.floor_at(0);
  const double x0 = spec.x0();
  const double cushion = x0 > h0 ? x0 - h0 : 0.5 * std::abs(x0);
  const double base = x0 > h0 ? h0 : x0 - cushion;
  if (sigma_effective <= 0.0) {
    // a riskless position is constant in base coordinates
    return {x0 - cushion, x0 + cushion};
  }
  const double t = spec.schedule.maturity() - spec.schedule.start();
  const double v = m * sigma_effective * std::sqrt(t);
  const double q = std::exp(-0.5 * v * v + v * detail::norm_tail_quantile());
  const double upper = base + cushion * q;
  return {(1.0 - m) * upper, upper};
}

/// Values the central region must contain, in base coordinates: every floor value,
/// the terminal guarantee and the payoff kink. In these units the floor path is a
/// narrow band, and the value function bends sharply along it.
inline Span central_span(const StrategySpec& spec, std::optional<double> kink) {
  const std::size_t n = spec.schedule.periods();
  const double guarantee = 1.0 / spec.scale(n);
  double lo = std::min(guarantee, spec.x0()), hi = std::max(guarantee, spec.x0());
  for (std::size_t i = 0; i <= n; ++i) {
    const double h = spec.floor_base(i);
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  if (kink && *kink > 0.0) {
    lo = std::min(lo, *kink / spec.scale(n));
    hi = std::max(hi, *kink / spec.scale(n));
  }
  return {lo, hi};
}

struct SnapTargets {
  double x0 = 1.0;
  std::optional<double> kink;  // placed on an even node
};

/// Three-region grid with N intervals (N + 1 nodes). The central region
/// a e^{bx} runs from span.lo to span.hi. Inside it x0 is placed exactly on a node
/// by adjusting a and the kink on an even node by adjusting b; without x0 the kink
/// fixes a. An x0 outside the central region replaces its nearest node.
inline Grid build_parametric(Bounds bounds, Span span, std::size_t n, Split split, SnapTargets snap) {
  if (n < 16) throw GridError("parametric grid needs N >= 16");
  if (!(span.lo > span.shift) || !(span.hi > span.lo))
    throw GridError("central span must be non-empty and lie above its shift");
  if (split.lower < 0.0 || split.upper < 0.0 || split.lower + split.upper >= 1.0)
    throw GridError("region fractions must leave a central region");
  // e^{f x^2} has zero slope at x = 0, so each outer region must stay on its side of the centre
  if (split.lower >= 0.5 || split.upper >= 0.5) throw GridError("each outer region fraction must be below 0.5");

  ParametricMap g;
  g.has_lower = split.lower > 0.0;
  g.has_upper = split.upper > 0.0;
  if (g.has_lower && !(bounds.lower < span.lo)) throw GridError("lower bound inside the central span");
  if (g.has_upper && !(bounds.upper > span.hi)) throw GridError("upper bound inside the central span");
  g.x_lo = -1.0 + 2.0 * split.lower;
  g.x_hi = 1.0 - 2.0 * split.upper;
  g.shift = span.shift;
  const auto rel = [&](double v) { return v - g.shift; };
  g.b = std::log(rel(span.hi) / rel(span.lo)) / (g.x_hi - g.x_lo);
  g.a = rel(span.lo) * std::exp(-g.b * g.x_lo);

  const auto position = [&](double v) {  // fractional node index of v in the central region
    const double x = std::log(rel(v) / g.a) / g.b;
    return (x + 1.0) * 0.5 * static_cast<double>(n);
  };
  const bool x0_inside = snap.x0 >= span.lo && snap.x0 <= span.hi;
  const bool kink_on_grid = snap.kink && *snap.kink > 0.0;
  const bool kink_inside = kink_on_grid && *snap.kink >= span.lo && *snap.kink <= span.hi;
  const bool kink_at_x0 = kink_on_grid && std::abs(*snap.kink / snap.x0 - 1.0) < 1e-12;
  std::size_t j0 = 0;
  if (x0_inside) {
    const double u0 = position(snap.x0);
    j0 = kink_at_x0 ? 2 * static_cast<std::size_t>(std::llround(0.5 * u0)) : static_cast<std::size_t>(std::llround(u0));
    if (kink_inside && !kink_at_x0) {
      // pick the even kink node that disturbs the log-slope least
      const double uk = position(*snap.kink);
      const double dk = std::log(rel(*snap.kink) / rel(snap.x0));
      double best_b = g.b, best_err = math::kInf;
      const auto base = 2 * static_cast<long long>(std::floor(0.5 * uk));
      for (long long cand = base - 2; cand <= base + 4; cand += 2) {
        if (cand < 0 || cand > static_cast<long long>(n) || cand == static_cast<long long>(j0)) continue;
        const double b = dk / (detail::global_x(static_cast<std::size_t>(cand), n) - detail::global_x(j0, n));
        if (!(b > 0.0)) continue;
        const double err = std::abs(b / g.b - 1.0);
        if (err < best_err) best_err = err, best_b = b;
      }
      g.b = best_b;
    }
    g.a = rel(snap.x0) * std::exp(-g.b * detail::global_x(j0, n));
  } else if (kink_inside) {
    const auto jk = 2 * static_cast<std::size_t>(std::llround(0.5 * position(*snap.kink)));
    g.a = rel(*snap.kink) * std::exp(-g.b * detail::global_x(jk, n));
  }

  // C1 glue: with D = s/(2 f x*) the end condition reduces to one equation in f
  if (g.has_upper) {
    const double hi = g.central(g.x_hi), s = g.slope(g.x_hi), delta = 1.0 - g.x_hi * g.x_hi;
    g.f_hi = detail::solve_glue_exponent(delta, (bounds.upper - hi) * 2.0 * g.x_hi / s);
    const double dd = s / (2.0 * g.f_hi * g.x_hi);
    g.d_hi = dd * std::exp(-g.f_hi * g.x_hi * g.x_hi);
    g.c_hi = hi - dd;
  }
  if (g.has_lower) {
    const double lo = g.central(g.x_lo), s = g.slope(g.x_lo), delta = 1.0 - g.x_lo * g.x_lo;
    g.f_lo = detail::solve_glue_exponent(delta, (lo - bounds.lower) * 2.0 * -g.x_lo / s);
    const double dd = s / (2.0 * g.f_lo * g.x_lo);
    g.d_lo = dd * std::exp(-g.f_lo * g.x_lo * g.x_lo);
    g.c_lo = lo - dd;
  }

  Grid grid;
  grid.kind = Grid::Kind::parametric;
  grid.nodes.resize(n + 1);
  for (std::size_t j = 0; j <= n; ++j) grid.nodes[j] = g.value(detail::global_x(j, n));
  if (x0_inside) grid.nodes[j0] = snap.x0;
  if (g.has_lower) grid.nodes.front() = bounds.lower;
  if (g.has_upper) grid.nodes.back() = bounds.upper;
  std::optional<std::size_t> jk;
  if (kink_on_grid) {
    const std::size_t k = grid.locate(*snap.kink);
    const std::size_t pick = std::abs(grid.nodes[k] - *snap.kink) <= std::abs(grid.nodes[k + 1] - *snap.kink) ? k : k + 1;
    if (pick % 2 == 0 && std::abs(grid.nodes[pick] / *snap.kink - 1.0) < 1e-9) {
      grid.nodes[pick] = *snap.kink;
      jk = pick;
    }
  }
  if (!x0_inside) {
    // outside the central region x0 replaces its nearest interior node
    if (!(snap.x0 > grid.lower() && snap.x0 < grid.upper())) throw GridError("initial value outside the grid bounds");
    const std::size_t k = grid.locate(snap.x0);
    j0 = snap.x0 - grid.nodes[k] <= grid.nodes[k + 1] - snap.x0 ? k : k + 1;
    if (jk && j0 == *jk && !kink_at_x0) j0 = snap.x0 > *snap.kink ? j0 + 1 : j0 - 1;
    j0 = std::clamp<std::size_t>(j0, 1, n - 1);
    grid.nodes[j0] = snap.x0;
  }
  grid.j0 = j0;
  grid.map = g;
  grid.validate();
  return grid;
}

/// Grid with every interval bisected: 2N intervals whose odd nodes are exact
/// midpoints, the carrier of the order-3 scheme.
inline Grid with_midpoints(const Grid& coarse) {
  Grid g;
  g.kind = coarse.kind;
  g.map = coarse.map;
  g.midpoints = true;
  g.nodes.reserve(2 * coarse.intervals() + 1);
  for (std::size_t m = 0; m < coarse.intervals(); ++m) {
    g.nodes.push_back(coarse[m]);
    g.nodes.push_back(0.5 * (coarse[m] + coarse[m + 1]));
  }
  g.nodes.push_back(coarse.upper());
  g.j0 = 2 * coarse.j0;
  g.validate();
  return g;
}

struct GridOptions {
  Split split{0.10, 0.40};
  double padding = 0.02;   // relative widening of the central span above its top value
  bool midpoints = false;  // build N/2 parametric intervals and bisect them (order 3)
  double cushion_level = 1e-6;       // kinkless grids: lower quantile of the terminal cushion to resolve
  double kinked_resolution = 1e-2;   // kinked payoffs: smallest resolved cushion, as a fraction
};

/// Smallest cushion the central region resolves, as a fraction of the initial cushion:
/// the `level` quantile of the continuous-time discounted cushion, a lognormal with
/// volatility m sigma sqrt(T). Clamped so the log-spacing stays usable.
inline double cushion_resolution(const StrategySpec& spec, double sigma_effective, double level) {
  const double t = spec.schedule.maturity() - spec.schedule.start();
  const double v = spec.rule.multiplier * sigma_effective * std::sqrt(t);
  const double q = std::exp(-0.5 * v * v - v * math::norm_upper_quantile(level));
  return std::clamp(q, 1e-8, 1e-2);
}

/// Upper quantile of the underlying's gross return over the whole horizon at the
/// bound's tail level, relative to the forward. Jump laws have exponential tails that
/// the lognormal bound cannot see; 1 for a lognormal model.
inline double horizon_jump_factor(const StrategySpec& spec, const Model& model) {
  const auto* kou = std::get_if<KouModel>(&model);
  if (!kou || !(kou->lambda_up > 0.0 && kou->eta_up > 0.0)) return 1.0;
  const IncrementDistribution inc(model, spec.schedule.start(), spec.schedule.maturity());
  const double fwd = inc.moment(1);
  const double level = 1e-20;
  double lo = std::log(fwd), hi = lo + 1.0;
  while (inc.upper_partial_moment(0, std::exp(hi)) > level && hi < lo + 200.0) hi += 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (inc.upper_partial_moment(0, std::exp(mid)) > level ? lo : hi) = mid;
  }
  return std::max(1.0, std::exp(hi) / fwd);
}

/// Parametric grid for a strategy: default bounds, a central span starting at the lowest
/// floor value and log-linear in the cushion above it, snapped x0 and strike.
inline Grid strategy_grid(const StrategySpec& spec, const Model& model, std::optional<double> kink, std::size_t n,
                          const GridOptions& opt = {}) {
  const double sigma = std::sqrt(variance_rate(model));
  Bounds b = default_bounds(spec, sigma);
  if (const double jump = horizon_jump_factor(spec, model); jump > 1.0) {
    // the diffusive bound or a single leveraged jump, which multiplies the cushion by 1 + m (jump - 1)
    const double m = spec.rule.multiplier;
    const double h0 = spec.floor_at(0), x0 = spec.x0();
    const double base = x0 > h0 ? h0 : x0 - 0.5 * std::abs(x0);  // as in default_bounds
    b.upper = std::max(b.upper, base + (x0 - base) * (1.0 + m * (jump - 1.0)));
    b.lower = (1.0 - m) * b.upper;
  }
  Span s = central_span(spec, kink);
  // A multiplicative cushion piles up just above the floor, so nodes cluster there
  // geometrically. A kinked payoff is linear across that pile (the kink is snapped
  // separately), so only a grid serving the distribution itself resolves it to its tail.
  const bool kinked = kink && *kink > 0.0;
  const double resolution = kinked ? opt.kinked_resolution : cushion_resolution(spec, sigma, opt.cushion_level);
  const double cushion = std::max(s.hi - s.lo, 1e-3 * std::max(std::abs(s.hi), 1.0));
  s.shift = s.lo - cushion * resolution;
  s.hi += opt.padding * (s.hi - s.shift);
  const double width = s.hi - s.lo;
  const double top = std::max(s.hi, spec.x0()), bottom = std::min(s.lo, spec.x0());
  if (!(b.upper > top)) b.upper = top + width;
  if (!(b.lower < bottom)) b.lower = bottom - width;
  SnapTargets snap{spec.x0(), std::nullopt};
  if (kinked) snap.kink = *kink / spec.scale(spec.schedule.periods());
  if (!opt.midpoints) return build_parametric(b, s, n, opt.split, snap);
  if (n % 2 != 0) throw GridError("a bisected grid needs an even N");
  return with_midpoints(build_parametric(b, s, n / 2, opt.split, snap));
}

/// Data from a coarse run used to place the nodes of the optimal grid.
struct PilotRun {
  Grid grid;
  std::vector<std::vector<double>> values;         // V^{(i)} on the pilot nodes, i = 0..n
  std::vector<std::vector<double>> distributions;  // mass of C(t_i)/G from j0, i = 0..n
  std::vector<double> discounts;                   // discount factor t_0 -> t_i
  std::vector<double> scales;                       // grid scale s_i
};

/// rho_k = |sum_i disc_i density_i(k) D^p V^{(i)}(k)| on the pilot nodes.
inline std::vector<double> weighted_curvature(const PilotRun& pilot, int p) {
  const auto& h = pilot.grid.nodes;
  if (pilot.values.empty() || pilot.values.size() != pilot.distributions.size())
    throw GridError("pilot run missing value or distribution vectors");
  const auto w = dual_widths(h);
  std::vector<double> acc(h.size(), 0.0), x(h.size());
  for (std::size_t i = 0; i < pilot.values.size(); ++i) {
    const double s = pilot.scales[i];
    for (std::size_t k = 0; k < h.size(); ++k) x[k] = s * h[k];
    const auto d = finite_difference(x, pilot.values[i], p);
    for (std::size_t k = 0; k < h.size(); ++k)
      acc[k] += pilot.discounts[i] * pilot.distributions[i][k] / (s * w[k]) * d[k];
  }
  for (auto& v : acc) v = std::abs(v);
  return acc;
}

/// Equidistribute the node density rho^{1/p} (floored at 1% of its maximum in pilot
/// index space) into N intervals; order 3 builds N/2 coarse intervals and inserts midpoints.
inline std::optional<Grid> grid_from_density(const std::vector<double>& pilot_nodes, const std::vector<double>& rho,
                                             std::size_t n, int p, SnapTargets snap) {
  const std::size_t np = pilot_nodes.size();
  if (rho.size() != np) throw GridError("density and pilot nodes differ in size");
  if (p == 3 && n % 2 != 0) throw GridError("order-3 grids need an even N");
  std::vector<double> nu(np), u(np);
  double peak = 0.0;
  for (std::size_t k = 0; k < np; ++k) {
    const double slope = 0.5 * (pilot_nodes[std::min(k + 1, np - 1)] - pilot_nodes[k == 0 ? 0 : k - 1]) /
                         (k == 0 || k + 1 == np ? 0.5 : 1.0);
    nu[k] = std::pow(rho[k], 1.0 / p) * slope;
    u[k] = static_cast<double>(k);
    peak = std::max(peak, nu[k]);
  }
  if (!(peak > 0.0) || !std::isfinite(peak)) return std::nullopt;
  for (auto& v : nu) v = std::max(v, 0.01 * peak);

  std::vector<double> cum(np, 0.0);
  for (std::size_t k = 1; k < np; ++k) cum[k] = cum[k - 1] + 0.5 * (nu[k] + nu[k - 1]);
  const std::size_t coarse = p == 3 ? n / 2 : n;
  std::vector<double> targets(coarse + 1);
  std::size_t k = 0;
  for (std::size_t m = 0; m <= coarse; ++m) {
    const double c = cum.back() * static_cast<double>(m) / static_cast<double>(coarse);
    while (k + 2 < np && cum[k + 1] < c) ++k;
    const double span = cum[k + 1] - cum[k];
    targets[m] = u[k] + (span > 0.0 ? (c - cum[k]) / span : 0.0);
  }
  targets.front() = 0.0;
  targets.back() = static_cast<double>(np - 1);

  boost::math::interpolators::pchip<std::vector<double>> interp{std::vector<double>(u), std::vector<double>(pilot_nodes)};
  std::vector<double> h(coarse + 1);
  for (std::size_t m = 0; m <= coarse; ++m) h[m] = interp(targets[m]);
  h.front() = pilot_nodes.front();
  h.back() = pilot_nodes.back();

  // snap onto coarse nodes: kink first, then x0 on a different node when they differ
  auto nearest = [&](double v) {
    const auto it = std::lower_bound(h.begin(), h.end(), v);
    std::size_t j = static_cast<std::size_t>(it - h.begin());
    if (j == h.size()) --j;
    if (j > 0 && std::abs(h[j - 1] - v) < std::abs(h[j] - v)) --j;
    return std::clamp<std::size_t>(j, 1, h.size() - 2);
  };
  std::optional<std::size_t> jk;
  if (snap.kink && *snap.kink > h.front() && *snap.kink < h.back()) {
    jk = nearest(*snap.kink);
    h[*jk] = *snap.kink;
  }
  std::size_t j0 = nearest(snap.x0);
  if (jk && j0 == *jk && std::abs(*snap.kink - snap.x0) > 1e-12 * std::abs(snap.x0))
    j0 = snap.x0 > *snap.kink ? j0 + 1 : j0 - 1;
  h[j0] = snap.x0;

  Grid grid;
  grid.kind = Grid::Kind::optimal;
  grid.nodes = std::move(h);
  grid.j0 = j0;
  grid.validate();
  return p == 3 ? with_midpoints(grid) : grid;
}

/// Optimal grid from a pilot run; falls back to `fallback` when the weighted curvature vanishes.
inline Grid optimal_grid(const PilotRun& pilot, std::size_t n, int p, SnapTargets snap, const Grid& fallback) {
  if (p != 2 && p != 3) throw UnsupportedOrder("scheme order must be 2 or 3");
  auto g = grid_from_density(pilot.grid.nodes, weighted_curvature(pilot, p), n, p, snap);
  return g ? std::move(*g) : fallback;
}

}  // namespace cppi
