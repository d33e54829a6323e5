#pragma once

// Backward induction and forward propagation on the transition-matrix chain.
// Value vectors hold derivative values per unit guarantee^alpha on the grid
// nodes; distributions hold probability masses on the nodes.

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <vector>

#include "cppi/grid.hpp"
#include "cppi/kernel.hpp"
#include "cppi/product.hpp"

namespace cppi {

struct PriceResult {
  double price = 0.0;
  std::vector<Vector> values;             // V^{(i)}, i = 0..n, when requested
  std::vector<std::vector<char>> exercise;  // Bermudan: exercise flags per date, when requested
  MatrixDiagnostics diagnostics;
};

namespace detail {

inline Vector payoff_on_grid(const Payoff& payoff, const std::vector<double>& h, double scale) {
  Vector v(static_cast<Eigen::Index>(h.size()));
  for (std::size_t k = 0; k < h.size(); ++k) v[static_cast<Eigen::Index>(k)] = payoff(scale * h[k]);
  return v;
}

inline void check_chain(const StrategySpec& spec, const MatrixChain& chain) {
  if (chain.periods() != spec.schedule.periods()) throw ConfigError("matrix chain does not cover the schedule");
}

}  // namespace detail

/// Backward induction V^{(i)} = DF_i M^{(i)} V^{(i+1)}; Bermudan styles take the node-wise
/// max with immediate exercise at every date including t_0. Holding to maturity is always
/// admissible, so the Bermudan value is also floored by the European one carried alongside:
/// order-3 rows may hold small negative weights, which would otherwise let the max lose
/// a few ulps-times-N against the European run.
inline PriceResult price_backward(const StrategySpec& spec, MatrixChain& chain, const Grid& grid, const Payoff& payoff,
                                  bool keep = false) {
  detail::check_chain(spec, chain);
  const std::size_t n = spec.schedule.periods();
  const bool bermudan = payoff.exercise == Exercise::bermudan;
  const auto& h = grid.nodes;
  PriceResult res;
  if (keep) {
    res.values.resize(n + 1);
    if (bermudan) res.exercise.resize(n + 1);
  }
  Vector v = detail::payoff_on_grid(payoff, h, spec.scale(n));
  Vector eu;
  if (bermudan) eu = v;
  if (keep) res.values[n] = v;
  for (std::size_t i = n; i-- > 0;) {
    const TransitionMatrix& m = chain.at(i);
    v = (m.m * v) / spec.bond_growth(i);
    if (bermudan) {
      eu = (m.m * eu) / spec.bond_growth(i);
      v = v.cwiseMax(eu);
      const Vector ex = detail::payoff_on_grid(payoff, h, spec.scale(i));
      std::vector<char> flags;
      if (keep) flags.assign(h.size(), 0);
      for (Eigen::Index k = 0; k < v.size(); ++k) {
        if (ex[k] > v[k]) {
          v[k] = ex[k];
          if (keep) flags[static_cast<std::size_t>(k)] = 1;
        }
      }
      if (keep) res.exercise[i] = std::move(flags);
    }
    if (keep) res.values[i] = v;
  }
  res.price = std::pow(spec.guarantee, payoff.alpha) * v[static_cast<Eigen::Index>(grid.j0)];
  res.diagnostics = chain.diagnostics();
  return res;
}

inline PriceResult price_european(const StrategySpec& spec, MatrixChain& chain, const Grid& grid, Payoff payoff,
                                  bool keep = false) {
  payoff.exercise = Exercise::european;
  return price_backward(spec, chain, grid, payoff, keep);
}

inline PriceResult price_bermudan(const StrategySpec& spec, MatrixChain& chain, const Grid& grid, Payoff payoff,
                                  bool keep = false) {
  payoff.exercise = Exercise::bermudan;
  return price_backward(spec, chain, grid, payoff, keep);
}

/// Distribution of C(t_i)/G in base coordinates at t_n; all dates when `all` is set.
inline std::vector<Vector> forward_distribution(const StrategySpec& spec, MatrixChain& chain, const Grid& grid,
                                                bool all = false) {
  detail::check_chain(spec, chain);
  const std::size_t n = spec.schedule.periods();
  Vector p = Vector::Zero(static_cast<Eigen::Index>(grid.size()));
  p[static_cast<Eigen::Index>(grid.j0)] = 1.0;
  std::vector<Vector> out;
  if (all) out.push_back(p);
  for (std::size_t i = 0; i < n; ++i) {
    p = chain.at(i).m.transpose() * p;
    if (all) out.push_back(p);
  }
  if (!all) out.push_back(std::move(p));
  return out;
}

/// Holds composite matrices over lock-in periods; recomputes only when the block geometry changes.
class LockinBlocks {
 public:
  LockinBlocks(const StrategySpec& spec, MatrixChain& chain) : spec_(spec), chain_(chain) {
    if (!spec.has_lockin()) throw ConfigError("strategy has no lock-in rule");
    idx_ = spec.schedule.lockin_indices();
  }

  std::size_t blocks() const { return idx_.size() - 1; }
  std::size_t start(std::size_t b) const { return idx_[b]; }
  std::size_t end(std::size_t b) const { return idx_[b + 1]; }

  const TransitionMatrix& composite(std::size_t b) {
    const std::size_t lo = idx_[b], hi = idx_[b + 1];
    bool reuse = cached_ && cached_len_ == hi - lo;
    for (std::size_t i = lo; reuse && i < hi; ++i)
      reuse = chain_.geometry(i).same_as(chain_.geometry(cached_lo_ + (i - lo)));
    if (!reuse) {
      cached_ = chain_.composite(lo, hi);
      cached_lo_ = lo;
      cached_len_ = hi - lo;
    }
    cached_->from = lo;
    cached_->to = hi;
    return *cached_;
  }

  double discount(std::size_t b) const {
    return spec_.curve.discount(spec_.schedule.date(idx_[b]), spec_.schedule.date(idx_[b + 1]));
  }

 private:
  const StrategySpec& spec_;
  MatrixChain& chain_;
  std::vector<std::size_t> idx_;
  std::optional<TransitionMatrix> cached_;
  std::size_t cached_lo_ = 0, cached_len_ = 0;
};

/// Homogeneous payoff G^alpha P~(C/G) under profit lock-in, priced in the
/// guarantee-relative state with the transformed kernels. Bermudan exercise at lock-in dates.
inline PriceResult price_lockin_homogeneous(const StrategySpec& spec, MatrixChain& chain, const Grid& grid,
                                            const Payoff& payoff) {
  detail::check_chain(spec, chain);
  LockinBlocks blocks(spec, chain);
  const auto& h = grid.nodes;
  const std::size_t n = spec.schedule.periods();
  Vector v = detail::payoff_on_grid(payoff, h, spec.scale(n));
  for (std::size_t b = blocks.blocks(); b-- > 0;) {
    const TransitionMatrix& comp = blocks.composite(b);
    const TransitionMatrix mt = lockin_transform(comp, *spec.lockin, spec.scale(blocks.start(b)),
                                                 spec.scale(blocks.end(b)), payoff.alpha);
    v = blocks.discount(b) * (mt.m * v);
    if (payoff.exercise == Exercise::bermudan) v = v.cwiseMax(detail::payoff_on_grid(payoff, h, spec.scale(blocks.start(b))));
  }
  PriceResult res;
  res.price = std::pow(spec.guarantee, payoff.alpha) * v[static_cast<Eigen::Index>(grid.j0)];
  res.diagnostics = chain.diagnostics();
  return res;
}

namespace detail {

// out += mass * (distribution `src` pushed through y -> f y, re-binned on h)
inline void push_scaled(const std::vector<double>& h, const double* src, double f, double mass, double* out) {
  const std::size_t n = h.size();
  std::size_t k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double p = src[q];
    if (p == 0.0) continue;
    const double z = f * h[q];
    if (z <= h.front()) {
      out[0] += mass * p;
      continue;
    }
    if (z >= h.back()) {
      out[n - 1] += mass * p;
      continue;
    }
    while (k + 2 < n && h[k + 1] <= z) ++k;
    while (k > 0 && h[k] > z) --k;
    const double t = (z - h[k]) / (h[k + 1] - h[k]);
    out[k] += (1.0 - t) * mass * p;
    out[k + 1] += t * mass * p;
  }
}

}  // namespace detail

/// Terminal distribution of C(t_n)/G(t_0) (base coordinates at t_n) under lock-in,
/// via the absolute-scale operator Psi_I(x, .) = sum_l M(x, l) f Psi_{I+1}(h_l / f, . / f).
inline Vector lockin_terminal_distribution(const StrategySpec& spec, MatrixChain& chain, const Grid& grid) {
  detail::check_chain(spec, chain);
  LockinBlocks blocks(spec, chain);
  const auto& h = grid.nodes;
  const auto n = static_cast<Eigen::Index>(h.size());
  // After a ratchet at t_e a state at or below every remaining floor is riskless for good:
  // later ratchets only lower it, and its base value, hence its absolute terminal value, is
  // fixed. Such mass stays on its pre-ratchet node instead of being re-binned twice.
  const std::size_t periods = spec.schedule.periods();
  std::vector<double> riskless_to(periods + 1, math::kInf);
  for (std::size_t i = periods; i-- > 0;)
    riskless_to[i] = std::min(riskless_to[i + 1], spec.floor_base(i));
  Matrix psi = Matrix::Identity(n, n);
  for (std::size_t b = blocks.blocks(); b-- > 0;) {
    const TransitionMatrix& comp = blocks.composite(b);
    const double s_from = spec.scale(blocks.start(b)), s_to = spec.scale(blocks.end(b));
    const double riskless = riskless_to[blocks.end(b)];
    // rows where the guarantee is unchanged reduce to a plain product
    Matrix plain = comp.m;
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index l = 0; l < n; ++l)
        if (lockin_f(*spec.lockin, s_from * h[j], s_to * h[l]) != 1.0) plain(j, l) = 0.0;
    Matrix next = plain * psi;
    parallel_for(0, h.size(), [&](std::size_t jj) {
      const auto j = static_cast<Eigen::Index>(jj);
      std::vector<double> interp(h.size());
      double* out = next.data() + j * n;
      for (Eigen::Index l = 0; l < n; ++l) {
        const double mass = comp.m(j, l);
        if (std::abs(mass) < 1e-20) continue;
        const double f = lockin_f(*spec.lockin, s_from * h[jj], s_to * h[l]);
        if (f == 1.0) continue;
        const double z = h[l] / f;
        if (z <= riskless) {
          out[l] += mass;
          continue;
        }
        std::size_t k = grid.locate(z);
        double t = (z - h[k]) / (h[k + 1] - h[k]);
        t = std::clamp(t, 0.0, 1.0);
        const double* r0 = psi.data() + static_cast<Eigen::Index>(k) * n;
        const double* r1 = r0 + n;
        for (Eigen::Index q = 0; q < n; ++q) interp[q] = (1.0 - t) * r0[q] + t * r1[q];
        detail::push_scaled(h, interp.data(), f, mass, out);
      }
    });
    psi = std::move(next);
  }
  return psi.row(static_cast<Eigen::Index>(grid.j0)).transpose();
}

/// Price of G0^alpha P~(C(t_n)/G0) from a terminal distribution of C(t_n)/G0 in base coordinates.
inline double price_from_distribution(const StrategySpec& spec, const Grid& grid, const Vector& terminal,
                                      const Payoff& payoff) {
  const std::size_t n = spec.schedule.periods();
  const Vector v = detail::payoff_on_grid(payoff, grid.nodes, spec.scale(n));
  return std::pow(spec.guarantee, payoff.alpha) * spec.curve.discount(spec.schedule.start(), spec.schedule.maturity()) *
         terminal.dot(v);
}

/// Terminal density for plotting, in actual C/G units at t_n: mass / dual cell width.
/// On bisected grids the order-3 masses alternate 1:2 between even and odd nodes
/// (overlapping three-point pairs), so the masses are first smoothed 1-2-1.
struct DensityPoint {
  double x;
  double density;
};

inline std::vector<DensityPoint> terminal_density(const StrategySpec& spec, const Grid& grid, const Vector& terminal) {
  const double s = spec.scale(spec.schedule.periods());
  const auto w = dual_widths(grid.nodes);
  const std::size_t n = grid.size();
  std::vector<DensityPoint> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    double m = terminal[static_cast<Eigen::Index>(k)];
    if (grid.midpoints && k > 0 && k + 1 < n)
      m = 0.5 * m + 0.25 * (terminal[static_cast<Eigen::Index>(k - 1)] + terminal[static_cast<Eigen::Index>(k + 1)]);
    out[k] = {s * grid[k], m / (s * w[k])};
  }
  return out;
}

/// Probability of each bin [edges_k, edges_{k+1}) of actual C(t_n)/G0. Every node mass is
/// spread uniformly over its dual cell, or on bisected grids over [h_{k-1}, h_{k+1}], the
/// span its three-point pairs represent. Returns bins followed by mass below and above.
inline std::vector<double> bin_masses(const StrategySpec& spec, const Grid& grid, const Vector& terminal,
                                      const std::vector<double>& edges) {
  const double s = spec.scale(spec.schedule.periods());
  const std::size_t n = grid.size(), bins = edges.size() - 1;
  std::vector<double> out(bins + 2, 0.0);
  const auto cell = [&](std::size_t k) -> std::pair<double, double> {
    if (grid.midpoints) return {grid[k == 0 ? 0 : k - 1], grid[k + 1 == n ? k : k + 1]};
    return {k == 0 ? grid[0] : 0.5 * (grid[k - 1] + grid[k]), k + 1 == n ? grid[k] : 0.5 * (grid[k] + grid[k + 1])};
  };
  const auto cdf_at = [&](double v) {  // lattice cdf at actual value v
    double c = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const auto [lo, hi] = cell(k);
      const double m = terminal[static_cast<Eigen::Index>(k)];
      if (v >= s * hi) c += m;
      else if (v > s * lo) c += m * (v - s * lo) / (s * (hi - lo));
    }
    return c;
  };
  std::vector<double> cdf(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) cdf[e] = cdf_at(edges[e]);
  for (std::size_t k = 0; k < bins; ++k) out[k] = cdf[k + 1] - cdf[k];
  out[bins] = cdf.front();
  out[bins + 1] = terminal.sum() - cdf.back();
  return out;
}

/// Sensitivity to the underlying at t_0 per unit of initial risky exposure:
/// (P(+eps) - P(-eps)) / (2 eps w_0 C_0), bumping the first-period risky notional.
/// Needs the value vector at t_1 from a kept backward run.
inline double delta(const StrategySpec& spec, MatrixChain& chain, const Grid& grid, const Payoff& payoff,
                    const PriceResult& run, double eps = 1e-4) {
  if (run.values.size() != spec.schedule.periods() + 1) throw ConfigError("delta needs a run with kept value vectors");
  const PeriodGeometry geo = chain.geometry(0);
  const double x0 = grid[grid.j0];
  const double w0 = weight(spec.rule, spec.floor_at(0), x0);
  if (w0 == 0.0) return 0.0;
  const IncrementDistribution dist = chain.distribution(0);
  const auto& h = grid.nodes;
  const Vector& v1 = run.values[1];
  std::vector<double> row(h.size());
  double p[2];
  for (int side = 0; side < 2; ++side) {
    const double scale = side == 0 ? 1.0 + eps : 1.0 - eps;
    assemble_row(dist, geo, h, x0, chain.order(), row, scale);
    double cont = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) cont += row[k] * v1[static_cast<Eigen::Index>(k)];
    cont /= spec.bond_growth(0);
    if (payoff.exercise == Exercise::bermudan) cont = std::max(cont, payoff(x0));
    p[side] = std::pow(spec.guarantee, payoff.alpha) * cont;
  }
  return (p[0] - p[1]) / (2.0 * eps * w0 * spec.initial_value);
}

/// Coarse run feeding the optimal grid: value vectors and forward distributions at every date.
inline PilotRun run_pilot(const StrategySpec& spec, const Model& model, const Payoff& payoff, const Grid& pilot_grid,
                          int order) {
  MatrixChain chain(spec, model, pilot_grid, order);
  PilotRun pilot;
  pilot.grid = pilot_grid;
  const auto dists = forward_distribution(spec, chain, pilot_grid, true);
  const auto run = price_european(spec, chain, pilot_grid, payoff, true);
  const std::size_t n = spec.schedule.periods();
  for (std::size_t i = 0; i <= n; ++i) {
    pilot.values.emplace_back(run.values[i].data(), run.values[i].data() + run.values[i].size());
    pilot.distributions.emplace_back(dists[i].data(), dists[i].data() + dists[i].size());
    pilot.discounts.push_back(spec.curve.discount(spec.schedule.start(), spec.schedule.date(i)));
    pilot.scales.push_back(spec.scale(i));
  }
  return pilot;
}

/// Grid for a run: parametric, or optimal from a parametric pilot at max(100, N/5).
inline Grid make_grid(const StrategySpec& spec, const Model& model, const Payoff& payoff, std::size_t n, int order,
                      bool optimal, const GridOptions& opt = {}) {
  if (order == 3 && n % 2 != 0) throw ConfigError("order-3 scheme needs an even N");
  GridOptions o = opt;
  o.midpoints = order == 3;
  Grid param = strategy_grid(spec, model, payoff.kink(), n, o);
  if (!optimal) return param;
  std::size_t np = std::max<std::size_t>(100, n / 5);
  np += np % 2;
  const Grid pilot_grid = strategy_grid(spec, model, payoff.kink(), np, o);
  const PilotRun pilot = run_pilot(spec, model, payoff, pilot_grid, order);
  SnapTargets snap{spec.x0(), std::nullopt};
  if (const auto k = payoff.kink(); k && *k > 0.0) snap.kink = *k / spec.scale(spec.schedule.periods());
  return optimal_grid(pilot, n, order, snap, param);
}

}  // namespace cppi
