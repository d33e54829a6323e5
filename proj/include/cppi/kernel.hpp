#pragma once

// Moment-matched transition matrices between rebalancing dates.
//
// In base coordinates one period maps x to y = a R + b with
//   a = w x / g  (risky notional),  b = (1 - w) x  (riskless part),
// g the bond accrual and R the gross return. The fee factor F cancels because
// the grid scale carries it. A target node h_k is reached at R = X_k = (h_k - b) / a.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "cppi/error.hpp"
#include "cppi/grid.hpp"
#include "cppi/market_models.hpp"
#include "cppi/parallel.hpp"
#include "cppi/product.hpp"

namespace cppi {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Deterministic data of one period in base coordinates.
struct PeriodGeometry {
  double dt = 0.0;
  double rate = 0.0;        // average forward rate over the period
  double growth = 1.0;      // B(t_{i+1}) / B(t_i)
  double fee_factor = 1.0;  // F = 1 - fee * dt
  double floor_base = 0.0;  // H(t_i) / s_i
  double multiplier = 1.0;
  double cap = math::kInf;

  /// Risky notional a and riskless part b of the row starting at base value x.
  std::pair<double, double> split(double x) const {
    double w = 0.0;
    if (x > 0.0) w = std::min(cap, std::max(multiplier * (x - floor_base) / x, 0.0));
    return {w * x / growth, (1.0 - w) * x};
  }

  bool same_as(const PeriodGeometry& o) const {
    auto eq = [](double u, double v) { return u == v || std::abs(u - v) <= 1e-12 * std::max(std::abs(u), std::abs(v)); };
    return eq(dt, o.dt) && eq(rate, o.rate) && eq(growth, o.growth) && eq(fee_factor, o.fee_factor) &&
           eq(floor_base, o.floor_base) && multiplier == o.multiplier && cap == o.cap;
  }
};

inline PeriodGeometry period_geometry(const StrategySpec& spec, std::size_t i) {
  const auto& sch = spec.schedule;
  if (i >= sch.periods()) throw ScheduleError("period index beyond the schedule");
  PeriodGeometry p;
  p.dt = sch.period_length(i);
  p.rate = spec.curve.average_rate(sch.date(i), sch.date(i + 1));
  p.growth = spec.bond_growth(i);
  p.fee_factor = spec.fee_factor(i);
  p.floor_base = spec.floor_base(i);
  p.multiplier = spec.rule.multiplier;
  p.cap = spec.rule.cap;
  return p;
}

/// Gross-return threshold X_jk at which node j at t_i reaches node k at t_{i+1}.
/// Undefined (throws) on the riskless branch.
inline double threshold(const StrategySpec& spec, const Grid& grid, std::size_t i, std::size_t j, std::size_t k) {
  const auto [a, b] = period_geometry(spec, i).split(grid[j]);
  if (!(a > 0.0)) throw ConfigError("zero risky notional: riskless row has no threshold");
  return (grid[k] - b) / a;
}

/// Per-interval moments of one risky row, in return space.
/// Interval k is [X_k, X_{k+1}); dp[n][k] = E[R^n 1{R in interval k}].
struct RowMoments {
  std::vector<double> x;
  std::array<std::vector<double>, 3> dp;
  std::array<double, 3> below{};  // R < X_0
  std::array<double, 3> above{};  // R >= X_N
};

inline RowMoments row_moments(const IncrementDistribution& dist, const std::vector<double>& h, double a, double b,
                              int max_order) {
  const std::size_t n = h.size();
  RowMoments rm;
  rm.x.resize(n);
  for (std::size_t k = 0; k < n; ++k) rm.x[k] = (h[k] - b) / a;
  for (int o = 0; o <= max_order; ++o) rm.dp[o].assign(n - 1, 0.0);

  std::array<double, 3> full{};
  for (int o = 0; o <= max_order; ++o) full[o] = dist.moment(o);
  const auto [z_lo, z_hi] = dist.trivial_outside();

  PartialMoments prev, cur;
  auto eval = [&](double z, PartialMoments& pm) {
    if (z <= z_lo || z >= z_hi) {
      const bool below_all = z <= z_lo;
      for (int o = 0; o <= max_order; ++o) {
        pm.lower[o] = below_all ? 0.0 : full[o];
        pm.upper[o] = below_all ? full[o] : 0.0;
      }
    } else {
      dist.evaluate(z, max_order, pm);
    }
  };
  eval(rm.x[0], prev);
  for (int o = 0; o <= max_order; ++o) rm.below[o] = prev.lower[o];
  for (std::size_t k = 0; k + 1 < n; ++k) {
    eval(rm.x[k + 1], cur);
    // difference the tail that is small on this interval
    const bool use_upper = prev.lower[0] > 0.5;
    for (int o = 0; o <= max_order; ++o)
      rm.dp[o][k] = use_upper ? prev.upper[o] - cur.upper[o] : cur.lower[o] - prev.lower[o];
    prev = cur;
  }
  for (int o = 0; o <= max_order; ++o) rm.above[o] = prev.upper[o];
  // Far from the row's scale adjacent thresholds can agree to machine precision;
  // keep each interval's mass non-negative and its mean inside the interval.
  for (std::size_t k = 0; k + 1 < n; ++k) {
    double& q = rm.dp[0][k];
    q = std::max(q, 0.0);
    if (max_order >= 1) rm.dp[1][k] = std::clamp(rm.dp[1][k], rm.x[k] * q, rm.x[k + 1] * q);
  }
  return rm;
}

/// Two-point split of interval k: plus[k] goes to node k, minus[k] to node k+1.
/// plus + minus = Q and plus h_k + minus h_{k+1} = a Q1 + b Q.
struct Order2Split {
  std::vector<double> plus, minus;
};

inline Order2Split order2_split(const RowMoments& rm) {
  const std::size_t m = rm.dp[0].size();
  Order2Split s;
  s.plus.resize(m);
  s.minus.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    const double q = rm.dp[0][k], q1 = rm.dp[1][k];
    const double lo = rm.x[k], hi = rm.x[k + 1];
    if (!(hi > lo) || q == 0.0) {
      s.plus[k] = q;
      s.minus[k] = 0.0;
    } else if (q1 - lo * q <= hi * q - q1) {  // measured from the nearer end to limit cancellation
      s.minus[k] = (q1 - lo * q) / (hi - lo);
      s.plus[k] = q - s.minus[k];
    } else {
      s.plus[k] = (hi * q - q1) / (hi - lo);
      s.minus[k] = q - s.plus[k];
    }
  }
  return s;
}

struct RowDiagnostics {
  double negative_mass = 0.0;
  std::size_t negative_entries = 0;
  bool fell_back = false;
};

namespace detail {

inline constexpr double kMaxPairConditioning = 1e8;

// Three-point weights on (c - dm, c, c + dp) matching mass mu0 and centred moments mu1, mu2.
inline std::array<double, 3> three_point(double mu0, double mu1, double mu2, double dm, double dp) {
  const double wp = (mu2 + dm * mu1) / (dp * (dp + dm));
  const double wm = (mu2 - dp * mu1) / (dm * (dp + dm));
  return {wm, mu0 - wm - wp, wp};
}

inline void dirac_row(const std::vector<double>& h, double y, int order, std::span<double> row) {
  const std::size_t n = h.size();
  if (y <= h.front()) {
    row[0] += 1.0;
    return;
  }
  if (y >= h.back()) {
    row[n - 1] += 1.0;
    return;
  }
  auto k = static_cast<std::size_t>(std::upper_bound(h.begin(), h.end(), y) - h.begin()) - 1;
  if (h[k] == y) {  // the riskless roll of a node: exact in base coordinates
    row[k] += 1.0;
    return;
  }
  if (order == 2) {
    const double t = (y - h[k]) / (h[k + 1] - h[k]);
    row[k] += 1.0 - t;
    row[k + 1] += t;
    return;
  }
  const std::size_t l = k - k % 2;  // left end of the pair
  const double c = h[l + 1], e = y - c;
  const auto w = three_point(1.0, e, e * e, c - h[l], h[l + 2] - c);
  for (int i = 0; i < 3; ++i) row[l + i] += w[i];
}

inline void risky_row(const IncrementDistribution& dist, const std::vector<double>& h, double a, double b, int order,
                      std::span<double> row) {
  const RowMoments rm = row_moments(dist, h, a, b, order == 3 ? 2 : 1);
  const std::size_t n = h.size();
  row[0] += rm.below[0];
  row[n - 1] += rm.above[0];
  if (order == 2) {
    const Order2Split s = order2_split(rm);
    for (std::size_t k = 0; k + 1 < n; ++k) {
      row[k] += s.plus[k];
      row[k + 1] += s.minus[k];
    }
    return;
  }
  const Order2Split s2 = order2_split(rm);
  for (std::size_t l = 0; l + 2 < n; l += 2) {
    const double xl = rm.x[l], xc = rm.x[l + 1], xr = rm.x[l + 2];
    const double p0 = rm.dp[0][l] + rm.dp[0][l + 1];
    if (p0 == 0.0) continue;
    if (!(xc > xl) || !(xr > xc)) {
      row[l] += p0;
      continue;
    }
    // The centred second moment is formed by cancellation with relative error ~ eps * kappa;
    // pairs too narrow in return space to resolve it keep the two-point split.
    const double kappa = xc * xc / ((xc - xl) * (xr - xc));
    if (kappa > kMaxPairConditioning) {
      row[l] += s2.plus[l];
      row[l + 1] += s2.minus[l] + s2.plus[l + 1];
      row[l + 2] += s2.minus[l + 1];
      continue;
    }
    const double p1 = rm.dp[1][l] + rm.dp[1][l + 1];
    const double p2 = rm.dp[2][l] + rm.dp[2][l + 1];
    const double nu1 = p1 - xc * p0;
    const double nu2 = p2 - 2.0 * xc * p1 + xc * xc * p0;
    const auto w = three_point(p0, nu1, nu2, xc - xl, xr - xc);
    for (int i = 0; i < 3; ++i) row[l + i] += w[i];
  }
}

}  // namespace detail

/// Most negative mass a three-point match can put on a pair of equal halves: a point
/// mass at a quarter of the pair gets weight -1/8 on the far node, and any law is a
/// mixture of point masses. Rows beyond it come from a broken pair and fall back.
inline constexpr double kMaxPairNegativeMass = 0.125;

/// One row of the transition matrix from base node value x; `notional_scale`
/// multiplies the risky notional (used for delta bumps).
inline RowDiagnostics assemble_row(const IncrementDistribution& dist, const PeriodGeometry& geo,
                                   const std::vector<double>& h, double x, int order, std::span<double> row,
                                   double notional_scale = 1.0,
                                   double fallback_threshold = kMaxPairNegativeMass * (1.0 + 1e-9)) {
  if (order != 2 && order != 3) throw UnsupportedOrder("scheme order must be 2 or 3");
  if (order == 3 && (h.size() - 1) % 2 != 0) throw GridError("order-3 scheme needs an even number of intervals");
  RowDiagnostics diag;
  auto [a, b] = geo.split(x);
  a *= notional_scale;
  auto build = [&](int o) {
    std::fill(row.begin(), row.end(), 0.0);
    if (a > 0.0)
      detail::risky_row(dist, h, a, b, o, row);
    else
      detail::dirac_row(h, b, o, row);
  };
  build(order);
  if (order == 3) {
    double neg = 0.0, total = 0.0;
    for (double v : row) {
      total += v;
      if (v < 0.0) neg -= v;
    }
    if (neg > fallback_threshold * total) {
      diag.fell_back = true;
      build(2);
    }
  }
  for (double v : row) {
    if (v < 0.0) {
      diag.negative_mass -= v;
      ++diag.negative_entries;
    }
  }
  return diag;
}

struct MatrixDiagnostics {
  double negative_mass = 0.0;  // summed over rows
  double max_row_negative_mass = 0.0;
  std::size_t negative_entries = 0;
  std::size_t fallback_rows = 0;

  MatrixDiagnostics& operator+=(const MatrixDiagnostics& o) {
    negative_mass += o.negative_mass;
    max_row_negative_mass = std::max(max_row_negative_mass, o.max_row_negative_mass);
    negative_entries += o.negative_entries;
    fallback_rows += o.fallback_rows;
    return *this;
  }
};

/// Dense (N+1) x (N+1) transition operator between dates t_from and t_to.
struct TransitionMatrix {
  Matrix m;
  std::size_t from = 0, to = 0;  // schedule indices
  int order = 2;
  std::shared_ptr<const std::vector<double>> nodes;
  MatrixDiagnostics diagnostics;

  std::size_t size() const { return static_cast<std::size_t>(m.rows()); }

  void write_csv(std::ostream& os, const std::vector<double>& dates) const {
    os.precision(17);
    os << "# from=" << dates.at(from) << " to=" << dates.at(to) << " N=" << size() - 1 << " order=" << order << '\n';
    for (Eigen::Index j = 0; j < m.rows(); ++j) {
      for (Eigen::Index k = 0; k < m.cols(); ++k) os << (k ? "," : "") << m(j, k);
      os << '\n';
    }
  }
};

inline IncrementDistribution period_distribution(const Model& model, const StrategySpec& spec, std::size_t i) {
  const auto& sch = spec.schedule;
  return IncrementDistribution(with_rate(model, spec.curve.average_rate(sch.date(i), sch.date(i + 1))), sch.date(i),
                               sch.date(i + 1));
}

inline TransitionMatrix assemble(const IncrementDistribution& dist, const PeriodGeometry& geo,
                                 std::shared_ptr<const std::vector<double>> nodes, int order, std::size_t from,
                                 std::size_t workers = worker_count()) {
  const auto& h = *nodes;
  const std::size_t n = h.size();
  TransitionMatrix tm;
  tm.m.setZero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  tm.from = from;
  tm.to = from + 1;
  tm.order = order;
  tm.nodes = nodes;
  std::vector<RowDiagnostics> diags(n);
  parallel_for(
      0, n,
      [&](std::size_t j) {
        std::span<double> row(tm.m.data() + j * n, n);
        diags[j] = assemble_row(dist, geo, h, h[j], order, row);
      },
      workers);
  for (const auto& d : diags) {
    tm.diagnostics.negative_mass += d.negative_mass;
    tm.diagnostics.max_row_negative_mass = std::max(tm.diagnostics.max_row_negative_mass, d.negative_mass);
    tm.diagnostics.negative_entries += d.negative_entries;
    tm.diagnostics.fallback_rows += d.fell_back;
  }
  return tm;
}

inline TransitionMatrix assemble_order2(const StrategySpec& spec, const Model& model, const Grid& grid, std::size_t i) {
  return assemble(period_distribution(model, spec, i), period_geometry(spec, i),
                  std::make_shared<const std::vector<double>>(grid.nodes), 2, i);
}

inline TransitionMatrix assemble_order3(const StrategySpec& spec, const Model& model, const Grid& grid, std::size_t i) {
  return assemble(period_distribution(model, spec, i), period_geometry(spec, i),
                  std::make_shared<const std::vector<double>>(grid.nodes), 3, i);
}

/// Matrix product over consecutive periods.
inline TransitionMatrix compose(const std::vector<const TransitionMatrix*>& ms) {
  if (ms.empty()) throw CompositionError("nothing to compose");
  TransitionMatrix out = *ms.front();
  for (std::size_t q = 1; q < ms.size(); ++q) {
    const auto& next = *ms[q];
    if (next.from != out.to) throw CompositionError("transition matrices do not chain in time");
    if (next.size() != out.size() || (next.nodes && out.nodes && *next.nodes != *out.nodes))
      throw CompositionError("transition matrices live on different grids");
    out.m = out.m * next.m;
    out.to = next.to;
    out.diagnostics += next.diagnostics;
  }
  return out;
}

/// Builds period matrices on demand; consecutive periods with identical
/// geometry share one matrix.
class MatrixChain {
 public:
  MatrixChain(const StrategySpec& spec, const Model& model, const Grid& grid, int order)
      : spec_(spec), model_(model), nodes_(std::make_shared<const std::vector<double>>(grid.nodes)), order_(order) {
    if (order != 2 && order != 3) throw UnsupportedOrder("scheme order must be 2 or 3");
    for (std::size_t i = 0; i < spec.schedule.periods(); ++i) geo_.push_back(period_geometry(spec, i));
  }

  std::size_t periods() const { return geo_.size(); }
  int order() const { return order_; }
  const std::vector<double>& nodes() const { return *nodes_; }
  const PeriodGeometry& geometry(std::size_t i) const { return geo_.at(i); }
  std::size_t builds() const { return builds_; }
  const MatrixDiagnostics& diagnostics() const { return diag_; }

  bool homogeneous(std::size_t first, std::size_t last) const {
    for (std::size_t i = first + 1; i < last; ++i)
      if (!geo_[i].same_as(geo_[first])) return false;
    return true;
  }

  /// Matrix of period i (from t_i to t_{i+1}).
  const TransitionMatrix& at(std::size_t i) {
    if (i >= geo_.size()) throw ScheduleError("period index beyond the schedule");
    if (!cached_ || !geo_[cached_index_].same_as(geo_[i])) {
      cached_ = assemble(period_distribution(model_, spec_, i), geo_[i], nodes_, order_, i);
      cached_index_ = i;
      ++builds_;
      diag_ += cached_->diagnostics;
    }
    cached_->from = i;
    cached_->to = i + 1;
    return *cached_;
  }

  IncrementDistribution distribution(std::size_t i) const { return period_distribution(model_, spec_, i); }

  /// Product of the period matrices over [first, last); squaring when homogeneous.
  TransitionMatrix composite(std::size_t first, std::size_t last) {
    if (!(last > first)) throw CompositionError("empty composition range");
    if (homogeneous(first, last)) {
      const TransitionMatrix& base = at(first);
      Matrix result, power = base.m;
      bool have = false;
      for (std::size_t e = last - first; e > 0; e >>= 1) {
        if (e & 1u) {
          result = have ? Matrix(result * power) : power;
          have = true;
        }
        if (e > 1) power = power * power;
      }
      TransitionMatrix out = base;
      out.m = std::move(result);
      out.from = first;
      out.to = last;
      return out;
    }
    TransitionMatrix out = at(first);
    for (std::size_t i = first + 1; i < last; ++i) {
      const TransitionMatrix& next = at(i);
      out.m = out.m * next.m;
      out.to = i + 1;
    }
    return out;
  }

 private:
  const StrategySpec& spec_;
  Model model_;
  std::shared_ptr<const std::vector<double>> nodes_;
  int order_;
  std::vector<PeriodGeometry> geo_;
  std::optional<TransitionMatrix> cached_;
  std::size_t cached_index_ = 0;
  std::size_t builds_ = 0;
  MatrixDiagnostics diag_;
};

namespace detail {

/// Adds `mass` at position z onto the two bracketing nodes, preserving the mean.
inline void rebin(const std::vector<double>& h, double z, double mass, double* row) {
  const std::size_t n = h.size();
  if (z <= h.front()) {
    row[0] += mass;
    return;
  }
  if (z >= h.back()) {
    row[n - 1] += mass;
    return;
  }
  const auto k = static_cast<std::size_t>(std::upper_bound(h.begin(), h.end(), z) - h.begin()) - 1;
  const double t = (z - h[k]) / (h[k + 1] - h[k]);
  row[k] += (1.0 - t) * mass;
  row[k + 1] += t * mass;
}

}  // namespace detail

/// Lock-in ratchet factors f(x_j, y_l) over one lock-in period, actual values x = s_from h_j, y = s_to h_l.
inline Matrix lockin_factors(const std::vector<double>& h, const LockInRule& rule, double s_from, double s_to) {
  const auto n = static_cast<Eigen::Index>(h.size());
  Matrix f(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index l = 0; l < n; ++l) f(j, l) = lockin_f(rule, s_from * h[j], s_to * h[l]);
  return f;
}

/// Kernel over one lock-in period in the guarantee-relative state: mass f^alpha M_jl
/// placed at h_l / f and re-binned with two-point mean-preserving weights.
inline TransitionMatrix lockin_transform(const TransitionMatrix& composite, const LockInRule& rule, double s_from,
                                         double s_to, double alpha = 1.0) {
  const auto& h = *composite.nodes;
  const auto n = static_cast<Eigen::Index>(h.size());
  TransitionMatrix out = composite;
  out.m.setZero();
  parallel_for(0, h.size(), [&](std::size_t jj) {
    const auto j = static_cast<Eigen::Index>(jj);
    double* row = out.m.data() + j * n;
    const double x = s_from * h[jj];
    for (Eigen::Index l = 0; l < n; ++l) {
      const double mass = composite.m(j, l);
      if (mass == 0.0) continue;
      const double f = lockin_f(rule, x, s_to * h[l]);
      if (f == 1.0)
        row[l] += mass;
      else
        detail::rebin(h, h[l] / f, std::pow(f, alpha) * mass, row);
    }
  });
  return out;
}

}  // namespace cppi
