#pragma once

// CPPI contract terms: curve, schedule, risky-asset weighting, fees, lock-in, payoffs.
// Portfolio values are normalized by the guarantee in force (x = C/G).

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cppi/error.hpp"

namespace cppi {

/// Deterministic risk-free curve: flat, or piecewise-constant forward rates.
/// Times are year-fractions from the valuation date.
class DiscountCurve {
 public:
  static DiscountCurve flat(double rate) { return DiscountCurve({}, {rate}); }

  /// rates[i] applies on [ends[i-1], ends[i]); the last rate extends to infinity.
  static DiscountCurve piecewise(std::vector<double> ends, std::vector<double> rates) {
    if (rates.size() != ends.size() + 1)
      throw ConfigError("piecewise curve needs one more rate than segment ends");
    for (std::size_t i = 0; i < ends.size(); ++i) {
      if (!(ends[i] > (i ? ends[i - 1] : 0.0))) throw ConfigError("curve segment ends must be increasing and positive");
    }
    for (double r : rates)
      if (!std::isfinite(r)) throw ConfigError("curve rates must be finite");
    return DiscountCurve(std::move(ends), std::move(rates));
  }

  /// int_0^t f(u) du
  double integrated_rate(double t) const {
    double acc = 0.0, prev = 0.0;
    for (std::size_t i = 0; i < ends_.size(); ++i) {
      if (t <= ends_[i]) return acc + rates_[i] * (t - prev);
      acc += rates_[i] * (ends_[i] - prev);
      prev = ends_[i];
    }
    return acc + rates_.back() * (t - prev);
  }

  /// Discount factor from t2 back to t1 (t1 <= t2).
  double discount(double t1, double t2) const { return std::exp(-(integrated_rate(t2) - integrated_rate(t1))); }

  /// Accrual of the risk-free asset from t1 to t2.
  double growth(double t1, double t2) const { return 1.0 / discount(t1, t2); }

  /// Average continuously-compounded rate over [t1, t2].
  double average_rate(double t1, double t2) const {
    return (integrated_rate(t2) - integrated_rate(t1)) / (t2 - t1);
  }

  bool is_flat() const { return ends_.empty(); }
  const std::vector<double>& segment_ends() const { return ends_; }
  const std::vector<double>& rates() const { return rates_; }

 private:
  DiscountCurve(std::vector<double> ends, std::vector<double> rates) : ends_(std::move(ends)), rates_(std::move(rates)) {}
  std::vector<double> ends_;
  std::vector<double> rates_;
};

/// Rebalancing dates t_0 < ... < t_n and the lock-in subset (indices, containing 0 and n).
class Schedule {
 public:
  explicit Schedule(std::vector<double> dates, std::vector<std::size_t> lockin = {}) : dates_(std::move(dates)) {
    if (dates_.size() < 2) throw ScheduleError("schedule needs at least two dates");
    for (std::size_t i = 1; i < dates_.size(); ++i)
      if (!(dates_[i] > dates_[i - 1])) throw ScheduleError("schedule dates must be strictly increasing");
    if (!lockin.empty()) {
      std::sort(lockin.begin(), lockin.end());
      lockin.erase(std::unique(lockin.begin(), lockin.end()), lockin.end());
      if (lockin.front() != 0 || lockin.back() != periods())
        throw ScheduleError("lock-in indices must contain 0 and n");
    }
    lockin_ = std::move(lockin);
  }

  /// n equal periods of length maturity / n starting at 0.
  static Schedule uniform(double maturity, std::size_t periods) {
    if (periods == 0 || !(maturity > 0.0)) throw ScheduleError("uniform schedule needs periods > 0 and maturity > 0");
    std::vector<double> d(periods + 1);
    for (std::size_t i = 0; i <= periods; ++i) d[i] = maturity * static_cast<double>(i) / static_cast<double>(periods);
    return Schedule(std::move(d));
  }

  Schedule with_lockin_every(std::size_t step) const {
    if (step == 0 || periods() % step != 0) throw ScheduleError("lock-in step must divide the number of periods");
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i <= periods(); i += step) idx.push_back(i);
    return Schedule(dates_, std::move(idx));
  }

  std::size_t periods() const { return dates_.size() - 1; }
  double date(std::size_t i) const { return dates_.at(i); }
  double start() const { return dates_.front(); }
  double maturity() const { return dates_.back(); }
  double period_length(std::size_t i) const { return dates_.at(i + 1) - dates_.at(i); }
  const std::vector<double>& dates() const { return dates_; }
  const std::vector<std::size_t>& lockin_indices() const { return lockin_; }
  bool has_lockin() const { return !lockin_.empty(); }

 private:
  std::vector<double> dates_;
  std::vector<std::size_t> lockin_;
};

/// Zero-coupon price B(t) of the unit guarantee paid at maturity.
inline double natural_floor(const DiscountCurve& curve, double t, double maturity) {
  if (t > maturity) throw ScheduleError("floor requested after maturity");
  return curve.discount(t, maturity);
}

struct Floor {
  enum class Kind { natural, linear };
  Kind kind = Kind::natural;
  double start_level = 0.0;  // linear floors: level at t_0, reaching 1 at t_n

  static Floor natural() { return {Kind::natural, 0.0}; }
  static Floor linear(double start) { return {Kind::linear, start}; }

  double value(const DiscountCurve& curve, const Schedule& sched, double t) const {
    if (kind == Kind::natural) return natural_floor(curve, t, sched.maturity());
    if (t > sched.maturity()) throw ScheduleError("floor requested after maturity");
    const double u = (t - sched.start()) / (sched.maturity() - sched.start());
    return start_level + (1.0 - start_level) * u;
  }
};

/// Risky-asset weighting w = min(cap, max(m (x - H)/x, 0)), 0 for x <= 0.
struct RawRule {
  double multiplier = 4.0;
  Floor floor = Floor::natural();
  double cap = std::numeric_limits<double>::infinity();
};

inline double weight(const RawRule& rule, double floor_level, double x) {
  if (!(x > 0.0)) return 0.0;
  const double w = rule.multiplier * (x - floor_level) / x;
  if (!(w > 0.0)) return 0.0;
  return std::min(rule.cap, w);
}

struct FeeRule {
  double rate = 0.0;  // per year, deducted at each rebalancing date t_i, i >= 1
};

/// Portfolio value after deducting proportional fees accrued over dt.
inline double apply_fee(const FeeRule& fee, double x, double dt) {
  if (dt < 0.0) throw ConfigError("fee period must be non-negative");
  if (fee.rate * dt >= 1.0) throw ConfigError("fee rate * dt must be < 1");
  return x * (1.0 - fee.rate * dt);
}

/// Ratchet G' / G = 1 + lambda (y - x)^+ with x = C(l_I)/G(l_I), y = C(l_I+1)/G(l_I).
struct LockInRule {
  double fraction = 0.0;
};

inline double lockin_f(const LockInRule& rule, double x, double y) {
  return 1.0 + rule.fraction * std::max(y - x, 0.0);
}

enum class PayoffKind { portfolio, put, call, table };
enum class Exercise { european, bermudan };

/// Payoff on the normalized portfolio x = C/G: P(C, G) = G^alpha * payoff(x).
struct Payoff {
  PayoffKind kind = PayoffKind::portfolio;
  double strike = 1.0;  // fraction of the guarantee
  Exercise exercise = Exercise::european;
  double alpha = 1.0;
  std::vector<std::pair<double, double>> table;  // (x, value), sorted by x

  static Payoff portfolio() { return {}; }
  static Payoff put(double k) { return with_strike(PayoffKind::put, k); }
  static Payoff call(double k) { return with_strike(PayoffKind::call, k); }
  static Payoff piecewise_linear(std::vector<std::pair<double, double>> pts) {
    if (pts.size() < 2) throw ConfigError("payoff table needs at least two points");
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i)
      if (!(pts[i].first > pts[i - 1].first)) throw ConfigError("payoff table abscissae must be distinct");
    Payoff p;
    p.kind = PayoffKind::table;
    p.table = std::move(pts);
    return p;
  }

  double operator()(double x) const {
    switch (kind) {
      case PayoffKind::portfolio: return x;
      case PayoffKind::put: return std::max(strike - x, 0.0);
      case PayoffKind::call: return std::max(x - strike, 0.0);
      case PayoffKind::table: break;
    }
    // flat extrapolation outside the table
    if (x <= table.front().first) return table.front().second;
    if (x >= table.back().first) return table.back().second;
    const auto it = std::upper_bound(table.begin(), table.end(), x,
                                     [](double v, const auto& p) { return v < p.first; });
    const auto& [x1, y1] = *it;
    const auto& [x0, y0] = *(it - 1);
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
  }

  static Payoff with_strike(PayoffKind kind, double k) {
    Payoff p;
    p.kind = kind;
    p.strike = k;
    return p;
  }

  /// Location of the payoff's main kink, if any.
  std::optional<double> kink() const {
    if (kind == PayoffKind::put || kind == PayoffKind::call) return strike;
    return std::nullopt;
  }

  void validate() const {
    if (strike < 0.0) throw ConfigError("strike must be non-negative");
    if (!std::isfinite(alpha)) throw ConfigError("alpha must be finite");
  }
};

/// Full strategy description. Amounts are in currency; internal state is C/G.
struct StrategySpec {
  Schedule schedule = Schedule::uniform(1.0, 1);
  DiscountCurve curve = DiscountCurve::flat(0.0);
  RawRule rule;
  FeeRule fee;
  std::optional<LockInRule> lockin;
  double initial_value = 1.0;  // C(t_0)
  double guarantee = 1.0;      // G(t_0)

  double x0() const { return initial_value / guarantee; }
  double floor_at(std::size_t i) const { return rule.floor.value(curve, schedule, schedule.date(i)); }
  /// Bond accrual B(t_{i+1}) / B(t_i).
  double bond_growth(std::size_t i) const { return curve.growth(schedule.date(i), schedule.date(i + 1)); }
  double fee_factor(std::size_t i) const { return 1.0 - fee.rate * schedule.period_length(i); }
  /// Grid scale s_i = B(t_i)/B(t_0) times the fee factors of the periods before t_i.
  /// A position held in bonds keeps a constant value in these units.
  double scale(std::size_t i) const {
    double s = curve.growth(schedule.start(), schedule.date(i));
    for (std::size_t k = 0; k < i; ++k) s *= fee_factor(k);
    return s;
  }
  /// Floor in base coordinates, H(t_i) / s_i. The natural floor is formed directly as
  /// B(t_0)/B(t_n) over the fee factors so that, without fees, every period sees the same
  /// bits and node classification (riskless or not) never depends on rounding.
  double floor_base(std::size_t i) const {
    if (rule.floor.kind != Floor::Kind::natural) return floor_at(i) / scale(i);
    double f = curve.discount(schedule.start(), schedule.maturity());
    for (std::size_t k = 0; k < i; ++k) f /= fee_factor(k);
    return f;
  }
  bool has_lockin() const { return lockin.has_value() && schedule.has_lockin(); }

  void validate() const {
    if (!(rule.multiplier > 0.0)) throw ConfigError("multiplier must be positive");
    if (!(rule.cap > 0.0)) throw ConfigError("cap must be positive");
    if (rule.floor.kind == Floor::Kind::linear && !(rule.floor.start_level > 0.0))
      throw ConfigError("linear floor start level must be positive");
    if (fee.rate < 0.0) throw ConfigError("fee rate must be non-negative");
    for (std::size_t i = 0; i < schedule.periods(); ++i)
      if (fee.rate * schedule.period_length(i) >= 1.0) throw ConfigError("fee rate * dt must be < 1");
    if (!(initial_value > 0.0)) throw ConfigError("initial value must be positive");
    if (!(guarantee > 0.0)) throw ConfigError("guarantee must be positive");
    if (lockin && (lockin->fraction < 0.0 || lockin->fraction > 1.0))
      throw ConfigError("lock-in fraction must lie in [0, 1]");
    if (lockin && !schedule.has_lockin()) throw ConfigError("lock-in rule given without lock-in dates");
  }
};

}  // namespace cppi
