#pragma once

// Gross-return laws S(t')/S(t) for independent-increment models.

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "cppi/error.hpp"
#include "cppi/math.hpp"

namespace cppi {

/// Black-Scholes: log-return ~ N((r - sigma^2/2) dt, sigma^2 dt).
struct LognormalModel {
  double rate = 0.0;
  double sigma = 0.0;
};

/// Kou double-exponential jump-diffusion. Upward log-jumps ~ Exp(mean eta_up),
/// downward log-jumps ~ -Exp(mean eta_down); independent Poisson legs.
struct KouModel {
  double rate = 0.0;
  double sigma = 0.0;
  double lambda_up = 0.0;
  double eta_up = 0.0;
  double lambda_down = 0.0;
  double eta_down = 0.0;

  /// sum over legs of lambda * (E[e^J] - 1); the drift is r - sigma^2/2 - this.
  double jump_compensator() const {
    double c = 0.0;
    if (lambda_up > 0.0) c += lambda_up * (1.0 / (1.0 - eta_up) - 1.0);
    if (lambda_down > 0.0) c += lambda_down * (1.0 / (1.0 + eta_down) - 1.0);
    return c;
  }
};

using Model = std::variant<LognormalModel, KouModel>;

inline double model_rate(const Model& m) {
  return std::visit([](const auto& x) { return x.rate; }, m);
}

inline Model with_rate(Model m, double rate) {
  std::visit([rate](auto& x) { x.rate = rate; }, m);
  return m;
}

/// Variance rate of the log-return per year (diffusion plus jumps).
inline double variance_rate(const Model& m) {
  struct V {
    double operator()(const LognormalModel& x) const { return x.sigma * x.sigma; }
    double operator()(const KouModel& x) const {
      return x.sigma * x.sigma + 2.0 * x.lambda_up * x.eta_up * x.eta_up +
             2.0 * x.lambda_down * x.eta_down * x.eta_down;
    }
  };
  return std::visit(V{}, m);
}

inline void validate(const Model& m) {
  struct Check {
    void operator()(const LognormalModel& x) const {
      if (!(x.sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
      if (!std::isfinite(x.rate)) throw ConfigError("rate must be finite");
    }
    void operator()(const KouModel& x) const {
      if (!(x.sigma >= 0.0)) throw ConfigError("sigma must be non-negative");
      if (!std::isfinite(x.rate)) throw ConfigError("rate must be finite");
      if (!(x.lambda_up >= 0.0) || !(x.lambda_down >= 0.0))
        throw ConfigError("jump intensities must be non-negative");
      if (!(x.eta_up >= 0.0) || !(x.eta_down >= 0.0))
        throw ConfigError("jump means must be non-negative");
      if (x.lambda_up > 0.0 && !(x.eta_up < 1.0))
        throw ConfigError("eta_up must be < 1 for a finite martingale compensator");
      const bool jumps = (x.lambda_up > 0.0 && x.eta_up > 0.0) || (x.lambda_down > 0.0 && x.eta_down > 0.0);
      if (jumps && x.sigma == 0.0) throw ConfigError("kou model with jumps requires sigma > 0");
    }
  };
  std::visit(Check{}, m);
}

/// Lower/upper partial moments of orders 0..2 at one threshold:
/// lower[n] = E[R^n 1{R < z}], upper[n] = E[R^n 1{R >= z}].
/// Each side is evaluated directly so tail values keep full relative precision.
struct PartialMoments {
  std::array<double, 3> lower{};
  std::array<double, 3> upper{};
};

namespace detail {

struct LognormalIncrement {
  double mu = 0.0;  // mean log-return over the interval
  double s = 0.0;   // stdev of the log-return

  double moment(int n) const { return std::exp(n * mu + 0.5 * n * n * s * s); }

  void evaluate(double z, int max_order, PartialMoments& out) const {
    if (s == 0.0) {
      const double r0 = std::exp(mu);
      const bool below = r0 < z;
      double p = 1.0;
      for (int n = 0; n <= max_order; ++n) {
        out.lower[n] = below ? p : 0.0;
        out.upper[n] = below ? 0.0 : p;
        p *= r0;
      }
      return;
    }
    const double y = std::log(z);
    for (int n = 0; n <= max_order; ++n) {
      const double d = (y - mu - n * s * s) / s;
      const double m = moment(n);
      out.lower[n] = m * math::norm_cdf(d);
      out.upper[n] = m * math::norm_cdf(-d);
    }
  }
};

// Law of sZ + W, W ~ Gamma(k, rate beta), through
//   P(sZ + W >= x) = Phi(-x/s) + S_k(x),  P(sZ + W < x) = Phi(x/s) - S_k(x),
// S_k(x) = sum_{i<k} beta^i/i! e^{-beta x + beta^2 s^2/2} E[V^i 1{V>0}],  V ~ N(x - beta s^2, s^2).
// Fills s_k for k = 1..kmax (index k).
inline void gamma_normal_tail_sums(double beta, double s, double x, int kmax, std::vector<double>& s_k) {
  s_k.assign(static_cast<std::size_t>(kmax) + 1, 0.0);
  if (kmax == 0) return;
  const double mu_v = x - beta * s * s;
  const double expo = -beta * x + 0.5 * beta * beta * s * s;
  double k_prev2 = 0.0;
  double k_prev = math::exp_times_norm_cdf(expo, mu_v / s);  // i = 0
  double coef = 1.0;                                        // beta^i / i!
  double acc = coef * k_prev;
  s_k[1] = acc;
  for (int i = 1; i < kmax; ++i) {
    double k_cur;
    if (i == 1)
      k_cur = mu_v * k_prev + s * math::norm_pdf(x / s);
    else
      k_cur = mu_v * k_prev + (i - 1) * s * s * k_prev2;
    k_cur = std::max(k_cur, 0.0);
    coef *= beta / i;
    acc += coef * k_cur;
    s_k[static_cast<std::size_t>(i) + 1] = acc;
    k_prev2 = k_prev;
    k_prev = k_cur;
  }
}

inline std::vector<double> truncated_poisson(double mean, double tail_tol) {
  std::vector<double> p;
  if (mean <= 0.0) return {1.0};
  double term = std::exp(-mean);
  double cum = term;
  p.push_back(term);
  for (int k = 1; k < 10000 && 1.0 - cum > tail_tol; ++k) {
    term *= mean / k;
    cum += term;
    p.push_back(term);
  }
  return p;
}

struct KouIncrement {
  double c = 0.0;  // drift of the log-return over the interval
  double s = 0.0;
  double theta_up = 0.0;    // rate of upward log-jumps (1 / eta_up)
  double theta_down = 0.0;  // rate of downward log-jumps (1 / eta_down)
  double w0 = 1.0;                 // no-jump (net) weight
  std::vector<double> alpha;       // alpha[k]: weight of +Gamma(k, theta_up), k >= 1
  std::vector<double> beta;        // beta[k]: weight of -Gamma(k, theta_down), k >= 1

  KouIncrement(const KouModel& m, double dt) {
    s = m.sigma * std::sqrt(dt);
    c = (m.rate - 0.5 * m.sigma * m.sigma - m.jump_compensator()) * dt;
    const bool up = m.lambda_up > 0.0 && m.eta_up > 0.0;
    const bool down = m.lambda_down > 0.0 && m.eta_down > 0.0;
    theta_up = up ? 1.0 / m.eta_up : 0.0;
    theta_down = down ? 1.0 / m.eta_down : 0.0;
    const auto pu = truncated_poisson(up ? m.lambda_up * dt : 0.0, 5e-13);
    const auto pd = truncated_poisson(down ? m.lambda_down * dt : 0.0, 5e-13);
    const std::size_t na = pu.size() - 1, nb = pd.size() - 1;
    alpha.assign(na + 1, 0.0);
    beta.assign(nb + 1, 0.0);

    // Partial fractions: E_up * E_down = p E_up + q E_down, so a mixed sum of
    // a up- and b down-jumps is a mixture of pure one-sided Gamma laws.
    const double p = up && down ? theta_down / (theta_up + theta_down) : 0.0;
    const double q = 1.0 - p;
    struct Mix {
      std::vector<double> up, down;
    };
    std::vector<std::vector<Mix>> w(na + 1, std::vector<Mix>(nb + 1));
    for (std::size_t a = 0; a <= na; ++a) {
      for (std::size_t b = 0; b <= nb; ++b) {
        Mix& cur = w[a][b];
        cur.up.assign(na + 1, 0.0);
        cur.down.assign(nb + 1, 0.0);
        if (a == 0 && b == 0) continue;
        if (b == 0) {
          cur.up[a] = 1.0;
        } else if (a == 0) {
          cur.down[b] = 1.0;
        } else {
          const Mix& l = w[a][b - 1];
          const Mix& r = w[a - 1][b];
          for (std::size_t k = 0; k <= na; ++k) cur.up[k] = p * l.up[k] + q * r.up[k];
          for (std::size_t k = 0; k <= nb; ++k) cur.down[k] = p * l.down[k] + q * r.down[k];
        }
      }
    }
    double total = 0.0;
    w0 = pu[0] * pd[0];
    total += w0;
    for (std::size_t a = 0; a <= na; ++a) {
      for (std::size_t b = 0; b <= nb; ++b) {
        if (a == 0 && b == 0) continue;
        const double pab = pu[a] * pd[b];
        for (std::size_t k = 1; k <= na; ++k) alpha[k] += pab * w[a][b].up[k];
        for (std::size_t k = 1; k <= nb; ++k) beta[k] += pab * w[a][b].down[k];
        total += pab;
      }
    }
    w0 /= total;
    for (auto& v : alpha) v /= total;
    for (auto& v : beta) v /= total;
  }

  int max_up() const { return static_cast<int>(alpha.size()) - 1; }
  int max_down() const { return static_cast<int>(beta.size()) - 1; }

  double moment(int n) const {
    double acc = w0;
    for (int k = 1; k <= max_up(); ++k) acc += alpha[k] * std::pow(theta_up / (theta_up - n), k);
    for (int k = 1; k <= max_down(); ++k) acc += beta[k] * std::pow(theta_down / (theta_down + n), k);
    return std::exp(n * c + 0.5 * n * n * s * s) * acc;
  }

  void evaluate(double z, int max_order, PartialMoments& out) const {
    thread_local std::vector<double> sums;
    const double y = std::log(z);
    for (int n = 0; n <= max_order; ++n) {
      const double scale = std::exp(n * c + 0.5 * n * n * s * s);
      const double yp = y - c - n * s * s;
      const double phi_lo = math::norm_cdf(yp / s);
      const double phi_hi = math::norm_cdf(-yp / s);
      double lo = w0 * phi_lo;
      double hi = w0 * phi_hi;
      if (max_up() > 0) {
        const double b = theta_up - n;
        gamma_normal_tail_sums(b, s, yp, max_up(), sums);
        double f = 1.0;
        for (int k = 1; k <= max_up(); ++k) {
          f *= theta_up / b;
          const double wk = alpha[k] * f;
          lo += wk * std::max(phi_lo - sums[k], 0.0);
          hi += wk * (phi_hi + sums[k]);
        }
      }
      if (max_down() > 0) {
        const double b = theta_down + n;
        gamma_normal_tail_sums(b, s, -yp, max_down(), sums);
        double f = 1.0;
        for (int k = 1; k <= max_down(); ++k) {
          f *= theta_down / b;
          const double wk = beta[k] * f;
          lo += wk * (phi_lo + sums[k]);
          hi += wk * std::max(phi_hi - sums[k], 0.0);
        }
      }
      out.lower[n] = scale * lo;
      out.upper[n] = scale * hi;
    }
  }
};

}  // namespace detail

/// Law of S(t')/S(t) for a model over [t, t'].
class IncrementDistribution {
 public:
  IncrementDistribution(const Model& model, double t, double t_next) : model_(model), dt_(t_next - t) {
    if (!(t_next > t)) throw ConfigError("increment interval must satisfy t' > t");
    validate(model);
    if (const auto* ln = std::get_if<LognormalModel>(&model)) {
      impl_ = detail::LognormalIncrement{(ln->rate - 0.5 * ln->sigma * ln->sigma) * dt_, ln->sigma * std::sqrt(dt_)};
    } else {
      const auto& kou = std::get<KouModel>(model);
      const bool jumps = (kou.lambda_up > 0.0 && kou.eta_up > 0.0) || (kou.lambda_down > 0.0 && kou.eta_down > 0.0);
      if (!jumps)
        impl_ = detail::LognormalIncrement{(kou.rate - 0.5 * kou.sigma * kou.sigma) * dt_, kou.sigma * std::sqrt(dt_)};
      else
        impl_ = detail::KouIncrement(kou, dt_);
      // order-2 moment exists only when upward jumps are thin enough
      second_moment_ok_ = !(kou.lambda_up > 0.0 && kou.eta_up >= 0.5);
    }
  }

  double dt() const { return dt_; }
  const Model& model() const { return model_; }

  /// P[R < z]; 0 for z <= 0.
  double cdf(double z) const { return partial_moment(0, z); }

  /// E[R^n 1{R < z}] for n in {0,1,2}.
  double partial_moment(int n, double z) const {
    check_order(n);
    if (z <= 0.0) return 0.0;
    if (std::isinf(z)) return moment(n);
    PartialMoments pm;
    evaluate(z, n, pm);
    return pm.lower[n];
  }

  /// E[R^n 1{R >= z}].
  double upper_partial_moment(int n, double z) const {
    check_order(n);
    if (z <= 0.0) return moment(n);
    if (std::isinf(z)) return 0.0;
    PartialMoments pm;
    evaluate(z, n, pm);
    return pm.upper[n];
  }

  double moment(int n) const {
    check_order(n);
    return std::visit([n](const auto& d) { return d.moment(n); }, impl_);
  }

  /// Both tails for orders 0..max_order; handles z <= 0 and z = +inf.
  void evaluate(double z, int max_order, PartialMoments& out) const {
    if (z <= 0.0 || std::isinf(z)) {
      for (int n = 0; n <= max_order; ++n) {
        const double m = std::visit([n](const auto& d) { return d.moment(n); }, impl_);
        out.lower[n] = z <= 0.0 ? 0.0 : m;
        out.upper[n] = z <= 0.0 ? m : 0.0;
      }
      return;
    }
    std::visit([&](const auto& d) { d.evaluate(z, max_order, out); }, impl_);
  }

  /// Dispatch helper so hot loops can be instantiated per concrete law.
  template <class Fn>
  decltype(auto) visit(Fn&& fn) const {
    return std::visit(std::forward<Fn>(fn), impl_);
  }

  /// Thresholds outside [lo, hi] give exactly trivial partial moments (all mass on one side).
  std::pair<double, double> trivial_outside() const {
    if (const auto* ln = std::get_if<detail::LognormalIncrement>(&impl_)) {
      if (ln->s == 0.0) return {0.0, math::kInf};
      return {std::exp(ln->mu - 40.0 * ln->s), std::exp(ln->mu + 2.0 * ln->s * ln->s + 40.0 * ln->s)};
    }
    return {0.0, math::kInf};
  }

  bool supports_order(int n) const { return n >= 0 && n <= 2 && (n < 2 || second_moment_ok_); }

 private:
  void check_order(int n) const {
    if (n < 0 || n > 2) throw UnsupportedOrder("partial moment order must be 0, 1 or 2");
    if (n == 2 && !second_moment_ok_) throw UnsupportedOrder("second moment infinite: eta_up >= 0.5");
  }

  Model model_;
  double dt_;
  bool second_moment_ok_ = true;
  std::variant<detail::LognormalIncrement, detail::KouIncrement> impl_;
};

/// One period's draws; kept separate from the gross return so antithetic
/// pairs can share jumps and flip the Gaussian.
struct ReturnDraw {
  double normal = 0.0;
  double jump_log = 0.0;
};

/// Exact sampler of S(t+dt)/S(t).
class ReturnSampler {
 public:
  ReturnSampler(const Model& model, double dt) {
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    validate(model);
    if (const auto* ln = std::get_if<LognormalModel>(&model)) {
      drift_ = (ln->rate - 0.5 * ln->sigma * ln->sigma) * dt;
      s_ = ln->sigma * std::sqrt(dt);
    } else {
      const auto& k = std::get<KouModel>(model);
      drift_ = (k.rate - 0.5 * k.sigma * k.sigma - k.jump_compensator()) * dt;
      s_ = k.sigma * std::sqrt(dt);
      const double lu = k.eta_up > 0.0 ? k.lambda_up * dt : 0.0;
      const double ld = k.eta_down > 0.0 ? k.lambda_down * dt : 0.0;
      total_intensity_ = lu + ld;
      p_up_ = total_intensity_ > 0.0 ? lu / total_intensity_ : 0.0;
      eta_up_ = k.eta_up;
      eta_down_ = k.eta_down;
      no_jump_prob_ = std::exp(-total_intensity_);
    }
  }

  template <class Rng>
  ReturnDraw draw(Rng& rng) {
    ReturnDraw d;
    if (s_ > 0.0) d.normal = normal_(rng);
    if (total_intensity_ > 0.0) {
      // inverse-cdf Poisson count from one uniform
      double u = uniform_(rng);
      int count = 0;
      double p = no_jump_prob_;
      double cum = p;
      while (u > cum && count < 1000) {
        ++count;
        p *= total_intensity_ / count;
        cum += p;
      }
      for (int i = 0; i < count; ++i) {
        const double e = exponential_(rng);
        d.jump_log += uniform_(rng) < p_up_ ? eta_up_ * e : -eta_down_ * e;
      }
    }
    return d;
  }

  double gross(const ReturnDraw& d, bool antithetic = false) const {
    return std::exp(drift_ + s_ * (antithetic ? -d.normal : d.normal) + d.jump_log);
  }

 private:
  double drift_ = 0.0;
  double s_ = 0.0;
  double total_intensity_ = 0.0;
  double p_up_ = 0.0;
  double eta_up_ = 0.0;
  double eta_down_ = 0.0;
  double no_jump_prob_ = 1.0;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::exponential_distribution<double> exponential_{1.0};
};

/// One draw of S(t+dt)/S(t) under the risk-neutral law.
template <class Rng>
double sample_return(const Model& model, double dt, Rng& rng) {
  ReturnSampler sampler(model, dt);
  return sampler.gross(sampler.draw(rng));
}

}  // namespace cppi
