#pragma once

// Path-wise Monte Carlo of the CPPI mechanics, the independent check of the lattice.
// Paths are grouped in fixed blocks with their own seeded stream, so results depend
// on (seed, paths, block size) only and not on the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "cppi/error.hpp"
#include "cppi/market_models.hpp"
#include "cppi/parallel.hpp"
#include "cppi/product.hpp"

namespace cppi {

struct McConfig {
  std::uint64_t paths = 100000;
  std::uint64_t seed = 42;
  bool antithetic = true;
  std::uint64_t batch = 8192;  // paths per random stream block

  void validate() const {
    if (paths < 1) throw ConfigError("path count must be at least 1");
    if (batch < 2) throw ConfigError("batch size must be at least 2");
  }
};

struct McEstimate {
  double price = 0.0;
  double standard_error = 0.0;
  std::uint64_t paths = 0;
  std::uint64_t samples = 0;  // independent samples behind the SE (antithetic pairs count once)
};

namespace detail {

/// Simulates one strategy path from a stream of return draws; returns (C(t_n)/G0, G(t_n)/G0).
class PathEngine {
 public:
  PathEngine(const StrategySpec& spec, const Model& model) : spec_(spec) {
    const auto& sch = spec.schedule;
    const std::size_t n = sch.periods();
    for (std::size_t i = 0; i < n; ++i) {
      samplers_.emplace_back(with_rate(model, spec.curve.average_rate(sch.date(i), sch.date(i + 1))),
                             sch.period_length(i));
      floors_.push_back(spec.floor_at(i));
      growth_.push_back(spec.bond_growth(i));
      fees_.push_back(spec.fee_factor(i));
    }
    lockin_.assign(n + 1, false);
    if (spec.has_lockin())
      for (std::size_t i : sch.lockin_indices())
        if (i > 0) lockin_[i] = true;
  }

  std::size_t periods() const { return samplers_.size(); }

  struct State {
    double x;      // C / G(t)
    double g;      // G(t) / G0
    double start;  // x at the last lock-in date
  };

  State initial() const { return {spec_.x0(), 1.0, spec_.x0()}; }

  void step(State& s, std::size_t i, double ret) const {
    const double w = weight(spec_.rule, floors_[i], s.x);
    s.x = fees_[i] * (w * s.x * ret + (1.0 - w) * s.x * growth_[i]);
    if (lockin_[i + 1]) {
      const double f = lockin_f(*spec_.lockin, s.start, s.x);
      s.g *= f;
      s.x /= f;
      s.start = s.x;
    }
  }

  ReturnSampler& sampler(std::size_t i) { return samplers_[i]; }

 private:
  const StrategySpec& spec_;
  std::vector<ReturnSampler> samplers_;
  std::vector<double> floors_, growth_, fees_;
  std::vector<bool> lockin_;
};

// Runs `visit(value_c, value_g, pair_slot)` for every path of a block; antithetic
// pairs share all draws except the sign of the diffusion part.
template <class Visit>
void run_block(const StrategySpec& spec, const Model& model, const McConfig& cfg, std::uint64_t block,
               std::uint64_t count, Visit&& visit) {
  PathEngine engine(spec, model);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32)};
  std::mt19937_64 rng(seq);
  const std::size_t n = engine.periods();
  const int legs = cfg.antithetic ? 2 : 1;
  for (std::uint64_t p = 0; p < count; p += legs) {
    const int here = static_cast<int>(std::min<std::uint64_t>(legs, count - p));
    PathEngine::State st[2] = {engine.initial(), engine.initial()};
    for (std::size_t i = 0; i < n; ++i) {
      auto& smp = engine.sampler(i);
      const ReturnDraw d = smp.draw(rng);
      for (int leg = 0; leg < here; ++leg) engine.step(st[leg], i, smp.gross(d, leg == 1));
    }
    for (int leg = 0; leg < here; ++leg) visit(st[leg].x * st[leg].g, st[leg].g, leg);
  }
}

struct Moments {
  double count = 0.0, mean = 0.0, m2 = 0.0;

  void add(double v) {
    count += 1.0;
    const double d = v - mean;
    mean += d / count;
    m2 += d * (v - mean);
  }

  // Chan et al. pairwise combination; applied in block order for reproducibility
  void merge(const Moments& o) {
    if (o.count == 0.0) return;
    const double total = count + o.count;
    const double d = o.mean - mean;
    mean += d * o.count / total;
    m2 += o.m2 + d * d * count * o.count / total;
    count = total;
  }
};

}  // namespace detail

/// Discounted price of G(t_n)^alpha P(C(t_n)/G(t_n)) with its standard error.
inline McEstimate simulate(const StrategySpec& spec, const Model& model, const Payoff& payoff, const McConfig& cfg,
                           std::size_t workers = worker_count()) {
  spec.validate();
  payoff.validate();
  cfg.validate();
  if (payoff.exercise != Exercise::european) throw ConfigError("the Monte Carlo oracle prices European payoffs only");
  const std::uint64_t blocks = (cfg.paths + cfg.batch - 1) / cfg.batch;
  std::vector<detail::Moments> parts(blocks);
  const double scale = std::pow(spec.guarantee, payoff.alpha) *
                       spec.curve.discount(spec.schedule.start(), spec.schedule.maturity());
  parallel_for(
      0, blocks,
      [&](std::size_t b) {
        const std::uint64_t count = std::min<std::uint64_t>(cfg.batch, cfg.paths - b * cfg.batch);
        double pending = 0.0;
        detail::run_block(spec, model, cfg, b, count, [&](double c, double g, int leg) {
          const double v = scale * std::pow(g, payoff.alpha) * payoff(c / g);
          if (!cfg.antithetic) {
            parts[b].add(v);
          } else if (leg == 0) {
            pending = v;
          } else {
            parts[b].add(0.5 * (pending + v));
          }
        });
        // an odd trailing path enters as its own sample
        if (cfg.antithetic && count % 2 == 1) parts[b].add(pending);
      },
      workers);
  detail::Moments all;
  for (const auto& p : parts) all.merge(p);
  McEstimate est;
  est.price = all.mean;
  est.paths = cfg.paths;
  est.samples = static_cast<std::uint64_t>(all.count);
  est.standard_error = all.count > 1.0 ? std::sqrt(all.m2 / (all.count - 1.0) / all.count) : 0.0;
  return est;
}

enum class HistogramValue { raw, discounted };

/// Terminal C(t_n)/G0 binned on `edges`; mass outside the edges is reported separately.
struct Histogram {
  std::vector<double> edges;
  std::vector<double> mass;  // probability per bin
  std::vector<std::uint64_t> counts;
  double below = 0.0, above = 0.0;
  std::uint64_t paths = 0;

  double total() const {
    double t = below + above;
    for (double m : mass) t += m;
    return t;
  }
};

inline Histogram terminal_histogram(const StrategySpec& spec, const Model& model, const McConfig& cfg,
                                    std::vector<double> edges, HistogramValue value = HistogramValue::raw,
                                    std::size_t workers = worker_count()) {
  spec.validate();
  cfg.validate();
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end()))
    throw ConfigError("histogram edges must be increasing with at least one bin");
  const double factor =
      value == HistogramValue::discounted ? spec.curve.discount(spec.schedule.start(), spec.schedule.maturity()) : 1.0;
  const std::size_t bins = edges.size() - 1;
  const std::uint64_t blocks = (cfg.paths + cfg.batch - 1) / cfg.batch;
  std::vector<std::vector<std::uint64_t>> parts(blocks, std::vector<std::uint64_t>(bins + 2, 0));
  parallel_for(
      0, blocks,
      [&](std::size_t b) {
        const std::uint64_t count = std::min<std::uint64_t>(cfg.batch, cfg.paths - b * cfg.batch);
        auto& c = parts[b];
        detail::run_block(spec, model, cfg, b, count, [&](double v, double, int) {
          v *= factor;
          if (v < edges.front()) {
            ++c[bins];
          } else if (v >= edges.back()) {
            ++c[bins + 1];
          } else {
            const auto k = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin()) - 1;
            ++c[k];
          }
        });
      },
      workers);
  Histogram h;
  h.edges = std::move(edges);
  h.counts.assign(bins, 0);
  std::uint64_t below = 0, above = 0;
  for (const auto& c : parts) {
    for (std::size_t k = 0; k < bins; ++k) h.counts[k] += c[k];
    below += c[bins];
    above += c[bins + 1];
  }
  const double total = static_cast<double>(cfg.paths);
  h.paths = cfg.paths;
  h.mass.resize(bins);
  for (std::size_t k = 0; k < bins; ++k) h.mass[k] = static_cast<double>(h.counts[k]) / total;
  h.below = static_cast<double>(below) / total;
  h.above = static_cast<double>(above) / total;
  return h;
}

}  // namespace cppi
