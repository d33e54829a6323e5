#pragma once

// JSON run configuration: parsing with strict key checking, defaults, and the
// effective (defaults-resolved) echo used in reports.

#include <json.hpp>

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cppi/error.hpp"
#include "cppi/grid.hpp"
#include "cppi/market_models.hpp"
#include "cppi/math.hpp"
#include "cppi/mc_oracle.hpp"
#include "cppi/product.hpp"

namespace cppi {

using json = nlohmann::ordered_json;

struct Numerics {
  std::size_t n = 500;
  int order = 3;
  bool optimal_grid = false;
  GridOptions grid;
  std::vector<std::size_t> convergence_n{100, 200, 400, 800};
  std::vector<int> schemes{2, 3};
  std::optional<std::size_t> reference_n;
  McConfig mc;
  std::size_t histogram_bins = 50;
  std::size_t dump_period = 0;
};

struct Output {
  std::optional<std::string> report;  // JSON summary path; stdout when absent
  std::optional<std::string> csv;     // CSV artifact path; stdout when absent
  bool include_timings = false;
  double lower_tail = 1.0;  // distribution windows, in units of the initial guarantee
  double upper_tail = 3.0;
};

struct RunConfig {
  StrategySpec spec;
  Model model;
  Payoff payoff;
  Numerics numerics;
  Output output;
};

namespace detail {

// Throws ConfigError naming the offending field.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("must be an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) throw ConfigError(path_ + "." + k + ": unknown key");
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  Reader child(const char* key) const {
    if (!j_.contains(key)) return Reader(json::object(), path_ + "." + key);
    return Reader(j_.at(key), path_ + "." + key);
  }

  double number(const char* key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    return v.get<double>();
  }

  double number(const char* key) const {
    if (!has(key)) fail(key, "is required");
    return number(key, 0.0);
  }

  std::size_t count(const char* key, std::size_t fallback) const {
    if (!has(key)) return fallback;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(key, "must be a non-negative integer");
    return v.get<std::size_t>();
  }

  bool flag(const char* key, bool fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_boolean()) fail(key, "must be true or false");
    return j_.at(key).get<bool>();
  }

  std::string text(const char* key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    if (!j_.at(key).is_string()) fail(key, "must be a string");
    return j_.at(key).get<std::string>();
  }

  std::vector<double> numbers(const char* key) const {
    if (!has(key)) return {};
    const auto& v = j_.at(key);
    if (!v.is_array()) fail(key, "must be an array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) fail(key, "must be an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  const json& raw(const char* key) const { return j_.at(key); }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(path_ + ": " + msg); }
  [[noreturn]] void fail(const char* key, const std::string& msg) const {
    throw ConfigError(path_ + "." + key + ": " + msg);
  }

 private:
  json j_;
  std::string path_;
};

inline Payoff read_payoff(const Reader& r, const std::string& exercise) {
  r.allow({"type", "strike", "alpha", "table"});
  const std::string type = r.text("type", "put");
  Payoff p;
  if (type == "put") {
    p = Payoff::put(r.number("strike", 1.0));
  } else if (type == "call") {
    p = Payoff::call(r.number("strike", 1.0));
  } else if (type == "portfolio") {
    p = Payoff::portfolio();
  } else if (type == "table") {
    if (!r.has("table") || !r.raw("table").is_array()) r.fail("table", "must be an array of [x, value] pairs");
    std::vector<std::pair<double, double>> pts;
    for (const auto& e : r.raw("table")) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
        r.fail("table", "must be an array of [x, value] pairs");
      pts.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
    p = Payoff::piecewise_linear(std::move(pts));
  } else {
    r.fail("type", "must be one of put, call, portfolio, table");
  }
  p.alpha = r.number("alpha", 1.0);
  if (exercise == "bermudan") p.exercise = Exercise::bermudan;
  else if (exercise != "european") throw ConfigError("product.exercise: must be european or bermudan");
  return p;
}

inline DiscountCurve read_curve(const Reader& r) {
  r.allow({"type", "rate", "ends", "rates"});
  const std::string type = r.text("type", "flat");
  if (type == "flat") return DiscountCurve::flat(r.number("rate", 0.0));
  if (type == "piecewise") return DiscountCurve::piecewise(r.numbers("ends"), r.numbers("rates"));
  r.fail("type", "must be flat or piecewise");
}

inline Model read_model(const Reader& r, double rate) {
  r.allow({"type", "sigma", "lambda_up", "eta_up", "lambda_down", "eta_down"});
  const std::string type = r.text("type", "lognormal");
  if (type == "lognormal") return LognormalModel{rate, r.number("sigma")};
  if (type != "kou") r.fail("type", "must be lognormal or kou");
  KouModel k;
  k.rate = rate;
  k.sigma = r.number("sigma");
  k.lambda_up = r.number("lambda_up", 0.0);
  k.eta_up = r.number("eta_up", 0.0);
  k.lambda_down = r.number("lambda_down", 0.0);
  k.eta_down = r.number("eta_down", 0.0);
  return k;
}

inline std::vector<std::size_t> counts(const Reader& r, const char* key, std::vector<std::size_t> fallback) {
  if (!r.has(key)) return fallback;
  std::vector<std::size_t> out;
  for (double v : r.numbers(key)) {
    if (!(v >= 1.0) || v != std::floor(v)) r.fail(key, "must hold positive integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace detail

/// Parses and validates a run configuration. Model drift follows the curve.
inline RunConfig parse_config(const json& j) {
  const detail::Reader root(j, "config");
  root.allow({"product", "model", "curve", "numerics", "output"});
  RunConfig c;
  auto& s = c.spec;

  const auto curve = root.child("curve");
  s.curve = detail::read_curve(curve);

  const auto prod = root.child("product");
  prod.allow({"maturity", "periods", "dates", "multiplier", "floor", "cap", "fee_rate", "lockin", "initial_value",
              "guarantee", "payoff", "exercise"});
  if (prod.has("dates")) {
    if (prod.has("maturity") || prod.has("periods")) prod.fail("dates", "excludes maturity and periods");
    s.schedule = Schedule(prod.numbers("dates"));
  } else {
    s.schedule = Schedule::uniform(prod.number("maturity", 10.0), prod.count("periods", 120));
  }
  s.rule.multiplier = prod.number("multiplier", 4.0);
  s.rule.cap = prod.has("cap") ? prod.number("cap") : math::kInf;
  const auto floor = prod.child("floor");
  floor.allow({"type", "start"});
  const std::string ftype = floor.text("type", "natural");
  if (ftype == "linear") s.rule.floor = Floor::linear(floor.number("start"));
  else if (ftype == "natural") s.rule.floor = Floor::natural();
  else floor.fail("type", "must be natural or linear");
  s.fee.rate = prod.number("fee_rate", 0.0);
  s.initial_value = prod.number("initial_value", 1.0);
  s.guarantee = prod.number("guarantee", s.initial_value);
  if (prod.has("lockin")) {
    const auto li = prod.child("lockin");
    li.allow({"fraction", "every"});
    s.lockin = LockInRule{li.number("fraction")};
    s.schedule = s.schedule.with_lockin_every(li.count("every", s.schedule.periods()));
  }
  c.payoff = detail::read_payoff(prod.child("payoff"), prod.text("exercise", "european"));

  c.model = detail::read_model(root.child("model"), s.curve.rates().front());

  const auto num = root.child("numerics");
  num.allow({"N", "order", "optimal_grid", "grid", "convergence_N", "schemes", "reference_N", "mc", "histogram_bins",
             "dump_period"});
  auto& n = c.numerics;
  n.n = num.count("N", n.n);
  n.order = static_cast<int>(num.count("order", 3));
  n.optimal_grid = num.flag("optimal_grid", false);
  const auto grid = num.child("grid");
  grid.allow({"lower_fraction", "upper_fraction", "padding", "cushion_level", "kinked_resolution"});
  n.grid.split.lower = grid.number("lower_fraction", n.grid.split.lower);
  n.grid.split.upper = grid.number("upper_fraction", n.grid.split.upper);
  n.grid.padding = grid.number("padding", n.grid.padding);
  n.grid.cushion_level = grid.number("cushion_level", n.grid.cushion_level);
  n.grid.kinked_resolution = grid.number("kinked_resolution", n.grid.kinked_resolution);
  if (!(n.grid.cushion_level > 0.0 && n.grid.cushion_level < 0.5))
    throw ConfigError("numerics.grid.cushion_level: must lie in (0, 0.5)");
  if (!(n.grid.kinked_resolution > 0.0)) throw ConfigError("numerics.grid.kinked_resolution: must be positive");
  n.convergence_n = detail::counts(num, "convergence_N", n.convergence_n);
  if (num.has("schemes")) {
    n.schemes.clear();
    for (auto v : detail::counts(num, "schemes", {})) n.schemes.push_back(static_cast<int>(v));
  }
  if (num.has("reference_N")) n.reference_n = num.count("reference_N", 0);
  const auto mc = num.child("mc");
  mc.allow({"paths", "seed", "antithetic", "batch"});
  n.mc.paths = mc.count("paths", n.mc.paths);
  n.mc.seed = mc.count("seed", n.mc.seed);
  n.mc.antithetic = mc.flag("antithetic", n.mc.antithetic);
  n.mc.batch = mc.count("batch", n.mc.batch);
  n.histogram_bins = num.count("histogram_bins", n.histogram_bins);
  n.dump_period = num.count("dump_period", 0);

  const auto out = root.child("output");
  out.allow({"report", "csv", "include_timings", "lower_tail", "upper_tail"});
  if (out.has("report")) c.output.report = out.text("report", "");
  if (out.has("csv")) c.output.csv = out.text("csv", "");
  c.output.include_timings = out.flag("include_timings", false);
  c.output.lower_tail = out.number("lower_tail", c.output.lower_tail);
  c.output.upper_tail = out.number("upper_tail", c.output.upper_tail);

  // semantic checks after all fields are read
  s.validate();
  validate(c.model);
  c.payoff.validate();
  n.mc.validate();
  if (n.order != 2 && n.order != 3) throw ConfigError("numerics.order: must be 2 or 3");
  for (int o : n.schemes)
    if (o != 2 && o != 3) throw ConfigError("numerics.schemes: entries must be 2 or 3");
  if (n.n < 10) throw ConfigError("numerics.N: must be at least 10");
  if (n.order == 3 && n.n % 2) throw ConfigError("numerics.N: order 3 needs an even N");
  if (n.histogram_bins < 1) throw ConfigError("numerics.histogram_bins: must be at least 1");
  if (n.dump_period >= s.schedule.periods()) throw ConfigError("numerics.dump_period: beyond the schedule");
  return c;
}

/// Effective configuration with every default resolved; parse_config(to_json(c)) reproduces c.
inline json to_json(const RunConfig& c) {
  const auto& s = c.spec;
  json j;
  json curve;
  if (s.curve.segment_ends().empty()) {
    curve = {{"type", "flat"}, {"rate", s.curve.rates().front()}};
  } else {
    curve = {{"type", "piecewise"}, {"ends", s.curve.segment_ends()}, {"rates", s.curve.rates()}};
  }
  json prod;
  prod["dates"] = s.schedule.dates();
  prod["multiplier"] = s.rule.multiplier;
  if (s.rule.floor.kind == Floor::Kind::linear) prod["floor"] = {{"type", "linear"}, {"start", s.rule.floor.start_level}};
  else prod["floor"] = {{"type", "natural"}};
  prod["cap"] = std::isfinite(s.rule.cap) ? json(s.rule.cap) : json(nullptr);
  prod["fee_rate"] = s.fee.rate;
  if (s.has_lockin()) {
    const auto& idx = s.schedule.lockin_indices();
    prod["lockin"] = {{"fraction", s.lockin->fraction}, {"every", idx[1] - idx[0]}};
  } else {
    prod["lockin"] = nullptr;
  }
  prod["initial_value"] = s.initial_value;
  prod["guarantee"] = s.guarantee;
  const auto& p = c.payoff;
  json pay;
  switch (p.kind) {
    case PayoffKind::put: pay = {{"type", "put"}, {"strike", p.strike}}; break;
    case PayoffKind::call: pay = {{"type", "call"}, {"strike", p.strike}}; break;
    case PayoffKind::portfolio: pay = {{"type", "portfolio"}}; break;
    case PayoffKind::table: {
      pay = {{"type", "table"}};
      json t = json::array();
      for (const auto& [x, v] : p.table) t.push_back({x, v});
      pay["table"] = t;
      break;
    }
  }
  pay["alpha"] = p.alpha;
  prod["payoff"] = pay;
  prod["exercise"] = p.exercise == Exercise::bermudan ? "bermudan" : "european";

  json model;
  if (const auto* ln = std::get_if<LognormalModel>(&c.model)) {
    model = {{"type", "lognormal"}, {"sigma", ln->sigma}};
  } else {
    const auto& k = std::get<KouModel>(c.model);
    model = {{"type", "kou"},         {"sigma", k.sigma},           {"lambda_up", k.lambda_up},
             {"eta_up", k.eta_up},    {"lambda_down", k.lambda_down}, {"eta_down", k.eta_down}};
  }
  const auto& n = c.numerics;
  json num;
  num["N"] = n.n;
  num["order"] = n.order;
  num["optimal_grid"] = n.optimal_grid;
  num["grid"] = {{"lower_fraction", n.grid.split.lower},
                 {"upper_fraction", n.grid.split.upper},
                 {"padding", n.grid.padding},
                 {"cushion_level", n.grid.cushion_level},
                 {"kinked_resolution", n.grid.kinked_resolution}};
  num["convergence_N"] = n.convergence_n;
  num["schemes"] = n.schemes;
  num["reference_N"] = n.reference_n ? json(*n.reference_n) : json(nullptr);
  num["mc"] = {{"paths", n.mc.paths}, {"seed", n.mc.seed}, {"antithetic", n.mc.antithetic}, {"batch", n.mc.batch}};
  num["histogram_bins"] = n.histogram_bins;
  num["dump_period"] = n.dump_period;
  json out;
  out["report"] = c.output.report ? json(*c.output.report) : json(nullptr);
  out["csv"] = c.output.csv ? json(*c.output.csv) : json(nullptr);
  out["include_timings"] = c.output.include_timings;
  out["lower_tail"] = c.output.lower_tail;
  out["upper_tail"] = c.output.upper_tail;

  j["product"] = prod;
  j["model"] = model;
  j["curve"] = curve;
  j["numerics"] = num;
  j["output"] = out;
  return j;
}

}  // namespace cppi
