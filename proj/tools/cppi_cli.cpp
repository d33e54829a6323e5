// Command-line front end: one JSON config per run, JSON summary plus CSV artifacts.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cppi/config.hpp"
#include "cppi/mc_oracle.hpp"
#include "cppi/pricer.hpp"

using namespace cppi;

namespace {

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(clock::now() - start_).count(); }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_ = clock::now();
};

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j);
}

std::string scheme_name(int order, bool optimal) { return std::string(order == 2 ? "II" : "III") + (optimal ? "'" : ""); }

json diagnostics_json(const MatrixDiagnostics& d, std::size_t builds) {
  return {{"negative_mass", d.negative_mass},
          {"max_row_negative_mass", d.max_row_negative_mass},
          {"negative_entries", d.negative_entries},
          {"fallback_rows", d.fallback_rows},
          {"matrices_built", builds}};
}

json grid_json(const Grid& g) {
  return {{"size", g.size()}, {"j0", g.j0}, {"lower", g.lower()}, {"upper", g.upper()},
          {"kind", g.kind == Grid::Kind::optimal ? "optimal" : "parametric"}};
}

struct Lattice {
  Grid grid;
  double price = 0.0;
  std::optional<double> delta;
  MatrixDiagnostics diagnostics;
  std::size_t builds = 0;
};

Lattice lattice_price(const RunConfig& c, std::size_t n, int order, bool optimal, bool with_delta) {
  Lattice out;
  out.grid = make_grid(c.spec, c.model, c.payoff, n, order, optimal, c.numerics.grid);
  MatrixChain chain(c.spec, c.model, out.grid, order);
  if (c.spec.has_lockin()) {
    out.price = price_lockin_homogeneous(c.spec, chain, out.grid, c.payoff).price;
  } else {
    const auto run = price_backward(c.spec, chain, out.grid, c.payoff, with_delta);
    out.price = run.price;
    if (with_delta) out.delta = delta(c.spec, chain, out.grid, c.payoff, run);
  }
  out.diagnostics = chain.diagnostics();
  out.builds = chain.builds();
  return out;
}

Vector terminal_distribution(const RunConfig& c, const Grid& grid, MatrixChain& chain) {
  if (c.spec.has_lockin()) return lockin_terminal_distribution(c.spec, chain, grid);
  return forward_distribution(c.spec, chain, grid).back();
}

// Report sinks: the JSON summary goes to the report path, else to stdout unless
// stdout carries CSV, in which case it goes to stderr.
struct Sinks {
  std::optional<std::string> report, csv;

  void write_csv(const std::string& text) const {
    if (csv) {
      std::ofstream f(*csv);
      if (!f) throw ConfigError("cannot write " + *csv);
      f << text;
    } else {
      std::cout << text;
    }
  }

  void write_report(const json& j, bool csv_command) const {
    const std::string text = j.dump(2) + "\n";
    if (report) {
      std::ofstream f(*report);
      if (!f) throw ConfigError("cannot write " + *report);
      f << text;
    } else if (csv_command && !csv) {
      std::cerr << text;
    } else {
      std::cout << text;
    }
  }
};

json base_report(const std::string& command, const RunConfig& c) {
  json r;
  r["command"] = command;
  r["config"] = to_json(c);
  return r;
}

void finish(json& report, const RunConfig& c, const Timer& t, const Sinks& sinks, bool csv_command) {
  if (c.output.include_timings) report["timings"] = {{"wall_seconds", t.seconds()}};
  sinks.write_report(report, csv_command);
  std::cerr << report["command"].get<std::string>() << " done in " << t.seconds() << " s\n";
}

void run_price(const RunConfig& c, const Sinks& sinks) {
  const Timer t;
  const auto& n = c.numerics;
  const Lattice l = lattice_price(c, n.n, n.order, n.optimal_grid, true);
  json r = base_report("price", c);
  r["result"] = {{"price", l.price},
                 {"delta", l.delta ? json(*l.delta) : json(nullptr)},
                 {"scheme", scheme_name(n.order, n.optimal_grid)},
                 {"order", n.order},
                 {"N", n.n},
                 {"grid", grid_json(l.grid)},
                 {"diagnostics", diagnostics_json(l.diagnostics, l.builds)}};
  std::cerr << "price " << l.price << " (scheme " << scheme_name(n.order, n.optimal_grid) << ", N=" << n.n << ")\n";
  finish(r, c, t, sinks, false);
}

void run_distribution(const RunConfig& c, const Sinks& sinks) {
  const Timer t;
  const auto& n = c.numerics;
  const Grid grid = make_grid(c.spec, c.model, c.payoff, n.n, n.order, n.optimal_grid, c.numerics.grid);
  MatrixChain chain(c.spec, c.model, grid, n.order);
  const Vector term = terminal_distribution(c, grid, chain);
  const auto dens = terminal_density(c.spec, grid, term);

  std::ostringstream csv;
  csv.precision(17);
  csv << "window,x,density,mass\n";
  double mean = 0.0, below = 0.0, above = 0.0, trapezoid = 0.0;
  for (std::size_t k = 0; k < dens.size(); ++k) {
    const double m = term[static_cast<Eigen::Index>(k)];
    mean += m * dens[k].x;
    if (dens[k].x < c.output.lower_tail) below += m;
    if (dens[k].x > c.output.upper_tail) above += m;
    if (k + 1 < dens.size()) trapezoid += 0.5 * (dens[k].density + dens[k + 1].density) * (dens[k + 1].x - dens[k].x);
  }
  for (const char* window : {"full", "lower_tail", "upper_tail"}) {
    for (std::size_t k = 0; k < dens.size(); ++k) {
      const double x = dens[k].x;
      const std::string w = window;
      if (w == "lower_tail" && !(x < c.output.lower_tail)) continue;
      if (w == "upper_tail" && !(x > c.output.upper_tail)) continue;
      csv << w << ',' << x << ',' << dens[k].density << ',' << term[static_cast<Eigen::Index>(k)] << '\n';
    }
  }
  sinks.write_csv(csv.str());

  const double df = c.spec.curve.discount(c.spec.schedule.start(), c.spec.schedule.maturity());
  json r = base_report("distribution", c);
  r["result"] = {{"scheme", scheme_name(n.order, n.optimal_grid)},
                 {"N", n.n},
                 {"total_mass", term.sum()},
                 {"density_integral", trapezoid},
                 {"mean", mean},
                 {"discounted_mean", df * mean},
                 {"mass_below_lower_tail", below},
                 {"mass_above_upper_tail", above},
                 {"grid", grid_json(grid)},
                 {"diagnostics", diagnostics_json(chain.diagnostics(), chain.builds())}};
  finish(r, c, t, sinks, true);
}

// least-squares slope of log|err| against log N
std::optional<double> loglog_slope(const std::vector<std::size_t>& ns, const std::vector<double>& err) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (std::size_t k = 0; k < ns.size(); ++k) {
    if (!(err[k] > 0.0)) continue;
    const double x = std::log(static_cast<double>(ns[k])), y = std::log(err[k]);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
    ++m;
  }
  if (m < 2) return std::nullopt;
  return (m * sxy - sx * sy) / (m * sxx - sx * sx);
}

void run_convergence(const RunConfig& c, const Sinks& sinks) {
  const Timer t;
  const auto& n = c.numerics;
  std::ostringstream csv;
  csv.precision(17);
  csv << "N,scheme,price,cpu_seconds\n";
  json rows = json::array();
  std::optional<double> reference;
  if (n.reference_n) {
    const Timer tr;
    reference = lattice_price(c, *n.reference_n, 3, n.optimal_grid, false).price;
    csv << *n.reference_n << ',' << scheme_name(3, n.optimal_grid) << ',' << *reference << ',' << tr.seconds() << '\n';
  }
  json slopes = json::object();
  for (int order : n.schemes) {
    std::vector<double> err;
    for (std::size_t size : n.convergence_n) {
      const Timer tr;
      const double p = lattice_price(c, size, order, n.optimal_grid, false).price;
      const double secs = tr.seconds();
      csv << size << ',' << scheme_name(order, n.optimal_grid) << ',' << p << ',' << secs << '\n';
      json row = {{"N", size}, {"scheme", scheme_name(order, n.optimal_grid)}, {"price", p}};
      if (c.output.include_timings) row["cpu_seconds"] = secs;
      rows.push_back(row);
      if (reference) err.push_back(std::abs(p - *reference));
    }
    if (reference) {
      const auto s = loglog_slope(n.convergence_n, err);
      slopes[scheme_name(order, n.optimal_grid)] = s ? json(*s) : json(nullptr);
    }
  }
  sinks.write_csv(csv.str());
  json r = base_report("convergence", c);
  r["result"] = {{"rows", rows},
                 {"reference", reference ? json({{"N", *n.reference_n}, {"price", *reference}}) : json(nullptr)},
                 {"slopes", reference ? slopes : json(nullptr)}};
  finish(r, c, t, sinks, true);
}

void run_mc_check(const RunConfig& c, const Sinks& sinks) {
  const Timer t;
  const auto& n = c.numerics;
  const Lattice l = lattice_price(c, n.n, n.order, n.optimal_grid, false);
  const McEstimate mc = simulate(c.spec, c.model, c.payoff, n.mc);
  const double z = mc.standard_error > 0.0 ? (l.price - mc.price) / mc.standard_error : 0.0;
  json r = base_report("mc-check", c);
  r["result"] = {{"lattice_price", l.price},
                 {"scheme", scheme_name(n.order, n.optimal_grid)},
                 {"N", n.n},
                 {"mc_price", mc.price},
                 {"mc_standard_error", mc.standard_error},
                 {"mc_paths", mc.paths},
                 {"mc_seed", n.mc.seed},
                 {"z_score", z},
                 {"within_3se", std::abs(l.price - mc.price) <= 3.0 * mc.standard_error}};
  std::cerr << "lattice " << l.price << " vs MC " << mc.price << " +- " << mc.standard_error << '\n';
  finish(r, c, t, sinks, false);
}

void run_dump_grid(const RunConfig& c, const Sinks& sinks) {
  const Timer t;
  const auto& n = c.numerics;
  const Grid grid = make_grid(c.spec, c.model, c.payoff, n.n, n.order, n.optimal_grid, c.numerics.grid);
  std::ostringstream csv;
  grid.write_csv(csv);
  sinks.write_csv(csv.str());
  json r = base_report("dump-grid", c);
  r["result"] = {{"grid", grid_json(grid)}};
  finish(r, c, t, sinks, true);
}

void run_dump_matrix(const RunConfig& c, const Sinks& sinks) {
  const Timer t;
  const auto& n = c.numerics;
  const Grid grid = make_grid(c.spec, c.model, c.payoff, n.n, n.order, n.optimal_grid, c.numerics.grid);
  MatrixChain chain(c.spec, c.model, grid, n.order);
  const auto& m = chain.at(n.dump_period);
  std::ostringstream csv;
  m.write_csv(csv, c.spec.schedule.dates());
  sinks.write_csv(csv.str());
  json r = base_report("dump-matrix", c);
  r["result"] = {{"period", n.dump_period},
                 {"size", m.size()},
                 {"order", m.order},
                 {"diagnostics", diagnostics_json(m.diagnostics, 1)}};
  finish(r, c, t, sinks, true);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CPPI pricing on a transition-matrix lattice"};
  app.require_subcommand(1);
  std::string config_path;
  std::string report_path, csv_path;
  using Runner = void (*)(const RunConfig&, const Sinks&);
  const std::vector<std::tuple<const char*, const char*, Runner>> commands{
      {"price", "price the configured payoff", run_price},
      {"distribution", "terminal distribution as CSV", run_distribution},
      {"convergence", "price table over grid sizes and schemes as CSV", run_convergence},
      {"mc-check", "compare the lattice price with the Monte Carlo oracle", run_mc_check},
      {"dump-grid", "grid nodes as CSV", run_dump_grid},
      {"dump-matrix", "one period transition matrix as CSV", run_dump_matrix},
  };
  std::vector<std::pair<CLI::App*, Runner>> subs;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "JSON configuration file")->required();
    sub->add_option("--report", report_path, "write the JSON summary here (overrides output.report)");
    sub->add_option("--csv", csv_path, "write CSV output here (overrides output.csv)");
    subs.emplace_back(sub, fn);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  try {
    const RunConfig c = load(config_path);
    Sinks sinks{c.output.report, c.output.csv};
    if (!report_path.empty()) sinks.report = report_path;
    if (!csv_path.empty()) sinks.csv = csv_path;
    for (const auto& [sub, fn] : subs)
      if (sub->parsed()) fn(c, sinks);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ScheduleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
