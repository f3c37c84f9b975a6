// Command-line driver: run, oracle, abreu, measure, plot.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "abreu/abreu.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out;
  int resolution = 0;
  std::string epsilon;
  long long seed = -1;
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    double x = 0;
    try {
      x = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw abreu::ConfigError("--epsilon expects a comma-separated list of numbers");
    v.push_back(x);
  }
  if (v.empty()) throw abreu::ConfigError("--epsilon list is empty");
  return v;
}

abreu::RunConfig effective_config(const Overrides& o) {
  abreu::RunConfig c = o.config.empty() ? abreu::config_from_string("{}") : abreu::load_config(o.config);
  if (o.resolution > 0) c.resolution = o.resolution;
  if (!o.epsilon.empty()) c.schedule = parse_list(o.epsilon);
  if (o.seed >= 0) c.seed = static_cast<std::uint64_t>(o.seed);
  if (!o.out.empty()) c.output = o.out;
  c.validate();
  return c;
}

void print_report(const abreu::ExperimentResult& r) {
  if (r.report.oracle) {
    const auto& o = *r.report.oracle;
    std::printf("oracle: objective %.10g  kkt %.3g  active %.3f  refinement %.3g  (%.1f s)\n", o.objective,
                o.kkt_violation, o.active_fraction, o.refinement_estimate, o.wall_seconds);
  }
  if (!r.report.rows.empty())
    std::printf("%-10s %-12s %-10s %-10s %-10s %-10s %-5s %s\n", "eps", "err_inner", "res_lma", "res_coup", "det_min",
                "det_max", "iter", "time");
  for (const auto& x : r.report.rows)
    std::printf("%-10.4g %-12.5g %-10.2e %-10.2e %-10.4g %-10.4g %-5d %.1fs\n", x.eps, x.err_inner, x.residual_lma,
                x.residual_coupling, x.bounds.det_min, x.bounds.det_max, x.iterations, x.wall_seconds);
  if (!r.measurements.empty()) std::printf("measurements: %zu rows\n", r.measurements.size());
  std::printf("config hash %s\n", r.report.config_hash.c_str());
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Singular Abreu equation solver and convexity-constrained minimization experiments"};
  app.require_subcommand(1, 1);
  Overrides o;
  auto add_flags = [&o](CLI::App* s, bool with_config) {
    if (with_config) {
      s->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
      s->add_option("--resolution", o.resolution, "grid points across the outer domain")->check(CLI::Range(8, 100000));
      s->add_option("--epsilon", o.epsilon, "comma-separated decreasing epsilon schedule");
      s->add_option("--seed", o.seed, "seed for sampled measurements")->check(CLI::NonNegativeNumber);
    }
    s->add_option("--out", o.out, "output directory");
  };
  auto* run = app.add_subcommand("run", "oracle, epsilon continuation and measurements (or measurement-only per config)");
  auto* oracle = app.add_subcommand("oracle", "constrained minimizer only");
  auto* abreu_cmd = app.add_subcommand("abreu", "epsilon continuation only");
  auto* measure = app.add_subcommand("measure", "continuation plus measurement CSV, no oracle");
  auto* plot = app.add_subcommand("plot", "rebuild SVG plots from the CSVs in --out");
  for (auto* s : {run, oracle, abreu_cmd, measure}) add_flags(s, true);
  add_flags(plot, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (plot->parsed()) {
      abreu::emit_plots(o.out.empty() ? "out" : o.out);
      std::printf("plots written to %s\n", (o.out.empty() ? std::string("out") : o.out).c_str());
      return 0;
    }
    const abreu::RunConfig cfg = effective_config(o);
    abreu::Stages stages = abreu::Stages::full;
    if (oracle->parsed()) stages = abreu::Stages::oracle_only;
    if (abreu_cmd->parsed()) stages = abreu::Stages::abreu_only;
    if (measure->parsed()) stages = abreu::Stages::measure_only;
    const auto result = abreu::run_experiment(cfg, cfg.output, stages);
    print_report(result);
    return 0;
  } catch (const abreu::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 3;
  } catch (const abreu::StageFailure& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return e.nonconvergence() ? 2 : 1;
  } catch (const abreu::NonConvergence& e) {
    std::fprintf(stderr, "no convergence: %s\n", e.what());
    return 2;
  } catch (const abreu::InfeasibleEpsilon& e) {
    std::fprintf(stderr, "no convergence: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
