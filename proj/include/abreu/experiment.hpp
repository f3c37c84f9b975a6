#pragma once

// Orchestration: oracle, epsilon continuation, measurement campaign, artifacts.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "abreu/abreu_solver.hpp"
#include "abreu/config.hpp"
#include "abreu/io.hpp"
#include "abreu/lma_solver.hpp"
#include "abreu/oracle.hpp"
#include "abreu/sections.hpp"
#include "abreu/svg.hpp"

namespace abreu {

/// A module error tagged with the stage that raised it.
class StageFailure : public Error {
public:
  StageFailure(std::string stage, const std::string& what, bool nonconvergence)
      : Error(stage + ": " + what), stage_(std::move(stage)), nonconvergence_(nonconvergence) {}
  const std::string& stage() const { return stage_; }
  bool nonconvergence() const { return nonconvergence_; }

private:
  std::string stage_;
  bool nonconvergence_;
};

struct ConvergenceRow {
  double eps = 0;
  double err_inner = std::numeric_limits<double>::quiet_NaN();  // sup |u_eps - u*| on the compact subset
  double residual_ma = 0, residual_lma = 0, residual_coupling = 0, residual_boundary = 0;
  double lma_w_gap = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool converged = false;
  BoundReport bounds;
  double wall_seconds = 0;
};

struct OracleSummary {
  int resolution = 0;
  double objective = 0, kkt_violation = 0, active_fraction = 0;
  int iterations = 0;
  double lipschitz = 0, lipschitz_bound = 0;
  bool lipschitz_ok = false;
  /// sup over the compact subset of |u*_h - u*_{2h}|
  double refinement_estimate = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0;
};

struct ConvergenceReport {
  std::string config_hash;
  std::vector<ConvergenceRow> rows;  // decreasing eps
  std::optional<OracleSummary> oracle;
  bool complete = true;
  std::string failure;
};

struct MeasurementRow {
  std::string kind;
  double eps = 0;
  Vec2 center{std::nan(""), std::nan("")};
  double height = std::nan("");
  double param = std::nan("");
  double value = std::nan("");
  double aux = std::nan("");
  std::string note;
};

struct ExperimentResult {
  ConvergenceReport report;
  std::vector<MeasurementRow> measurements;
  std::vector<AbreuState> states;
  std::optional<OracleResult> oracle;
};

enum class Stages { full, oracle_only, abreu_only, measure_only };

/// Nodes of the inner domain scaled by 0.8 about the centroid of its nodes.
inline std::vector<Index> compact_subset_nodes(const Grid& g, const NestedDomains& d, double scale = 0.8) {
  Vec2 c = Vec2::Zero();
  for (Index k : g.inner_nodes()) c += g.position(k);
  c /= static_cast<double>(g.inner_nodes().size());
  std::vector<Index> out;
  for (Index k : g.inner_nodes())
    if (d.inner(c + (g.position(k) - c) / scale) < 0) out.push_back(k);
  return out;
}

inline double sup_difference(const ScalarField& a, const ScalarField& b, const std::vector<Index>& nodes) {
  double e = 0;
  for (Index k : nodes) e = std::max(e, std::abs(a[k] - b[k]));
  return e;
}

/// Gap between w and the solution of the nondivergence w-equation with u frozen.
inline double lma_w_gap(const AbreuState& s, const AbreuProblem& P, const LmaOptions& opt) {
  const Grid& g = s.u.grid();
  MatrixField U(s.u.grid_ptr());
  for (Index k : g.inside_nodes()) U[k] = hessian_at(s.u, k).cofactor();
  const ScalarField mu = mu_epsilon(sample(P.grid, P.phi), s.eps);
  ScalarField rhs = assemble_f_epsilon(s.u, P.L, s.eps, mu).f;
  rhs *= 1.0 / s.eps;
  const ScalarField w = solve_lma(U, rhs, P.psi, nullptr, opt);
  return sup_difference(w, s.w, g.inside_nodes()) / s.w.sup_inside();
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline std::string section_error_name(const SectionError& e) {
  switch (e.kind()) {
    case SectionError::Kind::empty: return "empty";
    case SectionError::Kind::not_compactly_contained: return "not_compact";
    case SectionError::Kind::degenerate: return "degenerate";
  }
  return "section_error";
}

} // namespace detail

/// Section volumes, Harnack quotients, decay fits, twist residuals and a
/// Hoelder seminorm of w for one converged state.
inline std::vector<MeasurementRow> measure_state(const AbreuState& s, const AbreuProblem& P, const RunConfig& cfg) {
  std::vector<MeasurementRow> rows;
  const Grid& g = s.u.grid();
  const MeasurementSpec& m = cfg.measure;
  auto base = [&](const char* kind, const Vec2& c, double h) {
    MeasurementRow r;
    r.kind = kind;
    r.eps = s.eps;
    r.center = c;
    r.height = h;
    return r;
  };

  for (const Vec2& c : m.centers)
    for (double h : m.heights) {
      MeasurementRow r = base("section_volume", c, h);
      try {
        Section sec = compute_section(s.u, c, h);
        john_normalize(sec, s.u);
        r.value = sec.volume / h;  // |S| / h^{n/2}, n = 2
        r.param = sec.normalized_radius_check.second;
        r.aux = sec.cell_tolerance;
      } catch (const SectionError& e) {
        r.note = detail::section_error_name(e);
      }
      rows.push_back(r);
    }

  for (const Vec2& c : m.centers)
    for (double h : m.harnack_heights) {
      MeasurementRow r = base("harnack", c, h);
      try {
        r.value = harnack_quotient(s.w, s.u, c, h);
      } catch (const SectionError& e) {
        r.note = detail::section_error_name(e);
      }
      rows.push_back(r);
    }

  const auto thresholds = m.decay_thresholds();
  for (const Vec2& c : m.centers) {
    MeasurementRow r = base("decay", c, m.decay_height);
    try {
      const Section sec = compute_section(s.u, c, m.decay_height);
      const Section inner = compute_section(s.u, c, m.decay_height / 8);
      double inf = std::numeric_limits<double>::infinity();
      for (Index k : inner.node_set) inf = std::min(inf, s.w[k]);
      ScalarField v = s.w;
      v *= 1.0 / inf;
      DecayFit fit;
      try {
        fit = distribution_decay(v, sec, thresholds);
        r.value = fit.exponent;
        r.aux = fit.residual;
        r.param = fit.used;
      } catch (const InsufficientDecadeCoverage&) {
        r.note = "insufficient_coverage";
        const double total = static_cast<double>(sec.node_set.size());
        for (double t : thresholds) {
          double above = 0;
          for (Index k : sec.node_set) above += v[k] > t;
          fit.thresholds.push_back(t);
          fit.fractions.push_back(above / total);
        }
      }
      rows.push_back(r);
      for (std::size_t i = 0; i < fit.thresholds.size(); ++i) {
        MeasurementRow p = base("decay_point", c, m.decay_height);
        p.param = fit.thresholds[i];
        p.value = fit.fractions[i];
        rows.push_back(p);
      }
    } catch (const SectionError& e) {
      r.note = detail::section_error_name(e);
      rows.push_back(r);
    }
  }

  for (const Vec2& z : m.centers) {
    MeasurementRow r = base("twist", z, m.twist_radius);
    try {
      const TwistBundle tb = twist_bundle(s, P, z, m.gamma);
      const TransformedResidual tr = transformed_residual(s, tb);
      double res = 0, scale = 0;
      for (Index k : tr.nodes)
        if ((g.position(k) - tb.anchor).norm() <= m.twist_radius) {
          res = std::max(res, std::abs(tr.residual[k]));
          scale = std::max(scale, tr.scale[k]);
        }
      r.value = scale > 0 ? res / scale : std::nan("");
      r.param = tb.gamma;
      r.aux = tb.K_stat;
    } catch (const Error& e) {
      r.note = "anchor_rejected";
    }
    rows.push_back(r);
  }

  {
    MeasurementRow r = base("holder_w", Vec2(std::nan(""), std::nan("")), std::nan(""));
    r.param = 0.5;
    r.value = holder_seminorm(s.w, g.inner_nodes(), 0.5, cfg.seed);
    rows.push_back(r);
  }
  return rows;
}

inline OracleSummary summarize(const OracleResult& o, int resolution) {
  OracleSummary s;
  s.resolution = resolution;
  s.objective = o.objective;
  s.kkt_violation = o.kkt_violation;
  s.active_fraction = o.active_constraint_fraction;
  s.iterations = o.iterations;
  s.lipschitz = o.lipschitz;
  s.lipschitz_bound = o.lipschitz_bound;
  s.lipschitz_ok = o.lipschitz_ok;
  return s;
}

/// Sup over the compact subset of |u*_h - I u*_{2h}|, I bilinear.
inline double oracle_refinement_estimate(const ScalarField& fine, const RunConfig& cfg, const NestedDomains& d) {
  RunConfig coarse_cfg = cfg;
  coarse_cfg.resolution = (cfg.resolution + 1) / 2;
  const AbreuProblem Pc = coarse_cfg.problem();
  const OracleResult oc = solve_constrained(Pc.L, Pc.phi, Pc.grid, cfg.oracle);
  double e = 0;
  for (Index k : compact_subset_nodes(fine.grid(), d)) {
    const auto v = interpolate(oc.u_star, fine.grid().position(k));
    if (v) e = std::max(e, std::abs(fine[k] - *v));
  }
  return e;
}

// ---- writers ----

inline void write_convergence_csv(const std::filesystem::path& path, const ConvergenceReport& r) {
  CsvWriter w(path, r.config_hash,
              {"eps", "err_inner", "residual_ma", "residual_lma", "residual_coupling", "residual_boundary", "lma_w_gap",
               "iterations", "converged", "sup_abs_u", "det_min", "det_max", "grad_sup_inner", "grad_bound", "cw_M",
               "cw_boundary_gap", "f_plus_sup"});
  for (const auto& x : r.rows)
    w.row({fmt(x.eps), fmt(x.err_inner), fmt(x.residual_ma), fmt(x.residual_lma), fmt(x.residual_coupling),
           fmt(x.residual_boundary), fmt(x.lma_w_gap), std::to_string(x.iterations), x.converged ? "1" : "0",
           fmt(x.bounds.sup_abs_u), fmt(x.bounds.det_min), fmt(x.bounds.det_max), fmt(x.bounds.grad_sup_inner),
           fmt(x.bounds.grad_bound), fmt(x.bounds.cw_M), fmt(x.bounds.cw_boundary_gap), fmt(x.bounds.f_plus_sup)});
}

inline void write_oracle_csv(const std::filesystem::path& path, const OracleSummary& o, const std::string& hash) {
  CsvWriter w(path, hash,
              {"resolution", "objective", "kkt_violation", "active_fraction", "iterations", "lipschitz",
               "lipschitz_bound", "lipschitz_ok", "refinement_estimate"});
  w.row({std::to_string(o.resolution), fmt(o.objective), fmt(o.kkt_violation), fmt(o.active_fraction),
         std::to_string(o.iterations), fmt(o.lipschitz), fmt(o.lipschitz_bound), o.lipschitz_ok ? "1" : "0",
         fmt(o.refinement_estimate)});
}

inline void write_measurements_csv(const std::filesystem::path& path, const std::vector<MeasurementRow>& rows,
                                   const std::string& hash) {
  CsvWriter w(path, hash, {"kind", "eps", "center_x", "center_y", "height", "param", "value", "aux", "note"});
  for (const auto& r : rows)
    w.row({r.kind, fmt(r.eps), fmt(r.center.x()), fmt(r.center.y()), fmt(r.height), fmt(r.param), fmt(r.value),
           fmt(r.aux), r.note});
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw OutputError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline json bounds_json(const BoundReport& b) {
  return {{"sup_abs_u", b.sup_abs_u},         {"det_min", b.det_min},   {"det_max", b.det_max},
          {"grad_sup_inner", b.grad_sup_inner}, {"grad_bound", b.grad_bound}, {"cw_M", b.cw_M},
          {"cw_boundary_gap", b.cw_boundary_gap}, {"f_plus_sup", b.f_plus_sup}};
}

// ---- plots ----

/// Rebuilds every plot from the CSVs in dir; the CSVs are the only source.
inline void emit_plots(const std::filesystem::path& dir) {
  const std::string hash = verify_output_hashes(dir);
  const auto conv_path = dir / "convergence.csv";
  if (std::filesystem::exists(conv_path)) {
    const CsvTable t = read_csv(conv_path);
    if (t.rows.empty()) throw OutputError("convergence report is empty");
    const auto eps = t.numbers("eps");
    const auto err = t.numbers("err_inner");
    bool any = false;
    for (double e : err) any = any || std::isfinite(e);
    if (any) {
      PlotSpec p;
      p.title = "Distance to the constrained minimizer";
      p.xlabel = "epsilon";
      p.ylabel = "sup-norm of u_eps - u* on the compact subset";
      p.logx = p.logy = true;
      p.series.push_back({"sup |u_eps - u*|", eps, err});
      write_svg(dir / "error_vs_eps.svg", p, hash);
    }
    PlotSpec d;
    d.title = "Hessian determinant range";
    d.xlabel = "epsilon";
    d.ylabel = "det D^2 u_eps";
    d.logx = d.logy = true;
    d.band = true;
    d.series.push_back({"det_min", eps, t.numbers("det_min")});
    d.series.push_back({"det_max", eps, t.numbers("det_max")});
    write_svg(dir / "det_bounds.svg", d, hash);
  }

  const auto meas_path = dir / "measurements.csv";
  if (!std::filesystem::exists(meas_path)) return;
  const CsvTable m = read_csv(meas_path);
  const int kind = m.column_index("kind");
  const auto eps = m.numbers("eps"), cx = m.numbers("center_x"), cy = m.numbers("center_y"), h = m.numbers("height"),
             param = m.numbers("param"), value = m.numbers("value");
  if (m.rows.empty()) return;
  // smallest epsilon present
  double last = std::numeric_limits<double>::infinity();
  for (double e : eps) last = std::min(last, e);
  auto same_center = [](double a, double b) { return std::abs(a - b) < 1e-12; };

  std::vector<Vec2> centers;
  for (std::size_t i = 0; i < m.rows.size(); ++i) {
    if (m.rows[i][kind] != "section_volume" || eps[i] != last) continue;
    bool seen = false;
    for (const auto& c : centers) seen = seen || (same_center(c.x(), cx[i]) && same_center(c.y(), cy[i]));
    if (!seen) centers.emplace_back(cx[i], cy[i]);
  }
  {
    PlotSpec p;
    p.title = "Section volume ratio at eps = " + detail::num(last, "%.3g");
    p.xlabel = "height h";
    p.ylabel = "|S_u(x, h)| / h";
    p.logx = true;
    for (const auto& c : centers) {
      PlotSeries s;
      s.label = "x = (" + detail::num(c.x(), "%.3g") + ", " + detail::num(c.y(), "%.3g") + ")";
      for (std::size_t i = 0; i < m.rows.size(); ++i)
        if (m.rows[i][kind] == "section_volume" && eps[i] == last && same_center(cx[i], c.x()) &&
            same_center(cy[i], c.y()) && std::isfinite(value[i])) {
          s.x.push_back(h[i]);
          s.y.push_back(value[i]);
        }
      p.series.push_back(s);
    }
    write_svg(dir / "section_volume.svg", p, hash);
  }
  {
    // one fit per center at the smallest epsilon; slope annotations use the CSV exponent
    PlotSpec p;
    p.title = "Distribution decay at eps = " + detail::num(last, "%.3g");
    p.xlabel = "threshold t";
    p.ylabel = "|{v > t} in S| / |S|";
    p.logx = p.logy = true;
    for (const auto& c : centers) {
      PlotSeries s;
      s.line = false;
      s.label = "x = (" + detail::num(c.x(), "%.3g") + ", " + detail::num(c.y(), "%.3g") + ")";
      for (std::size_t i = 0; i < m.rows.size(); ++i) {
        if (eps[i] != last || !same_center(cx[i], c.x()) || !same_center(cy[i], c.y())) continue;
        if (m.rows[i][kind] == "decay_point" && value[i] > 0) {
          s.x.push_back(param[i]);
          s.y.push_back(value[i]);
        }
        if (m.rows[i][kind] == "decay")
          p.notes.push_back(s.label + ": fitted exponent " + (std::isfinite(value[i]) ? fmt(value[i]) : "n/a"));
      }
      if (!s.x.empty()) p.series.push_back(s);
    }
    write_svg(dir / "decay_fit.svg", p, hash);
  }
}

// ---- orchestration ----

inline ExperimentResult run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                       Stages stages = Stages::full) {
  cfg.validate();
  const bool measure_mode = stages == Stages::measure_only || (stages == Stages::full && cfg.mode == "measure");
  const bool want_oracle = stages == Stages::oracle_only || (stages == Stages::full && !measure_mode);
  const bool want_abreu = stages != Stages::oracle_only;
  const bool want_measure = stages == Stages::measure_only || stages == Stages::full;
  const bool write_everything = !measure_mode;

  std::filesystem::create_directories(out_dir);
  ExperimentResult res;
  const std::string hash = cfg.hash();
  res.report.config_hash = hash;

  NestedDomains domains;
  AbreuProblem P;
  try {
    domains = cfg.domains();
    P = cfg.problem();
    check_abreu_data(P);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw StageFailure("setup", e.what(), false);
  }
  const std::vector<Index> compact = compact_subset_nodes(*P.grid, domains);

  json run{{"config_hash", hash}, {"config", cfg.canonical()}};
  auto flush_run = [&] {
    if (write_everything) write_json(out_dir / "run.json", run);
  };

  if (want_oracle) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      res.oracle = solve_constrained(P.L, P.phi, P.grid, cfg.oracle);
      OracleSummary s = summarize(*res.oracle, cfg.resolution);
      s.refinement_estimate = oracle_refinement_estimate(res.oracle->u_star, cfg, domains);
      s.wall_seconds = detail::seconds_since(t0);
      res.report.oracle = s;
    } catch (const NonConvergence& e) {
      run["failure"] = std::string("oracle: ") + e.what();
      flush_run();
      throw StageFailure("oracle", e.what(), true);
    } catch (const Error& e) {
      run["failure"] = std::string("oracle: ") + e.what();
      flush_run();
      throw StageFailure("oracle", e.what(), false);
    }
    write_oracle_csv(out_dir / "oracle.csv", *res.report.oracle, hash);
    write_field_binary(out_dir / "u_star.bin", res.oracle->u_star, hash);
    write_field_csv(out_dir / "u_star.csv", res.oracle->u_star, hash);
    run["oracle"] = {{"objective", res.report.oracle->objective},
                     {"kkt_violation", res.report.oracle->kkt_violation},
                     {"refinement_estimate", res.report.oracle->refinement_estimate},
                     {"wall_seconds", res.report.oracle->wall_seconds}};
    flush_run();
  }

  if (want_abreu) {
    res.states.reserve(cfg.schedule.size());
    const AbreuState* prev = nullptr;
    for (std::size_t i = 0; i < cfg.schedule.size(); ++i) {
      const double eps = cfg.schedule[i];
      const auto t0 = std::chrono::steady_clock::now();
      AbreuState s;
      std::string failure;
      bool nonconv = false;
      try {
        s = solve_abreu(eps, P, cfg.outer_solver, prev);
        if (!s.converged) {
          failure = "no convergence within the iteration cap";
          nonconv = true;
        }
      } catch (const InfeasibleEpsilon& e) {
        failure = e.what();
        nonconv = true;
      } catch (const NonConvergence& e) {
        failure = e.what();
        nonconv = true;
      } catch (const Error& e) {
        failure = e.what();
      }
      if (!failure.empty()) {
        res.report.complete = false;
        res.report.failure = "abreu at eps " + fmt(eps) + ": " + failure;
        run["failure"] = res.report.failure;
        if (write_everything) write_convergence_csv(out_dir / "convergence.csv", res.report);
        flush_run();
        throw StageFailure("abreu", res.report.failure, nonconv);
      }
      ConvergenceRow row;
      row.eps = eps;
      if (res.oracle) row.err_inner = sup_difference(s.u, res.oracle->u_star, compact);
      row.residual_ma = s.residual_ma;
      row.residual_lma = s.residual_lma;
      row.residual_coupling = s.residual_coupling;
      row.residual_boundary = s.residual_boundary;
      try {
        row.lma_w_gap = lma_w_gap(s, P, cfg.lma);
      } catch (const Error&) {
      }
      row.iterations = s.iterations;
      row.converged = s.converged;
      row.bounds = s.monitor;
      row.wall_seconds = detail::seconds_since(t0);
      res.report.rows.push_back(row);
      res.states.push_back(std::move(s));
      prev = &res.states.back();

      if (write_everything) {
        const std::string tag = "eps" + std::to_string(i);
        write_field_binary(out_dir / ("u_" + tag + ".bin"), prev->u, hash);
        write_field_binary(out_dir / ("w_" + tag + ".bin"), prev->w, hash);
        write_field_csv(out_dir / ("u_" + tag + ".csv"), prev->u, hash);
        write_field_csv(out_dir / ("w_" + tag + ".csv"), prev->w, hash);
        write_json(out_dir / ("manifest_" + tag + ".json"),
                   {{"config_hash", hash},
                    {"eps", eps},
                    {"converged", row.converged},
                    {"iterations", row.iterations},
                    {"err_inner", std::isfinite(row.err_inner) ? json(row.err_inner) : json(nullptr)},
                    {"residuals",
                     {{"ma", row.residual_ma},
                      {"lma", row.residual_lma},
                      {"coupling", row.residual_coupling},
                      {"boundary", row.residual_boundary}}},
                    {"bounds", bounds_json(row.bounds)},
                    {"wall_seconds", row.wall_seconds},
                    {"fields", {"u_" + tag + ".bin", "w_" + tag + ".bin"}}});
      }
    }
    if (write_everything) write_convergence_csv(out_dir / "convergence.csv", res.report);
  }

  if (want_measure) {
    try {
      for (const auto& s : res.states) {
        auto rows = measure_state(s, P, cfg);
        res.measurements.insert(res.measurements.end(), rows.begin(), rows.end());
      }
    } catch (const Error& e) {
      write_measurements_csv(out_dir / "measurements.csv", res.measurements, hash);
      throw StageFailure("measure", e.what(), false);
    }
    write_measurements_csv(out_dir / "measurements.csv", res.measurements, hash);
  }

  if (write_everything) {
    run["complete"] = res.report.complete;
    flush_run();
    emit_plots(out_dir);
  }
  return res;
}

} // namespace abreu
