#pragma once

// Run configuration: JSON file, defaults, command-line overrides, hash.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "abreu/abreu_solver.hpp"
#include "abreu/error.hpp"
#include "abreu/grid.hpp"
#include "abreu/io.hpp"
#include "abreu/lagrangian.hpp"
#include "abreu/lma_solver.hpp"
#include "abreu/ma_solver.hpp"
#include "abreu/oracle.hpp"
#include "abreu/polynomial.hpp"

namespace abreu {

using json = nlohmann::json;

struct ShapeSpec {
  std::string type = "disk";  // disk | ellipse | polynomial
  Vec2 center{0, 0};
  double radius = 1;
  double a = 1, b = 1;       // ellipse semi-axes
  std::string rho;           // polynomial defining function
  Box box{{-1, -1}, {1, 1}}; // polynomial bounding box

  ConvexDomain build() const {
    if (type == "disk") return ConvexDomain::disk(center, radius);
    if (type == "ellipse") return ConvexDomain::ellipse(center, a, b);
    if (type == "polynomial") return ConvexDomain::polynomial(Polynomial::parse(rho), box);
    throw ConfigError("unknown domain type \"" + type + "\"");
  }
};

struct MeasurementSpec {
  std::vector<Vec2> centers{{0, 0}, {0.3, 0}, {0, -0.3}, {-0.2, 0.2}, {0.1, 0.25}};
  std::vector<double> heights{0.02, 0.05, 0.1, 0.2};          // section volume sweep
  std::vector<double> harnack_heights{0.02, 0.05, 0.1};       // S(x, h/8) quotients
  double decay_height = 0.1;
  std::vector<double> thresholds;                             // empty: 24 geometric steps over [1, 4]
  double twist_radius = 0.1;                                  // residual window around each anchor
  double gamma = -1;                                          // <= 0: measured exponent

  std::vector<double> decay_thresholds() const {
    if (!thresholds.empty()) return thresholds;
    std::vector<double> t;
    for (int i = 0; i < 24; ++i) t.push_back(std::pow(4.0, i / 23.0));
    return t;
  }
};

struct RunConfig {
  ShapeSpec outer;
  ShapeSpec inner{"disk", {0, 0}, 0.5};
  double q_cost = 2;
  std::string eta0 = "1";
  std::string phi = "0.5*x^2 + 0.5*y^2";
  std::string psi = "1";
  int resolution = 65;
  std::vector<double> schedule{0.1, 0.05, 0.02, 0.01};
  MaOptions ma;
  LmaOptions lma;
  AbreuOptions outer_solver;
  OracleOptions oracle;
  MeasurementSpec measure;
  std::string output = "out";
  std::uint64_t seed = 0;
  std::string mode = "full";  // full | measure

  /// Canonical JSON of everything that affects results (output dir excluded).
  json canonical() const;
  std::string hash() const { return fnv1a_hex(canonical().dump()); }

  NestedDomains domains() const;
  AbreuProblem problem() const;
  void validate() const;
};

namespace detail {

inline json vec_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

inline Vec2 json_vec(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(what + " must be a pair of numbers");
  return {j[0].get<double>(), j[1].get<double>()};
}

/// Rejects keys outside `allowed` so that typos surface.
inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

inline ShapeSpec read_shape(const json& j, ShapeSpec s, const std::string& where) {
  check_keys(j, {"type", "center", "radius", "a", "b", "rho", "box"}, where);
  read(j, "type", s.type, where);
  if (j.contains("center")) s.center = json_vec(j["center"], where + ".center");
  read(j, "radius", s.radius, where);
  read(j, "a", s.a, where);
  read(j, "b", s.b, where);
  read(j, "rho", s.rho, where);
  if (j.contains("box")) {
    const json& b = j["box"];
    if (!b.is_array() || b.size() != 2) throw ConfigError(where + ".box must be [[xlo, ylo], [xhi, yhi]]");
    s.box = {json_vec(b[0], where + ".box"), json_vec(b[1], where + ".box")};
  }
  return s;
}

inline json shape_json(const ShapeSpec& s) {
  json j{{"type", s.type}};
  if (s.type == "disk") {
    j["center"] = vec_json(s.center);
    j["radius"] = s.radius;
  } else if (s.type == "ellipse") {
    j["center"] = vec_json(s.center);
    j["a"] = s.a;
    j["b"] = s.b;
  } else {
    j["rho"] = s.rho;
    j["box"] = json::array({vec_json(s.box.lo), vec_json(s.box.hi)});
  }
  return j;
}

} // namespace detail

inline json RunConfig::canonical() const {
  json m;
  json centers = json::array();
  for (const auto& c : measure.centers) centers.push_back(detail::vec_json(c));
  m["centers"] = centers;
  m["heights"] = measure.heights;
  m["harnack_heights"] = measure.harnack_heights;
  m["decay_height"] = measure.decay_height;
  m["thresholds"] = measure.decay_thresholds();
  m["twist_radius"] = measure.twist_radius;
  m["gamma"] = measure.gamma;
  return json{
      {"domain", {{"outer", detail::shape_json(outer)}, {"inner", detail::shape_json(inner)}}},
      {"lagrangian", {{"q_cost", q_cost}, {"eta0", eta0}}},
      {"boundary", {{"phi", phi}, {"psi", psi}}},
      {"resolution", resolution},
      {"epsilon", {{"schedule", schedule}}},
      {"ma", {{"tol", ma.tol}, {"max_iter", ma.max_iter}}},
      {"lma", {{"tol", lma.tol}, {"fallback", lma.fallback == LmaFallback::off ? "off" : "auto"}}},
      {"outer", {{"tol", outer_solver.tol}, {"max_sweeps", outer_solver.max_iter}, {"relaxation", outer_solver.relaxation}}},
      {"oracle", {{"tol", oracle.tol}, {"max_iter", oracle.max_iter}}},
      {"measurements", m},
      {"seed", seed},
      {"mode", mode},
  };
}

inline void RunConfig::validate() const {
  if (resolution < 8) throw ConfigError("resolution must be at least 8");
  if (schedule.empty()) throw ConfigError("epsilon schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0)) throw ConfigError("epsilon schedule must be positive");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw ConfigError("epsilon schedule must be strictly decreasing");
  }
  if (mode != "full" && mode != "measure") throw ConfigError("mode must be \"full\" or \"measure\"");
  if (!(q_cost > 1)) throw ConfigError("lagrangian.q_cost must exceed 1");
  if (!(outer_solver.relaxation > 0 && outer_solver.relaxation <= 1))
    throw ConfigError("outer.relaxation must lie in (0, 1]");
  if (!(ma.tol > 0 && lma.tol > 0 && oracle.tol > 0 && outer_solver.tol > 0))
    throw ConfigError("tolerances must be positive");
  if (ma.max_iter < 1 || outer_solver.max_iter < 1 || oracle.max_iter < 1)
    throw ConfigError("iteration caps must be positive");
  if (measure.centers.empty()) throw ConfigError("measurements.centers is empty");
  for (double h : measure.heights)
    if (!(h > 0)) throw ConfigError("section heights must be positive");
  for (double h : measure.harnack_heights)
    if (!(h > 0)) throw ConfigError("Harnack heights must be positive");
  for (const auto* s : {&outer, &inner})
    if (s->type != "disk" && s->type != "ellipse" && s->type != "polynomial")
      throw ConfigError("unknown domain type \"" + s->type + "\"");
  Polynomial::parse(phi);
  Polynomial::parse(psi);
  Polynomial::parse(eta0);
}

inline NestedDomains RunConfig::domains() const {
  if (outer.type == "disk" && inner.type == "disk" && outer.center == inner.center)
    return NestedDomains::concentric_disks(outer.radius, inner.radius);
  return NestedDomains::make(outer.build(), inner.build());
}

inline AbreuProblem RunConfig::problem() const {
  const NestedDomains d = domains();
  const Polynomial p = Polynomial::parse(phi), s = Polynomial::parse(psi);
  return AbreuProblem{build_grid(d, resolution),
                      rochet_chone(q_cost, eta0 == "1" ? Density::constant(1.0) : Density::polynomial(eta0),
                                   d.outer.bounding_box),
                      [p](const Vec2& x) { return p(x); }, [s](const Vec2& x) { return s(x); }, d.outer.rho};
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::check_keys(j, {"domain", "lagrangian", "boundary", "resolution", "epsilon", "ma", "lma", "outer", "oracle",
                         "measurements", "output", "seed", "mode"},
                     "config");
  if (j.contains("domain")) {
    const json& d = j["domain"];
    detail::check_keys(d, {"outer", "inner"}, "domain");
    if (d.contains("outer")) c.outer = detail::read_shape(d["outer"], c.outer, "domain.outer");
    if (d.contains("inner")) c.inner = detail::read_shape(d["inner"], c.inner, "domain.inner");
  }
  if (j.contains("lagrangian")) {
    const json& l = j["lagrangian"];
    detail::check_keys(l, {"type", "q_cost", "eta0"}, "lagrangian");
    std::string type = "rochet_chone";
    detail::read(l, "type", type, "lagrangian");
    if (type != "rochet_chone") throw ConfigError("only the rochet_chone Lagrangian is available");
    detail::read(l, "q_cost", c.q_cost, "lagrangian");
    if (l.contains("eta0") && l["eta0"].is_number()) {
      // numbers are accepted as constant densities
      c.eta0 = fmt(l["eta0"].get<double>());
    } else {
      detail::read(l, "eta0", c.eta0, "lagrangian");
    }
  }
  if (j.contains("boundary")) {
    detail::check_keys(j["boundary"], {"phi", "psi"}, "boundary");
    detail::read(j["boundary"], "phi", c.phi, "boundary");
    detail::read(j["boundary"], "psi", c.psi, "boundary");
  }
  detail::read(j, "resolution", c.resolution, "config");
  if (j.contains("epsilon")) {
    detail::check_keys(j["epsilon"], {"schedule"}, "epsilon");
    detail::read(j["epsilon"], "schedule", c.schedule, "epsilon");
  }
  if (j.contains("ma")) {
    detail::check_keys(j["ma"], {"tol", "max_iter"}, "ma");
    detail::read(j["ma"], "tol", c.ma.tol, "ma");
    detail::read(j["ma"], "max_iter", c.ma.max_iter, "ma");
  }
  if (j.contains("lma")) {
    detail::check_keys(j["lma"], {"tol", "fallback"}, "lma");
    detail::read(j["lma"], "tol", c.lma.tol, "lma");
    std::string fb = "auto";
    detail::read(j["lma"], "fallback", fb, "lma");
    c.lma.fallback = parse_lma_fallback(fb);
  }
  if (j.contains("outer")) {
    detail::check_keys(j["outer"], {"tol", "max_sweeps", "relaxation"}, "outer");
    detail::read(j["outer"], "tol", c.outer_solver.tol, "outer");
    detail::read(j["outer"], "max_sweeps", c.outer_solver.max_iter, "outer");
    detail::read(j["outer"], "relaxation", c.outer_solver.relaxation, "outer");
  }
  if (j.contains("oracle")) {
    detail::check_keys(j["oracle"], {"tol", "max_iter"}, "oracle");
    detail::read(j["oracle"], "tol", c.oracle.tol, "oracle");
    detail::read(j["oracle"], "max_iter", c.oracle.max_iter, "oracle");
  }
  if (j.contains("measurements")) {
    const json& m = j["measurements"];
    detail::check_keys(m, {"centers", "heights", "harnack_heights", "decay_height", "thresholds", "twist_radius", "gamma"},
                       "measurements");
    if (m.contains("centers")) {
      if (!m["centers"].is_array()) throw ConfigError("measurements.centers must be a list of points");
      c.measure.centers.clear();
      for (const auto& p : m["centers"]) c.measure.centers.push_back(detail::json_vec(p, "measurements.centers"));
    }
    detail::read(m, "heights", c.measure.heights, "measurements");
    detail::read(m, "harnack_heights", c.measure.harnack_heights, "measurements");
    detail::read(m, "decay_height", c.measure.decay_height, "measurements");
    detail::read(m, "thresholds", c.measure.thresholds, "measurements");
    detail::read(m, "twist_radius", c.measure.twist_radius, "measurements");
    detail::read(m, "gamma", c.measure.gamma, "measurements");
  }
  detail::read(j, "output", c.output, "config");
  detail::read(j, "seed", c.seed, "config");
  detail::read(j, "mode", c.mode, "config");
  c.outer_solver.ma = c.ma;
  c.validate();
  return c;
}

inline RunConfig config_from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_string(text);
}

} // namespace abreu
