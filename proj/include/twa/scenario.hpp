#pragma once

// Scenario files: JSON with // and /* */ comments.
//
// The grammar is documented in schema/scenario.schema.json. Unknown keys are
// rejected so that typos do not silently fall back to defaults. Syntax errors
// report line and column; semantic errors report the JSON pointer of the
// offending field.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "twa/coupling.hpp"
#include "twa/errors.hpp"
#include "twa/geometry.hpp"
#include "twa/phase_space.hpp"
#include "twa/rng.hpp"
#include "twa/sde.hpp"

namespace twa {

using json = nlohmann::json;

enum class GeometryKind { Dicke, Lattice, Cloud, Positions };

struct GeometrySpec {
  GeometryKind kind = GeometryKind::Dicke;
  std::size_t atoms = 1;  // dicke, cloud
  int rows = 1, cols = 1;
  double spacing = 1.0;
  Vec3 sigma = Vec3::Ones();
  std::uint64_t cloud_seed = 0;
  std::vector<Vec3> points;  // explicit positions, resolved from file if needed
};

/// Pass criteria for one observable in `validate`. Unset bounds are not checked.
struct Tolerance {
  std::optional<double> max_abs;
  std::optional<double> rms;
  std::optional<double> max_standard_errors;
  std::optional<double> final_relative;
};

struct Scenario {
  std::string name = "scenario";
  GeometrySpec geometry;
  CVec3 polarization = circular_polarization();
  bool dicke_coupling = false;
  DriveField drive;
  InitialState initial = InitialState::AllExcited;
  SimConfig sim;
  PoleGuard pole = PoleGuard::Fold;
  std::vector<Vec3> directions;
  std::optional<CollectiveDephasing> dephasing;
  std::optional<LarmorCoupling> larmor;
  std::vector<std::pair<std::string, Tolerance>> tolerances;
  double oracle_step = 1e-3;

  std::size_t atoms() const {
    switch (geometry.kind) {
      case GeometryKind::Dicke:
      case GeometryKind::Cloud: return geometry.atoms;
      case GeometryKind::Lattice: return static_cast<std::size_t>(geometry.rows) * geometry.cols;
      case GeometryKind::Positions: return geometry.points.size();
    }
    return 0;
  }
};

namespace detail {

inline std::string pointer(const std::string& base, const std::string& key) { return base + "/" + key; }

inline void reject_unknown(const json& obj, const std::string& at,
                           std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(at + ": expected an object");
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(pointer(at, key) + ": unknown field");
  }
}

inline double get_number(const json& obj, const std::string& at, const char* key,
                         std::optional<double> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(pointer(at, key) + ": required field missing");
  }
  const auto& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(pointer(at, key) + ": expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) throw ConfigError(pointer(at, key) + ": must be finite");
  return x;
}

inline std::uint64_t get_count(const json& obj, const std::string& at, const char* key,
                               std::optional<std::uint64_t> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(pointer(at, key) + ": required field missing");
  }
  const auto& v = obj.at(key);
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(pointer(at, key) + ": expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

inline Vec3 get_vec3(const json& v, const std::string& at) {
  if (!v.is_array() || v.size() != 3) throw ConfigError(at + ": expected [x, y, z]");
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    if (!v[static_cast<std::size_t>(i)].is_number()) throw ConfigError(at + ": expected numbers");
    out[i] = v[static_cast<std::size_t>(i)].get<double>();
  }
  if (!out.allFinite()) throw ConfigError(at + ": must be finite");
  return out;
}

inline std::string get_string(const json& obj, const std::string& at, const char* key,
                              std::optional<std::string> fallback = std::nullopt) {
  if (!obj.contains(key)) {
    if (fallback) return *fallback;
    throw ConfigError(pointer(at, key) + ": required field missing");
  }
  if (!obj.at(key).is_string()) throw ConfigError(pointer(at, key) + ": expected a string");
  return obj.at(key).get<std::string>();
}

inline json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline Eigen::VectorXd get_weights(const json& obj, const std::string& at, std::size_t n) {
  const std::string p = pointer(at, "weights");
  if (!obj.contains("weights")) return Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  const auto& w = obj.at("weights");
  if (!w.is_array() || w.size() != n) {
    throw ConfigError(p + ": expected " + std::to_string(n) + " numbers");
  }
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!w[i].is_number()) throw ConfigError(p + ": expected numbers");
    out[static_cast<Eigen::Index>(i)] = w[i].get<double>();
  }
  return out;
}

inline int parse_axis(const std::string& s, const std::string& at) {
  if (s == "x") return 0;
  if (s == "y") return 1;
  if (s == "z") return 2;
  throw ConfigError(at + ": axis must be \"x\", \"y\" or \"z\"");
}

inline std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

/// Parse scenario text. Relative position files resolve against `base_dir`.
inline Scenario parse_scenario(const std::string& text,
                               const std::filesystem::path& base_dir = ".") {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(col) +
                      ": " + e.what());
  }
  // A run-metadata file carries the resolved scenario under "scenario".
  if (root.is_object() && root.contains("scenario") && root.contains("version")) {
    root = root.at("scenario");
  }
  using detail::get_count;
  using detail::get_number;
  using detail::get_string;
  detail::reject_unknown(root, "", {"name", "geometry", "polarization", "coupling", "drive", "initial",
                                    "simulation", "observables", "dephasing", "larmor", "validate"});
  Scenario sc;
  sc.name = get_string(root, "", "name", "scenario");

  // geometry
  if (!root.contains("geometry")) throw ConfigError("/geometry: required field missing");
  const auto& g = root.at("geometry");
  const std::string gp = "/geometry";
  if (!g.is_object()) throw ConfigError(gp + ": expected an object");
  const std::string kind = get_string(g, gp, "kind");
  auto& geo = sc.geometry;
  if (kind == "dicke") {
    detail::reject_unknown(g, gp, {"kind", "atoms"});
    geo.kind = GeometryKind::Dicke;
    geo.atoms = get_count(g, gp, "atoms");
    if (geo.atoms < 1) throw ConfigError(gp + "/atoms: must be >= 1");
  } else if (kind == "lattice") {
    detail::reject_unknown(g, gp, {"kind", "rows", "cols", "spacing"});
    geo.kind = GeometryKind::Lattice;
    geo.rows = static_cast<int>(get_count(g, gp, "rows"));
    geo.cols = static_cast<int>(get_count(g, gp, "cols"));
    geo.spacing = get_number(g, gp, "spacing");
    if (geo.rows < 1 || geo.cols < 1) throw ConfigError(gp + ": rows and cols must be >= 1");
    if (!(geo.spacing > 0.0)) throw ConfigError(gp + "/spacing: must be positive");
  } else if (kind == "cloud") {
    detail::reject_unknown(g, gp, {"kind", "atoms", "sigma", "seed"});
    geo.kind = GeometryKind::Cloud;
    geo.atoms = get_count(g, gp, "atoms");
    if (geo.atoms < 1) throw ConfigError(gp + "/atoms: must be >= 1");
    if (!g.contains("sigma")) throw ConfigError(gp + "/sigma: required field missing");
    geo.sigma = detail::get_vec3(g.at("sigma"), gp + "/sigma");
    if (!(geo.sigma.minCoeff() > 0.0)) throw ConfigError(gp + "/sigma: widths must be positive");
    geo.cloud_seed = get_count(g, gp, "seed", 0);
  } else if (kind == "positions") {
    detail::reject_unknown(g, gp, {"kind", "file", "points"});
    geo.kind = GeometryKind::Positions;
    if (g.contains("file") == g.contains("points")) {
      throw ConfigError(gp + ": give exactly one of \"file\" or \"points\"");
    }
    if (g.contains("file")) {
      std::filesystem::path file = get_string(g, gp, "file");
      if (file.is_relative()) file = base_dir / file;
      std::ifstream in(file);
      if (!in) throw ConfigError(gp + "/file: cannot open '" + file.string() + "'");
      try {
        geo.points = read_positions(in);
      } catch (const ConfigError& e) {
        throw ConfigError(file.string() + ": " + e.what());
      }
    } else {
      const auto& pts = g.at("points");
      if (!pts.is_array()) throw ConfigError(gp + "/points: expected an array");
      for (std::size_t i = 0; i < pts.size(); ++i) {
        geo.points.push_back(detail::get_vec3(pts[i], gp + "/points/" + std::to_string(i)));
      }
    }
    if (geo.points.empty()) throw ConfigError(gp + ": no positions given");
  } else {
    throw ConfigError(gp + "/kind: expected dicke, lattice, cloud or positions");
  }
  const std::size_t n = sc.atoms();

  // polarization: "circular" or {"re": [..], "im": [..]}
  if (root.contains("polarization")) {
    const auto& p = root.at("polarization");
    if (p.is_string()) {
      if (p.get<std::string>() != "circular") throw ConfigError("/polarization: unknown preset");
    } else {
      detail::reject_unknown(p, "/polarization", {"re", "im"});
      const Vec3 re = p.contains("re") ? detail::get_vec3(p.at("re"), "/polarization/re") : Vec3::Zero();
      const Vec3 im = p.contains("im") ? detail::get_vec3(p.at("im"), "/polarization/im") : Vec3::Zero();
      sc.polarization = re.cast<cplx>() + cplx(0.0, 1.0) * im.cast<cplx>();
      if (std::abs(sc.polarization.squaredNorm() - 1.0) > 1e-12) {
        throw ConfigError("/polarization: must have unit norm");
      }
    }
  }

  const std::string coupling = get_string(root, "", "coupling",
                                          geo.kind == GeometryKind::Dicke ? "dicke" : "free-space");
  if (coupling == "dicke") {
    sc.dicke_coupling = true;
  } else if (coupling == "free-space") {
    if (geo.kind == GeometryKind::Dicke) {
      throw ConfigError("/coupling: dicke geometry has no positions for free-space coupling");
    }
  } else {
    throw ConfigError("/coupling: expected \"dicke\" or \"free-space\"");
  }

  if (root.contains("drive")) {
    const auto& d = root.at("drive");
    detail::reject_unknown(d, "/drive", {"rabi", "direction", "detuning"});
    sc.drive.rabi = get_number(d, "/drive", "rabi", 0.0);
    sc.drive.detuning = get_number(d, "/drive", "detuning", 0.0);
    if (d.contains("direction")) sc.drive.direction = detail::get_vec3(d.at("direction"), "/drive/direction");
    if (!(sc.drive.rabi >= 0.0)) throw ConfigError("/drive/rabi: must be >= 0");
    if (std::abs(sc.drive.direction.norm() - 1.0) > 1e-12) {
      throw ConfigError("/drive/direction: must be a unit vector");
    }
  }

  try {
    sc.initial = parse_initial_state(get_string(root, "", "initial", "excited"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("/initial: ") + e.what());
  }

  // simulation
  if (!root.contains("simulation")) throw ConfigError("/simulation: required field missing");
  const auto& s = root.at("simulation");
  const std::string sp = "/simulation";
  detail::reject_unknown(s, sp, {"dt", "t_final", "trajectories", "seed", "sample_stride", "batch_size",
                                 "pole_guard"});
  const double default_dt = sc.dicke_coupling ? dicke_timestep(n) : 1e-3;
  sc.sim.dt = get_number(s, sp, "dt", default_dt);
  sc.sim.t_final = get_number(s, sp, "t_final");
  sc.sim.n_traj = get_count(s, sp, "trajectories", 1000);
  sc.sim.seed = get_count(s, sp, "seed", 1);
  sc.sim.batch_size = get_count(s, sp, "batch_size", 64);
  if (s.contains("pole_guard")) {
    const auto& g = s.at("pole_guard");
    if (!g.is_string()) throw ConfigError(sp + "/pole_guard: expected \"fold\" or \"clamp\"");
    try {
      sc.pole = parse_pole_guard(g.get<std::string>());
    } catch (const InvalidArgument&) {
      throw ConfigError(sp + "/pole_guard: expected \"fold\" or \"clamp\"");
    }
  }
  if (!(sc.sim.dt > 0.0)) throw ConfigError(sp + "/dt: must be positive");
  if (!(sc.sim.t_final >= sc.sim.dt)) throw ConfigError(sp + "/t_final: must be >= dt");
  if (sc.sim.n_traj < 1) throw ConfigError(sp + "/trajectories: must be >= 1");
  if (sc.sim.batch_size < 1) throw ConfigError(sp + "/batch_size: must be >= 1");
  sc.sim.sample_stride = get_count(s, sp, "sample_stride", std::max<std::uint64_t>(1, sc.sim.n_steps() / 200));
  if (sc.sim.sample_stride < 1) throw ConfigError(sp + "/sample_stride: must be >= 1");

  if (root.contains("observables")) {
    const auto& o = root.at("observables");
    detail::reject_unknown(o, "/observables", {"directions"});
    if (o.contains("directions")) {
      const auto& dirs = o.at("directions");
      if (!dirs.is_array()) throw ConfigError("/observables/directions: expected an array");
      for (std::size_t i = 0; i < dirs.size(); ++i) {
        const std::string at = "/observables/directions/" + std::to_string(i);
        const Vec3 k = detail::get_vec3(dirs[i], at);
        if (!(k.norm() > 0.0)) throw ConfigError(at + ": zero vector");
        sc.directions.push_back(k.normalized());
      }
    }
  }
  if (!sc.directions.empty() && geo.kind == GeometryKind::Dicke) {
    throw ConfigError("/observables/directions: dicke geometry has no positions");
  }

  if (root.contains("dephasing")) {
    const auto& d = root.at("dephasing");
    detail::reject_unknown(d, "/dephasing", {"rate", "weights"});
    CollectiveDephasing deph;
    deph.rate = get_number(d, "/dephasing", "rate");
    if (!(deph.rate >= 0.0)) throw ConfigError("/dephasing/rate: must be >= 0");
    deph.weights = detail::get_weights(d, "/dephasing", n);
    sc.dephasing = deph;
  }
  if (root.contains("larmor")) {
    const auto& l = root.at("larmor");
    detail::reject_unknown(l, "/larmor", {"axis", "weights"});
    LarmorCoupling lc;
    lc.axis = detail::parse_axis(get_string(l, "/larmor", "axis", "z"), "/larmor/axis");
    lc.weights = detail::get_weights(l, "/larmor", n);
    sc.larmor = lc;
  }

  if (root.contains("validate")) {
    const auto& v = root.at("validate");
    detail::reject_unknown(v, "/validate", {"oracle_step", "tolerances"});
    sc.oracle_step = get_number(v, "/validate", "oracle_step", 1e-3);
    if (!(sc.oracle_step > 0.0)) throw ConfigError("/validate/oracle_step: must be positive");
    if (v.contains("tolerances")) {
      const auto& tol = v.at("tolerances");
      if (!tol.is_object()) throw ConfigError("/validate/tolerances: expected an object");
      for (const auto& [obs, spec] : tol.items()) {
        const std::string at = "/validate/tolerances/" + obs;
        const bool known = obs == "excitations" || obs == "total_rate" || obs == "squeezing" ||
                           obs.rfind("directional_", 0) == 0;
        if (!known) throw ConfigError(at + ": unknown observable");
        detail::reject_unknown(spec, at, {"max_abs", "rms", "max_standard_errors", "final_relative"});
        Tolerance t;
        if (spec.contains("max_abs")) t.max_abs = get_number(spec, at, "max_abs");
        if (spec.contains("rms")) t.rms = get_number(spec, at, "rms");
        if (spec.contains("max_standard_errors")) t.max_standard_errors = get_number(spec, at, "max_standard_errors");
        if (spec.contains("final_relative")) t.final_relative = get_number(spec, at, "final_relative");
        sc.tolerances.emplace_back(obs, t);
      }
    }
  }
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_scenario(buf.str(), path.parent_path().empty() ? "." : path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Fully explicit form of a scenario; parsing it yields the same run.
inline json resolved_json(const Scenario& sc) {
  json j;
  j["name"] = sc.name;
  const auto& g = sc.geometry;
  switch (g.kind) {
    case GeometryKind::Dicke: j["geometry"] = {{"kind", "dicke"}, {"atoms", g.atoms}}; break;
    case GeometryKind::Lattice:
      j["geometry"] = {{"kind", "lattice"}, {"rows", g.rows}, {"cols", g.cols}, {"spacing", g.spacing}};
      break;
    case GeometryKind::Cloud:
      j["geometry"] = {{"kind", "cloud"}, {"atoms", g.atoms}, {"sigma", detail::vec_json(g.sigma)},
                       {"seed", g.cloud_seed}};
      break;
    case GeometryKind::Positions: {
      json pts = json::array();
      for (const auto& p : g.points) pts.push_back(detail::vec_json(p));
      j["geometry"] = {{"kind", "positions"}, {"points", pts}};
      break;
    }
  }
  j["polarization"] = {{"re", detail::vec_json(sc.polarization.real())},
                       {"im", detail::vec_json(sc.polarization.imag())}};
  j["coupling"] = sc.dicke_coupling ? "dicke" : "free-space";
  j["drive"] = {{"rabi", sc.drive.rabi},
                {"direction", detail::vec_json(sc.drive.direction)},
                {"detuning", sc.drive.detuning}};
  j["initial"] = std::string(to_string(sc.initial));
  j["simulation"] = {{"dt", sc.sim.dt},
                     {"t_final", sc.sim.t_final},
                     {"trajectories", sc.sim.n_traj},
                     {"seed", sc.sim.seed},
                     {"sample_stride", sc.sim.sample_stride},
                     {"batch_size", sc.sim.batch_size},
                     {"pole_guard", std::string(to_string(sc.pole))}};
  json dirs = json::array();
  for (const auto& k : sc.directions) dirs.push_back(detail::vec_json(k));
  j["observables"] = {{"directions", dirs}};
  static const char* axes[] = {"x", "y", "z"};
  if (sc.dephasing) {
    j["dephasing"] = {{"rate", sc.dephasing->rate},
                      {"weights", std::vector<double>(sc.dephasing->weights.begin(), sc.dephasing->weights.end())}};
  }
  if (sc.larmor) {
    j["larmor"] = {{"axis", axes[sc.larmor->axis]},
                   {"weights", std::vector<double>(sc.larmor->weights.begin(), sc.larmor->weights.end())}};
  }
  json tol = json::object();
  for (const auto& [obs, t] : sc.tolerances) {
    json e = json::object();
    if (t.max_abs) e["max_abs"] = *t.max_abs;
    if (t.rms) e["rms"] = *t.rms;
    if (t.max_standard_errors) e["max_standard_errors"] = *t.max_standard_errors;
    if (t.final_relative) e["final_relative"] = *t.final_relative;
    tol[obs] = e;
  }
  j["validate"] = {{"oracle_step", sc.oracle_step}, {"tolerances", tol}};
  return j;
}

/// Geometry, couplings and equations of motion built from a scenario.
struct PreparedRun {
  std::vector<Vec3> positions;  // empty for the Dicke idealization
  std::shared_ptr<const CouplingMatrices> couplings;
  Dynamics dynamics;
};

inline std::vector<Vec3> scenario_positions(const Scenario& sc) {
  const auto& g = sc.geometry;
  switch (g.kind) {
    case GeometryKind::Dicke: return {};
    case GeometryKind::Lattice: return build_square_lattice(g.rows, g.cols, g.spacing);
    case GeometryKind::Cloud: {
      RandomStream rng(g.cloud_seed, streams::kGeometry);
      return sample_gaussian_cloud(g.atoms, g.sigma, rng);
    }
    case GeometryKind::Positions: return g.points;
  }
  return {};
}

inline PreparedRun prepare(const Scenario& sc) {
  PreparedRun run;
  run.positions = scenario_positions(sc);
  const std::size_t n = sc.atoms();
  if (sc.dicke_coupling) {
    run.couplings = std::make_shared<const CouplingMatrices>(dicke_override(n));
  } else {
    const AtomEnsemble ensemble(run.positions, sc.polarization);
    run.couplings = std::make_shared<const CouplingMatrices>(build_matrices(ensemble));
  }
  auto& dyn = run.dynamics;
  dyn.couplings = run.couplings;
  if (sc.drive.rabi > 0.0) {
    dyn.rabi = run.positions.empty() ? std::vector<cplx>(n, cplx(sc.drive.rabi))
                                     : rabi_frequencies(sc.drive, run.positions);
  }
  dyn.detuning = sc.drive.detuning;
  dyn.initial = sc.initial;
  dyn.dephasing = sc.dephasing;
  dyn.larmor = sc.larmor;
  dyn.pole = sc.pole;
  dyn.validate();
  return run;
}

}  // namespace twa
