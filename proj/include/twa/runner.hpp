#pragma once

// Scenario execution: TWA runs, oracle comparisons and file output.
//
// All times are in 1/Γ₀ and all rates in Γ₀.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twa/coupling.hpp"
#include "twa/errors.hpp"
#include "twa/observables.hpp"
#include "twa/oracles.hpp"
#include "twa/scenario.hpp"
#include "twa/sde.hpp"

namespace twa {

inline constexpr const char* kVersion = "1.0.0";

struct RunOptions {
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  bool reproducible = false;
};

inline void apply_options(Scenario& sc, const RunOptions& opt) {
  if (opt.seed) sc.sim.seed = *opt.seed;
  if (opt.workers) sc.sim.workers = *opt.workers;
  sc.sim.reproducible = opt.reproducible;
}

struct RunResult {
  Scenario scenario;
  PreparedRun prepared;
  EnsembleResult ensemble;
  std::vector<ObservableRecord> records;
  double seconds = 0.0;
};

inline RunResult simulate(const Scenario& sc) {
  RunResult res;
  res.scenario = sc;
  res.prepared = prepare(sc);
  const EstimatorContext est(*res.prepared.couplings, res.prepared.positions, sc.polarization,
                             sc.directions);
  const auto start = std::chrono::steady_clock::now();
  res.ensemble = run_ensemble(sc.sim, res.prepared.dynamics, est);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (std::size_t i = 0; i < res.ensemble.times.size(); ++i) {
    res.records.push_back(summarize(res.ensemble.records[i], res.ensemble.times[i]));
  }
  return res;
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write '" + path.string() + "'");
  os.precision(12);
  return os;
}

}  // namespace detail

/// One CSV per observable. Column sets are fixed; new columns are only appended.
inline void write_timeseries(const std::filesystem::path& dir, const RunResult& r) {
  std::filesystem::create_directories(dir);
  const auto& times = r.ensemble.times;
  const auto& acc = r.ensemble.records;
  {
    auto os = detail::open_out(dir / "excitations.csv");
    os << "t,excitations,excitations_se,trajectories\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
      os << times[i] << ',' << r.records[i].excitations << ',' << r.records[i].excitations_se << ','
         << acc[i].count << '\n';
    }
  }
  {
    auto os = detail::open_out(dir / "total_rate.csv");
    os << "t,total_rate,total_rate_se\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
      os << times[i] << ',' << r.records[i].total_rate << ',' << r.records[i].total_rate_se << '\n';
    }
  }
  {
    auto os = detail::open_out(dir / "squeezing.csv");
    os << "t,xi2,sx,sy,sz\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
      const auto [mean, second] = collective_moments(acc[i]);
      os << times[i] << ',' << r.records[i].squeezing << ',' << mean.x() << ',' << mean.y() << ','
         << mean.z() << '\n';
    }
  }
  {
    auto os = detail::open_out(dir / "kuramoto.csv");
    os << "t,r,r_se,psi\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
      os << times[i] << ',' << acc[i].kuramoto_r.mean << ',' << acc[i].kuramoto_r.standard_error()
         << ',' << acc[i].kuramoto_psi.mean << '\n';
    }
  }
  if (!r.scenario.directions.empty()) {
    auto os = detail::open_out(dir / "directional.csv");
    os << 't';
    for (std::size_t k = 0; k < r.scenario.directions.size(); ++k) os << ",gamma_" << k << ",gamma_" << k << "_se";
    os << '\n';
    for (std::size_t i = 0; i < times.size(); ++i) {
      os << times[i];
      for (const auto& d : acc[i].directional) os << ',' << d.mean << ',' << d.standard_error();
      os << '\n';
    }
  }
}

inline nlohmann::json run_summary(const RunResult& r) {
  nlohmann::json s;
  const auto& last = r.records.back();
  s["name"] = r.scenario.name;
  s["atoms"] = r.scenario.atoms();
  s["trajectories"] = r.ensemble.trajectories;
  s["failed_trajectories"] = r.ensemble.failed;
  s["wall_seconds"] = r.seconds;
  s["final"] = {{"t", last.t}, {"excitations", last.excitations}, {"excitations_se", last.excitations_se},
                {"total_rate", last.total_rate}, {"total_rate_se", last.total_rate_se}};
  if (std::isfinite(last.squeezing)) s["final"]["xi2"] = last.squeezing;
  std::size_t peak = 0;
  for (std::size_t i = 1; i < r.records.size(); ++i) {
    if (r.records[i].total_rate > r.records[peak].total_rate) peak = i;
  }
  s["burst"] = {{"peak_time", r.records[peak].t}, {"peak_rate", r.records[peak].total_rate}};
  nlohmann::json dirs = nlohmann::json::array();
  for (std::size_t k = 0; k < r.scenario.directions.size(); ++k) {
    const auto& d = r.scenario.directions[k];
    dirs.push_back({{"direction", {d.x(), d.y(), d.z()}}, {"final", last.directional[k]}});
  }
  s["directional"] = dirs;
  if (r.ensemble.first_failure) s["first_failure"] = *r.ensemble.first_failure;
  return s;
}

inline nlohmann::json run_metadata(const RunResult& r) {
  nlohmann::json m;
  m["version"] = kVersion;
  m["scenario"] = resolved_json(r.scenario);
  m["workers"] = r.scenario.sim.workers;
  m["reproducible"] = r.scenario.sim.reproducible;
  m["units"] = {{"time", "1/Gamma0"}, {"rate", "Gamma0"}, {"length", "lambda_e"}};
  return m;
}

inline void write_run(const std::filesystem::path& dir, const RunResult& r) {
  write_timeseries(dir, r);
  detail::open_out(dir / "summary.json") << run_summary(r).dump(2) << '\n';
  detail::open_out(dir / "metadata.json") << run_metadata(r).dump(2) << '\n';
  if (!r.prepared.positions.empty()) {
    auto os = detail::open_out(dir / "positions.txt");
    write_positions(os, r.prepared.positions);
  }
}

inline void dump_couplings(const Scenario& sc, const std::filesystem::path& dir) {
  const auto prepared = prepare(sc);
  const auto& cm = *prepared.couplings;
  std::filesystem::create_directories(dir);
  {
    auto os = detail::open_out(dir / "J.csv");
    write_matrix_csv(os, cm.coherent);
  }
  {
    auto os = detail::open_out(dir / "Gamma.csv");
    write_matrix_csv(os, cm.dissipative);
  }
  {
    auto os = detail::open_out(dir / "G.csv");
    write_matrix_csv(os, cm.factor);
  }
  {
    auto os = detail::open_out(dir / "spectrum.csv");
    write_spectrum_csv(os, cm);
  }
  if (!prepared.positions.empty()) {
    auto os = detail::open_out(dir / "positions.txt");
    write_positions(os, prepared.positions);
  }
}

// ---------------------------------------------------------------------------
// Validation against exact references

struct Comparison {
  std::string observable;
  double max_abs = 0.0;
  double rms = 0.0;
  double max_standard_errors = 0.0;
  double final_twa = 0.0;
  double final_exact = 0.0;
  double final_relative = 0.0;
  bool pass = true;
  std::vector<std::string> failures;
};

struct ValidationReport {
  std::string oracle;
  std::vector<double> times;
  std::vector<ObservableRecord> exact;
  std::vector<Comparison> comparisons;
  bool pass = true;
};

/// Which exact method applies: "dicke", "lindblad", or throws Unsupported.
inline std::string select_oracle(const Scenario& sc) {
  if (sc.dephasing || sc.larmor) throw Unsupported("no exact oracle for dephasing or Larmor terms");
  const bool no_drive = sc.drive.rabi == 0.0 && sc.drive.detuning == 0.0;
  if (sc.dicke_coupling && no_drive && sc.initial != InitialState::AllGround) return "dicke";
  if (sc.atoms() <= static_cast<std::size_t>(kMaxLindbladAtoms)) return "lindblad";
  throw Unsupported("no exact oracle: need all-to-all decay without drive or at most 10 emitters");
}

inline std::vector<ObservableRecord> exact_records(const Scenario& sc, const PreparedRun& prep,
                                                   const std::vector<double>& times,
                                                   const std::string& oracle) {
  if (oracle == "dicke") {
    const auto d = dicke_evolve(static_cast<int>(sc.atoms()),
                                sc.initial == InitialState::FullyMixed ? DickeStart::Mixed : DickeStart::Inverted,
                                times);
    std::vector<ObservableRecord> out(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) {
      out[i].t = times[i];
      out[i].excitations = d.excitations[i];
      out[i].total_rate = d.rate[i];
    }
    return out;
  }
  const LindbladSolver solver(*prep.couplings, prep.dynamics.rabi, prep.dynamics.detuning,
                              prep.positions, sc.polarization, sc.directions);
  return solver.evolve(solver.initial_state(sc.initial), times, sc.oracle_step);
}

inline Comparison compare_series(const std::string& name, const std::vector<double>& twa,
                                 const std::vector<double>& se, const std::vector<double>& exact,
                                 const Tolerance* tol) {
  Comparison c;
  c.observable = name;
  double sum2 = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < twa.size(); ++i) {
    if (!std::isfinite(twa[i]) || !std::isfinite(exact[i])) continue;
    const double dev = std::abs(twa[i] - exact[i]);
    c.max_abs = std::max(c.max_abs, dev);
    sum2 += dev * dev;
    ++used;
    if (!se.empty()) {
      const double ratio = se[i] > 0.0 ? dev / se[i] : (dev > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0);
      c.max_standard_errors = std::max(c.max_standard_errors, ratio);
    }
    c.final_twa = twa[i];
    c.final_exact = exact[i];
  }
  c.rms = used ? std::sqrt(sum2 / static_cast<double>(used)) : 0.0;
  c.final_relative = std::abs(c.final_twa - c.final_exact) / std::max(std::abs(c.final_exact), 1e-300);
  if (!tol) return c;
  auto check = [&](const std::optional<double>& bound, double value, const char* what) {
    if (bound && !(value <= *bound)) {
      c.pass = false;
      c.failures.push_back(std::string(what) + " " + std::to_string(value) + " > " + std::to_string(*bound));
    }
  };
  if (used == 0 && (tol->max_abs || tol->rms || tol->max_standard_errors || tol->final_relative)) {
    c.pass = false;
    c.failures.push_back("no comparable points");
  }
  check(tol->max_abs, c.max_abs, "max_abs");
  check(tol->rms, c.rms, "rms");
  if (tol->max_standard_errors) {
    if (se.empty()) throw ConfigError("/validate/tolerances/" + name + ": no standard error available");
    check(tol->max_standard_errors, c.max_standard_errors, "max_standard_errors");
  }
  check(tol->final_relative, c.final_relative, "final_relative");
  return c;
}

inline ValidationReport validate_run(const RunResult& run) {
  const auto& sc = run.scenario;
  ValidationReport rep;
  rep.oracle = select_oracle(sc);
  rep.times = run.ensemble.times;
  rep.exact = exact_records(sc, run.prepared, rep.times, rep.oracle);

  auto find_tol = [&](const std::string& name) -> const Tolerance* {
    for (const auto& [obs, t] : sc.tolerances) {
      if (obs == name) return &t;
    }
    return nullptr;
  };
  const std::size_t n = rep.times.size();
  auto column = [&](auto get) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get(i);
    return v;
  };
  rep.comparisons.push_back(compare_series(
      "excitations", column([&](std::size_t i) { return run.records[i].excitations; }),
      column([&](std::size_t i) { return run.records[i].excitations_se; }),
      column([&](std::size_t i) { return rep.exact[i].excitations; }), find_tol("excitations")));
  rep.comparisons.push_back(compare_series(
      "total_rate", column([&](std::size_t i) { return run.records[i].total_rate; }),
      column([&](std::size_t i) { return run.records[i].total_rate_se; }),
      column([&](std::size_t i) { return rep.exact[i].total_rate; }), find_tol("total_rate")));
  if (rep.oracle == "lindblad") {
    rep.comparisons.push_back(compare_series(
        "squeezing", column([&](std::size_t i) { return run.records[i].squeezing; }), {},
        column([&](std::size_t i) { return rep.exact[i].squeezing; }), find_tol("squeezing")));
    for (std::size_t k = 0; k < sc.directions.size(); ++k) {
      const std::string name = "directional_" + std::to_string(k);
      rep.comparisons.push_back(compare_series(
          name, column([&](std::size_t i) { return run.records[i].directional[k]; }),
          column([&](std::size_t i) { return run.ensemble.records[i].directional[k].standard_error(); }),
          column([&](std::size_t i) { return rep.exact[i].directional[k]; }), find_tol(name)));
    }
  }
  for (const auto& [obs, t] : sc.tolerances) {
    bool found = false;
    for (const auto& c : rep.comparisons) found = found || c.observable == obs;
    if (!found) throw ConfigError("/validate/tolerances/" + obs + ": not available with the " + rep.oracle + " oracle");
  }
  for (const auto& c : rep.comparisons) rep.pass = rep.pass && c.pass;
  return rep;
}

inline nlohmann::json report_json(const ValidationReport& rep) {
  nlohmann::json j;
  j["oracle"] = rep.oracle;
  j["pass"] = rep.pass;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : rep.comparisons) {
    arr.push_back({{"observable", c.observable},
                   {"max_abs", c.max_abs},
                   {"rms", c.rms},
                   {"max_standard_errors", c.max_standard_errors},
                   {"final_twa", c.final_twa},
                   {"final_exact", c.final_exact},
                   {"final_relative", c.final_relative},
                   {"pass", c.pass},
                   {"failures", c.failures}});
  }
  j["comparisons"] = arr;
  return j;
}

inline void write_validation(const std::filesystem::path& dir, const RunResult& run,
                             const ValidationReport& rep) {
  write_run(dir, run);
  detail::open_out(dir / "validation.json") << report_json(rep).dump(2) << '\n';
  auto os = detail::open_out(dir / "comparison.csv");
  os << "t,excitations_twa,excitations_exact,total_rate_twa,total_rate_exact,xi2_twa,xi2_exact\n";
  for (std::size_t i = 0; i < rep.times.size(); ++i) {
    os << rep.times[i] << ',' << run.records[i].excitations << ',' << rep.exact[i].excitations << ','
       << run.records[i].total_rate << ',' << rep.exact[i].total_rate << ',' << run.records[i].squeezing
       << ',' << rep.exact[i].squeezing << '\n';
  }
}

}  // namespace twa
