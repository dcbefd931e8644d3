// Command-line front end: run, validate, dump-couplings, version.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical failure,
// 4 validation tolerance exceeded.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "twa/runner.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumerical = 3, kTolerance = 4 };

struct Args {
  std::string scenario;
  std::string out = "twa-out";
  std::optional<unsigned> workers;
  std::optional<std::uint64_t> seed;
  bool reproducible = false;
};

void add_common(CLI::App* cmd, Args& a, bool with_run_flags) {
  cmd->add_option("--scenario", a.scenario, "scenario file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", a.out, "output directory");
  if (!with_run_flags) return;
  cmd->add_option("--workers", a.workers, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "override the scenario seed");
  cmd->add_flag("--reproducible", a.reproducible, "fixed reduction order, bit-identical for any worker count");
}

twa::Scenario load(const Args& a) {
  auto sc = twa::load_scenario(a.scenario);
  twa::apply_options(sc, {a.workers, a.seed, a.reproducible});
  return sc;
}

int run(const Args& a) {
  const auto result = twa::simulate(load(a));
  twa::write_run(a.out, result);
  const auto& last = result.records.back();
  std::cout << result.scenario.name << ": " << result.ensemble.trajectories << " trajectories, "
            << result.ensemble.times.size() << " records, " << result.seconds << " s\n"
            << "final t=" << last.t << " excitations=" << last.excitations
            << " total_rate=" << last.total_rate << "\n"
            << "output: " << a.out << "\n";
  if (result.ensemble.failed) {
    std::cerr << "warning: " << result.ensemble.failed << " trajectories blew up and were dropped\n";
  }
  return kOk;
}

int validate(const Args& a) {
  const auto sc = load(a);
  twa::select_oracle(sc);
  const auto result = twa::simulate(sc);
  const auto report = twa::validate_run(result);
  twa::write_validation(a.out, result, report);
  std::cout << "oracle: " << report.oracle << "\n";
  for (const auto& c : report.comparisons) {
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.observable << " max_abs=" << c.max_abs
              << " rms=" << c.rms << " max_se=" << c.max_standard_errors
              << " final_rel=" << c.final_relative;
    for (const auto& f : c.failures) std::cout << " [" << f << "]";
    std::cout << "\n";
  }
  return report.pass ? kOk : kTolerance;
}

int dump(const Args& a) {
  twa::dump_couplings(load(a), a.out);
  std::cout << "couplings written to " << a.out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Truncated Wigner simulator for coupled two-level emitters"};
  app.require_subcommand(1);
  Args args;
  auto* run_cmd = app.add_subcommand("run", "integrate a scenario and write time series");
  auto* val_cmd = app.add_subcommand("validate", "compare a scenario against its exact reference");
  auto* dump_cmd = app.add_subcommand("dump-couplings", "write J, Gamma, G and the spectrum as CSV");
  auto* ver_cmd = app.add_subcommand("version", "print the version");
  add_common(run_cmd, args, true);
  add_common(val_cmd, args, true);
  add_common(dump_cmd, args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*ver_cmd) {
      std::cout << "twa " << twa::kVersion << "\n";
      return kOk;
    }
    if (*run_cmd) return run(args);
    if (*val_cmd) return validate(args);
    if (*dump_cmd) return dump(args);
  } catch (const twa::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const twa::Unsupported& e) {
    std::cerr << "unsupported: " << e.what() << "\n";
    return kConfig;
  } catch (const twa::InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kConfig;
  } catch (const twa::DegenerateGeometry& e) {
    std::cerr << "geometry error: " << e.what() << "\n";
    return kConfig;
  } catch (const twa::Error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  }
  return kOk;
}
