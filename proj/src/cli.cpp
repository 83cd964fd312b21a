#include "apportion/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "apportion/io.hpp"

namespace apportion {

namespace {

const char* mode_name(CommandMode mode) {
  return mode == CommandMode::black ? "black" : "brown";
}

nlohmann::json overrides_json(const RunFlags& flags) {
  nlohmann::json j = nlohmann::json::object();
  if (flags.seed) j["seed"] = *flags.seed;
  if (flags.rho) j["rho"] = *flags.rho;
  if (flags.tau_bar) j["tau_bar"] = *flags.tau_bar;
  if (flags.epoch_cap) j["epoch_cap"] = *flags.epoch_cap;
  return j;
}

void apply_overrides(Scenario& scenario, const RunFlags& flags) {
  if (flags.seed) scenario.seed = *flags.seed;
  if (flags.rho) scenario.tolerance = *flags.rho;
  if (flags.tau_bar) scenario.max_delay = *flags.tau_bar;
  if (flags.epoch_cap) scenario.epoch_cap = *flags.epoch_cap;
}

}  // namespace

int cmd_validate(const std::string& scenario_path, std::ostream& out,
                 std::ostream& err) {
  Scenario scenario;
  try {
    scenario = load_scenario(scenario_path);
    validate_scenario(scenario);
    // Capacities must also make sense at every scheduled instant.
    for (const auto& cmd : scenario.schedule) {
      auto caps = sample_capacities(scenario, cmd.time_s);
      double min_sum = 0.0;
      double max_sum = 0.0;
      for (const auto& cap : caps) {
        min_sum += cap.pi_min;
        max_sum += cap.pi_max;
      }
      out << "t=" << format_double(cmd.time_s) << "s " << mode_name(cmd.mode)
          << " " << format_double(cmd.magnitude) << " kW, fleet range ["
          << format_double(min_sum) << ", " << format_double(max_sum)
          << "] kW\n";
    }
  } catch (const std::exception& e) {
    err << "invalid: " << e.what() << "\n";
    return 2;
  }
  out << "ok: " << scenario_path << " (" << scenario.graph.node_count()
      << " nodes, " << scenario.graph.edges().size() << " edges, D="
      << scenario.effective_diameter() << ", "
      << scenario.schedule.size() << " commands)\n";
  return 0;
}

int cmd_run(const std::string& scenario_path, const RunFlags& flags,
            std::ostream& out, std::ostream& err) {
  Scenario scenario;
  try {
    scenario = load_scenario(scenario_path);
    apply_overrides(scenario, flags);
    validate_scenario(scenario);
  } catch (const std::exception& e) {
    err << "invalid: " << e.what() << "\n";
    return 2;
  }

  std::error_code ec;
  std::filesystem::create_directories(flags.out_dir, ec);
  if (ec) {
    err << "cannot create output directory " << flags.out_dir << "\n";
    return 2;
  }

  TraceWriter writer(flags.out_dir + "/trace");
  SimTrace trace;
  try {
    ScenarioRunSettings settings;
    settings.engine = flags.engine;
    settings.threads = flags.threads;
    settings.make_sink = writer.sink_factory();
    trace = run_scenario(scenario, settings);
  } catch (const EpochCapExceeded& e) {
    err << "failed: " << e.what() << "\n";
    return 1;
  } catch (const ProtocolViolation& e) {
    err << "failed: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "invalid: " << e.what() << "\n";
    return 2;
  }
  writer.close();

  bool audits_ok = true;
  nlohmann::json commands = nlohmann::json::array();
  for (std::size_t m = 0; m < trace.commands.size(); ++m) {
    const CommandSummary& cs = trace.commands[m];
    const TraceAudit audit = audit_instant(trace.results[m]);
    if (!audit.passed()) audits_ok = false;

    nlohmann::json c;
    c["index"] = cs.index;
    c["t"] = cs.time_s;
    c["mode"] = mode_name(cs.mode);
    c["magnitude_kw"] = cs.magnitude;
    c["nominal_abs_kw"] = cs.nominal_abs;
    c["implied_abs_kw"] = cs.implied_abs;
    c["feasibility"] = to_string(cs.feasibility);
    c["epochs"] = cs.epochs_used;
    c["rounds"] = cs.rounds_used;
    c["sum_pi_star_kw"] = cs.sum_pi_star;
    c["residual_kw"] = cs.residual;
    c["clamp_count"] = cs.clamp_count;
    c["early_from_theta"] = cs.early_from_theta;
    c["oracle_ratio"] = cs.oracle_ratio;
    c["max_ratio_error"] = cs.max_ratio_error;
    c["response_s"] = cs.response_rounds * trace.dt_s;
    c["ramp_s"] = static_cast<double>(cs.ramp_rounds) * trace.dt_s;
    c["audit"] = {{"extremum_mismatches", audit.extremum_mismatches},
                  {"monotonicity_violations", audit.monotonicity_violations},
                  {"sandwich_violations", audit.sandwich_violations}};
    commands.push_back(std::move(c));

    out << "cmd " << cs.index << " t=" << format_double(cs.time_s) << "s "
        << mode_name(cs.mode) << " " << format_double(cs.magnitude)
        << " kW -> " << to_string(cs.feasibility)
        << " epochs=" << cs.epochs_used << " rounds=" << cs.rounds_used
        << " sum=" << format_double(cs.sum_pi_star)
        << " kW residual=" << format_double(cs.residual)
        << " early_from_theta=" << cs.early_from_theta << "\n";
  }

  nlohmann::json report;
  report["scenario"] = scenario.name;
  report["seed"] = scenario.seed;
  report["engine"] = to_string(flags.engine);
  report["config_digest"] = config_digest(scenario);
  report["trace_digest"] = writer.digest();
  report["overrides"] = overrides_json(flags);
  report["commands"] = std::move(commands);
  report["audits_passed"] = audits_ok;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& path : writer.paths())
    files.push_back(std::filesystem::path(path).filename().string());
  report["trace_files"] = std::move(files);

  const std::string summary_path = flags.out_dir + "/summary.json";
  std::ofstream summary(summary_path, std::ios::binary);
  if (!summary) {
    err << "cannot write " << summary_path << "\n";
    return 1;
  }
  summary << report.dump(2) << "\n";
  summary.close();

  out << "config_digest=" << config_digest(scenario)
      << " trace_digest=" << writer.digest() << "\n";
  out << "audits " << (audits_ok ? "pass" : "FAIL") << "; wrote "
      << summary_path << "\n";
  return audits_ok ? 0 : 1;
}

int cmd_oracle(const std::string& scenario_path, const OracleFlags& flags,
               std::ostream& out, std::ostream& err) {
  Scenario scenario;
  try {
    scenario = load_scenario(scenario_path);
    if (flags.seed) scenario.seed = *flags.seed;
    validate_scenario(scenario);
  } catch (const std::exception& e) {
    err << "invalid: " << e.what() << "\n";
    return 2;
  }
  if (scenario.graph.node_count() > flags.max_nodes) {
    err << "oracle: instance has " << scenario.graph.node_count()
        << " nodes, cap is " << flags.max_nodes << " (--max-nodes)\n";
    return 2;
  }

  SimTrace trace;
  try {
    ScenarioRunSettings settings;
    settings.record_history = true;
    settings.simulate_plants = false;
    trace = run_scenario(scenario, settings);
  } catch (const std::exception& e) {
    err << "failed: " << e.what() << "\n";
    return 1;
  }

  const long T = epoch_length(scenario.effective_diameter(), scenario.max_delay);
  bool flagged = false;
  out << "cmd  oracle_ratio        max|ratio-oracle|   extrema_mismatches\n";
  for (std::size_t m = 0; m < trace.results.size(); ++m) {
    const InstantResult& result = trace.results[m];
    int mismatches = 0;
    for (const auto& boundary : result.boundaries) {
      // The first epoch's trackers are seeded from the initial ratios alone;
      // later resets cover the preceding delay window.
      const Round reset_round = (boundary.theta - 1) * T;
      const int window = boundary.theta == 1 ? 0 : scenario.max_delay;
      WindowExtrema expect =
          oracle_window_extrema(result.ratio_history, reset_round, window);
      for (std::size_t i = 0; i < boundary.max_tracker.size(); ++i) {
        if (boundary.max_tracker[i] != expect.max_ratio) ++mismatches;
        if (boundary.min_tracker[i] != expect.min_ratio) ++mismatches;
      }
    }
    double ratio_error = trace.commands[m].max_ratio_error;
    if (ratio_error >= scenario.tolerance || mismatches > 0) flagged = true;
    out << m << "    " << format_double(result.oracle_ratio) << "    "
        << format_double(ratio_error) << "    " << mismatches << "\n";
  }
  out << (flagged ? "MISMATCH\n" : "all within tolerance\n");
  return flagged ? 1 : 0;
}

}  // namespace apportion
