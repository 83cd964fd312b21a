#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "apportion/simnet.hpp"

namespace apportion {

struct RunFlags {
  std::optional<std::uint64_t> seed;
  std::optional<double> rho;
  std::optional<int> tau_bar;
  std::optional<long> epoch_cap;
  std::string out_dir = "out";
  EngineKind engine = EngineKind::reference;
  int threads = 0;
};

struct OracleFlags {
  std::optional<std::uint64_t> seed;
  int max_nodes = 64;
};

// Checks the scenario file field by field; prints diagnostics. 0 on success,
// 2 on any validation failure.
int cmd_validate(const std::string& scenario_path, std::ostream& out,
                 std::ostream& err);

// Runs the scenario, writes per-command trace CSVs and summary.json into the
// output directory. 0 when every command converged and all audits pass, 1 on
// a runtime failure (epoch cap, audit), 2 on invalid input.
int cmd_run(const std::string& scenario_path, const RunFlags& flags,
            std::ostream& out, std::ostream& err);

// Cross-checks the simulator against the centralized oracles on a small
// instance: consensus-ratio error per command and exact tracker-vs-extrema
// comparison at every epoch boundary. 0 when everything matches.
int cmd_oracle(const std::string& scenario_path, const OracleFlags& flags,
               std::ostream& out, std::ostream& err);

}  // namespace apportion
