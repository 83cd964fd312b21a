#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "apportion/simnet.hpp"

namespace apportion {

// Shortest round-trip decimal form of v (std::to_chars); "nan"/"inf" spelled
// out. This is the one formatting used in traces and reports, so identical
// doubles always print identically.
std::string format_double(double value);

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
std::uint64_t fnv1a(std::string_view data, std::uint64_t hash = kFnvOffset);
std::string hex64(std::uint64_t value);

nlohmann::json graph_to_json(const Graph& graph);
Graph graph_from_json(const nlohmann::json& j);

nlohmann::json scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j);

Scenario load_scenario(const std::string& path);
void save_scenario(const Scenario& scenario, const std::string& path);

// Stable hash of the fully resolved scenario (after any CLI overrides).
std::string config_digest(const Scenario& scenario);

inline constexpr std::string_view kTraceHeader =
    "round,node,r,s,z,w,theta,converged,pi_star_early\n";

std::string format_trace_row(Round round, const NodeState& node,
                             double early_pi);

// Streams one CSV file per command instant ("<prefix>_cmd<m>.csv") while
// folding every byte written into a running digest. UTF-8, LF, '.' decimals.
class TraceWriter {
 public:
  explicit TraceWriter(std::string prefix);

  std::function<RoundSink(int)> sink_factory();
  std::string digest() const { return hex64(hash_); }
  const std::vector<std::string>& paths() const { return paths_; }
  void close();

 private:
  struct File;
  std::string prefix_;
  std::uint64_t hash_ = kFnvOffset;
  std::vector<std::string> paths_;
  std::vector<std::shared_ptr<File>> files_;
};

}  // namespace apportion
