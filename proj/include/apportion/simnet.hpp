#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "apportion/apportion.hpp"
#include "apportion/protocol.hpp"
#include "apportion/topology.hpp"

namespace apportion {

// Raised when a command instant exhausts its epoch budget. Carries the
// extremum gap at the last boundary for diagnosis.
struct EpochCapExceeded : std::runtime_error {
  EpochCapExceeded(const std::string& what, double gap)
      : std::runtime_error(what), extrema_gap(gap) {}
  double extrema_gap = 0.0;
};

enum class EngineKind { reference, parallel };

EngineKind engine_from_string(const std::string& name);
std::string to_string(EngineKind kind);

// Step profile sampled by last-value-before semantics. An empty profile
// samples to 0.
struct IrradianceProfile {
  std::vector<double> times;   // seconds, strictly increasing
  std::vector<double> values;  // W/m^2

  static IrradianceProfile fixed(double value);
  double sample(double t) const;
  bool empty() const { return values.empty(); }
};

// pi_max of an irradiance-driven unit: rating * min(g/g_stc, 1).
double irradiance_to_capacity(double irradiance, double rating_kw,
                              double g_stc);

// Static description of one DER; capacities are sampled from this at each
// command instant. rating > 0 makes pi_max irradiance-driven, otherwise the
// fixed pi_max applies.
struct DerSpec {
  DerKind kind = DerKind::ESS;
  double pi_min = 0.0;
  double pi_max = 0.0;
  double rating = 0.0;
  double g_stc = 1000.0;
  double ramp_limit = 0.0;  // kW per round; <= 0 picks a default
};

// First-order actuator: output slews toward the commanded reference by at
// most ramp_limit per round and snaps once within one step.
struct PlantState {
  double commanded = 0.0;
  double output = 0.0;
  double ramp_limit = 1.0;
};

PlantState plant_track(const PlantState& plant, double reference);

struct Scenario {
  std::string name;
  Graph graph;
  double tolerance = 0.01;        // rho
  int max_delay = 0;              // rounds
  double rounds_per_second = 20.0;
  std::uint64_t seed = 1;
  int theta_min = 3;
  long epoch_cap = 200;
  bool res_priority = false;
  double eps_res = 0.0;           // absolute kW override; 0 = per-node default
  std::vector<DerSpec> ders;
  IrradianceProfile irradiance;
  std::vector<CommandInstant> schedule;

  // Diameter bound used for the epoch length: the graph's stated bound when
  // present, otherwise the exact diameter; never below 1.
  int effective_diameter() const;
};

// Throws ValidationError with a per-field message on the first problem.
void validate_scenario(const Scenario& scenario);

// Capacities at wall-clock time t: irradiance-driven pi_max, then RES
// prioritization when enabled, then normalization.
std::vector<DerCapacity> sample_capacities(const Scenario& scenario, double t);

struct InstantOptions {
  double tolerance = 0.01;
  int max_delay = 0;
  int diameter = 1;
  long epoch_cap = 200;
  std::uint64_t seed = 1;
  EngineKind engine = EngineKind::reference;
  int threads = 0;    // 0 = hardware concurrency
  bool audit = true;  // per-round conservation / positivity checks
};

// State and snapshot of every node at one epoch boundary, taken before any
// tracker reset. ratios are the would-be snapshot values r/s at the boundary;
// reset_max/reset_min are the per-node window seeds the trackers took when
// this boundary did not terminate (empty when it did).
struct BoundaryRecord {
  int theta = 0;
  Round round = 0;
  bool converged = false;
  std::vector<double> max_tracker;
  std::vector<double> min_tracker;
  std::vector<double> ratios;
  std::vector<double> reset_max;
  std::vector<double> reset_min;
};

struct RoundEvents {
  bool stage_boundary = false;
  bool epoch_boundary = false;
  bool reset = false;  // trackers were re-seeded; a snapshot was recorded
  bool all_converged = false;
  int snapshot_theta = 0;
};

// One command instant's consensus network: nodes, in-flight messages and the
// boundary bookkeeping. Rounds are globally synchronous; per-message delays
// are drawn from a stateless per-edge stream so results do not depend on
// execution order.
class World {
 public:
  World(const Graph& graph, const WeightAssignment& weights,
        const InstantOptions& options, const InitialMasses& init);
  ~World();
  World(World&&) noexcept;
  World& operator=(World&&) noexcept;

  RoundEvents run_round();
  bool all_converged() const;
  Round round() const;
  long epoch_len() const;
  int stage_len() const;
  std::span<const NodeState> nodes() const;
  const std::vector<BoundaryRecord>& boundaries() const;

  // Ratio series per node covering rounds 0..round(); populated only when
  // recording was enabled.
  void enable_history();
  const std::vector<std::vector<double>>& ratio_history() const;

  // Extremum gap z-w at the most recent epoch boundary; NaN before the first.
  double last_extrema_gap() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Per-round observer: node states plus each node's active early-dispatch
// power reference (NaN until one exists).
using RoundSink = std::function<void(
    Round round, std::span<const NodeState> nodes,
    std::span<const double> early_pi)>;

struct EpochSnapshot {
  int theta = 0;
  std::vector<double> ratios;
};

struct InstantResult {
  DispatchVector terminal;
  std::vector<double> final_ratios;
  double implied_abs = 0.0;  // absolute command the masses encode
  Feasibility feasibility = Feasibility::feasible;
  int epochs_used = 0;
  Round rounds_used = 0;
  int early_from_theta = 0;  // first dispatched epoch tag, 0 if none
  std::vector<EpochSnapshot> snapshots;
  std::vector<DispatchVector> early;
  std::vector<BoundaryRecord> boundaries;
  std::vector<std::vector<double>> ratio_history;  // when recorded
  std::vector<double> initial_ratios;
  double oracle_ratio = 0.0;
};

struct InstantRunSettings {
  int theta_min = 3;
  bool record_history = false;
  RoundSink sink;  // may be empty
};

// Runs one command instant to termination: initializes the masses (black or
// brown via `prev`), iterates rounds, materializes early dispatches for
// theta > theta_min and the terminal dispatch (clamped; saturation vector
// when the implied command is infeasible).
InstantResult run_command_instant(const Graph& graph,
                                  const WeightAssignment& weights,
                                  const InstantOptions& options,
                                  const CommandInstant& cmd,
                                  const std::vector<DerCapacity>& caps,
                                  const DispatchVector* prev,
                                  const InstantRunSettings& settings);

struct CommandSummary {
  int index = 0;
  double time_s = 0.0;
  CommandMode mode = CommandMode::black;
  double magnitude = 0.0;
  double nominal_abs = 0.0;  // cumulative commanded value
  double implied_abs = 0.0;  // value the mass ledger encodes
  Feasibility feasibility = Feasibility::feasible;
  int epochs_used = 0;
  Round rounds_used = 0;
  double sum_pi_star = 0.0;
  double residual = 0.0;
  int clamp_count = 0;
  int early_from_theta = 0;
  double oracle_ratio = 0.0;
  double max_ratio_error = 0.0;     // max_i |r*/s* - oracle|
  double response_rounds = 0.0;     // rounds until first reference update
  Round ramp_rounds = 0;            // rounds until output within 5% of final
};

struct SimTrace {
  std::uint64_t seed = 0;
  std::vector<CommandSummary> commands;
  std::vector<InstantResult> results;
  std::vector<double> total_output;  // per global round, kW
  double dt_s = 0.05;
  bool audits_passed = true;
};

struct ScenarioRunSettings {
  EngineKind engine = EngineKind::reference;
  int threads = 0;
  bool audit = true;
  bool record_history = false;
  bool simulate_plants = true;
  // Per-command sink factory for streaming traces; may be empty.
  std::function<RoundSink(int cmd_index)> make_sink;
};

SimTrace run_scenario(const Scenario& scenario,
                      const ScenarioRunSettings& settings = {});

// Post-run checks over one instant's boundary records:
//  - trackers at every boundary equal the extrema of the previous reset's
//    seeds exactly, at every node;
//  - converged maxima strictly decrease and minima strictly increase;
//  - every snapshot ratio lies inside that boundary's [min,max] trackers
//    (up to a few ulps of quotient rounding).
struct TraceAudit {
  int extremum_mismatches = 0;
  int monotonicity_violations = 0;
  int sandwich_violations = 0;

  bool passed() const {
    return extremum_mismatches == 0 && monotonicity_violations == 0 &&
           sandwich_violations == 0;
  }
};

TraceAudit audit_instant(const InstantResult& result);

}  // namespace apportion
