#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "apportion/topology.hpp"

namespace apportion {

struct ProtocolViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Round = std::int64_t;

// One DER node's protocol state for a single command instant.
//
// num_mass/den_mass are the two consensus masses in kW (command share and
// headroom). max_ratio/min_ratio are the staged extremum trackers; they are
// reset to the node's own ratio at every epoch boundary and only absorb
// values from the current epoch. Once `converged` latches, the state is
// frozen and final_num/final_den hold the terminal masses.
struct NodeState {
  int node_id = 0;
  double num_mass = 0.0;
  double den_mass = 0.0;
  double max_ratio = 0.0;
  double min_ratio = 0.0;
  Round round = 0;
  int stage = 1;   // next stage boundary is at round stage*(max_delay+1)
  int epoch = 1;   // next epoch boundary is at round epoch*epoch_len
  bool converged = false;
  double final_num = 0.0;
  double final_den = 0.0;

  double ratio() const { return num_mass / den_mass; }
};

// Mass share sent to one out-neighbor. Delivered exactly once, at
// send_round + 1 + d where d is the per-message delay in {0..max_delay}.
struct MassMessage {
  int from = 0;
  int to = 0;
  double mass_num = 0.0;  // kW
  double mass_den = 0.0;  // kW
  Round send_round = 0;
  Round deliver_round = 0;
};

// Extremum tracker values sent to one out-neighbor. Emitted every round and
// consumed at stage boundaries; the epoch tag keeps values emitted before a
// tracker reset from leaking into the following epoch.
struct ExtremumMessage {
  int from = 0;
  int to = 0;
  double max_ratio = 0.0;
  double min_ratio = 0.0;
  int stage_index = 0;
  int epoch = 0;
  Round send_round = 0;
  Round deliver_round = 0;
};

// Advances the mass pair one round: masses scale by the self weight and
// absorb every delivered share. `delivered` must be exactly the mass
// messages due at state.round + 1.
NodeState ratio_update(const NodeState& state,
                       std::span<const MassMessage> delivered,
                       double self_weight);

// One message per out-neighbor carrying (w*num, w*den) with w the sender's
// common out-weight; the self share stays local and is never sent.
// `delay_draw` holds one delay per out-neighbor, in out_neighbors() order.
std::vector<MassMessage> emit_masses(const NodeState& state,
                                     const Graph& graph,
                                     const WeightAssignment& weights,
                                     std::span<const int> delay_draw);

// Stage-boundary tracker update: absorb the max/min of every same-epoch
// message received during the stage. Must be invoked exactly when
// state.round == state.stage * stage_len. Messages from earlier epochs are
// ignored; between boundaries the trackers hold constant.
NodeState extremum_stage_update(const NodeState& state,
                                std::span<const ExtremumMessage> stage_msgs,
                                int stage_len);

struct EpochOutcome {
  NodeState state;
  bool converged = false;
  // Set when not converged: the ratio snapshot recorded for the new epoch.
  double snapshot_ratio = 0.0;
  int snapshot_epoch = 0;
};

// Epoch-boundary termination check. Must be invoked exactly when
// state.round == state.epoch * epoch_len. Converges (freezing the masses)
// when max_ratio - min_ratio < tolerance; otherwise re-seeds the trackers
// from `window_ratios` — the node's own ratios over the last max_delay+1
// rounds, newest last — advances the epoch and reports the current ratio as
// the early-dispatch snapshot. The window seed (rather than the bare current
// ratio) is what keeps shares still in flight across the reset covered by
// the trackers; with no delays the window is the single current ratio.
EpochOutcome epoch_check(const NodeState& state, double tolerance,
                         Round epoch_len,
                         std::span<const double> window_ratios);

// Centralized oracle: the value every ratio converges to, sum(num0)/sum(den0).
// Test use only. Rejects sum(den0) <= 0.
double oracle_consensus_ratio(std::span<const double> num0,
                              std::span<const double> den0);

struct WindowExtrema {
  double max_ratio = 0.0;
  double min_ratio = 0.0;
};

// Brute-force extrema of ratio_history[node][r] over all nodes and
// r in {round - window .. round}. ratio_history[node] must cover rounds
// 0..round for every node. window = 0 degenerates to the single round.
WindowExtrema oracle_window_extrema(
    const std::vector<std::vector<double>>& ratio_history, Round round,
    int window);

}  // namespace apportion
