#include "apportion/protocol.hpp"

#include <algorithm>
#include <string>

namespace apportion {

NodeState ratio_update(const NodeState& state,
                       std::span<const MassMessage> delivered,
                       double self_weight) {
  if (state.converged)
    throw ProtocolViolation("ratio_update on a converged node");
  const Round next_round = state.round + 1;
  for (const auto& msg : delivered) {
    if (msg.to != state.node_id)
      throw ProtocolViolation("ratio_update: message addressed to node " +
                              std::to_string(msg.to) + " delivered to node " +
                              std::to_string(state.node_id));
    if (msg.deliver_round != next_round)
      throw ProtocolViolation("ratio_update: message due at round " +
                              std::to_string(msg.deliver_round) +
                              " applied at round " +
                              std::to_string(next_round));
  }

  // Sum in (send_round, sender) order so the result does not depend on how
  // the delivery queue happened to be assembled.
  std::vector<const MassMessage*> ordered;
  ordered.reserve(delivered.size());
  for (const auto& msg : delivered) ordered.push_back(&msg);
  std::sort(ordered.begin(), ordered.end(),
            [](const MassMessage* a, const MassMessage* b) {
              if (a->send_round != b->send_round)
                return a->send_round < b->send_round;
              return a->from < b->from;
            });

  NodeState next = state;
  next.num_mass = self_weight * state.num_mass;
  next.den_mass = self_weight * state.den_mass;
  for (const MassMessage* msg : ordered) {
    next.num_mass += msg->mass_num;
    next.den_mass += msg->mass_den;
  }
  next.round = next_round;
  return next;
}

std::vector<MassMessage> emit_masses(const NodeState& state,
                                     const Graph& graph,
                                     const WeightAssignment& weights,
                                     std::span<const int> delay_draw) {
  if (state.converged)
    throw ProtocolViolation("emit_masses on a converged node");
  const auto& neighbors = graph.out_neighbors(state.node_id);
  if (delay_draw.size() != neighbors.size())
    throw ProtocolViolation("emit_masses: one delay per out-neighbor required");

  const double weight = weights.out_weight[state.node_id];
  std::vector<MassMessage> out;
  out.reserve(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    MassMessage msg;
    msg.from = state.node_id;
    msg.to = neighbors[i];
    msg.mass_num = weight * state.num_mass;
    msg.mass_den = weight * state.den_mass;
    msg.send_round = state.round;
    msg.deliver_round = state.round + 1 + delay_draw[i];
    out.push_back(msg);
  }
  return out;
}

NodeState extremum_stage_update(const NodeState& state,
                                std::span<const ExtremumMessage> stage_msgs,
                                int stage_len) {
  if (state.converged)
    throw ProtocolViolation("extremum_stage_update on a converged node");
  if (state.round != static_cast<Round>(state.stage) * stage_len)
    throw ProtocolViolation("extremum_stage_update off a stage boundary");

  NodeState next = state;
  for (const auto& msg : stage_msgs) {
    if (msg.to != state.node_id)
      throw ProtocolViolation("extremum_stage_update: misdelivered message");
    if (msg.epoch != state.epoch) continue;  // value predates the last reset
    next.max_ratio = std::max(next.max_ratio, msg.max_ratio);
    next.min_ratio = std::min(next.min_ratio, msg.min_ratio);
  }
  next.stage += 1;
  return next;
}

EpochOutcome epoch_check(const NodeState& state, double tolerance,
                         Round epoch_len,
                         std::span<const double> window_ratios) {
  if (state.converged)
    throw ProtocolViolation("epoch_check on a converged node");
  if (state.round != static_cast<Round>(state.epoch) * epoch_len)
    throw ProtocolViolation("epoch_check off an epoch boundary");
  if (window_ratios.empty())
    throw ProtocolViolation("epoch_check: empty ratio window");

  EpochOutcome outcome;
  outcome.state = state;
  if (state.max_ratio - state.min_ratio < tolerance) {
    outcome.converged = true;
    outcome.state.converged = true;
    outcome.state.final_num = state.num_mass;
    outcome.state.final_den = state.den_mass;
    return outcome;
  }
  double seed_max = window_ratios[0];
  double seed_min = window_ratios[0];
  for (double r : window_ratios) {
    seed_max = std::max(seed_max, r);
    seed_min = std::min(seed_min, r);
  }
  outcome.state.max_ratio = seed_max;
  outcome.state.min_ratio = seed_min;
  outcome.state.epoch += 1;
  outcome.snapshot_ratio = state.ratio();
  outcome.snapshot_epoch = outcome.state.epoch;
  return outcome;
}

double oracle_consensus_ratio(std::span<const double> num0,
                              std::span<const double> den0) {
  if (num0.size() != den0.size())
    throw ValidationError("oracle: vector size mismatch");
  double num_sum = 0.0;
  double den_sum = 0.0;
  for (double v : num0) num_sum += v;
  for (double v : den0) den_sum += v;
  if (den_sum <= 0.0)
    throw ValidationError("oracle: denominator sum must be positive");
  return num_sum / den_sum;
}

WindowExtrema oracle_window_extrema(
    const std::vector<std::vector<double>>& ratio_history, Round round,
    int window) {
  if (window < 0) throw ValidationError("window extrema: negative window");
  if (round - window < 0)
    throw ValidationError("window extrema: history does not cover the window");
  bool first = true;
  WindowExtrema extrema;
  for (const auto& series : ratio_history) {
    if (static_cast<Round>(series.size()) <= round)
      throw ValidationError("window extrema: incomplete history");
    for (Round r = round - window; r <= round; ++r) {
      double value = series[r];
      if (first) {
        extrema.max_ratio = value;
        extrema.min_ratio = value;
        first = false;
      } else {
        extrema.max_ratio = std::max(extrema.max_ratio, value);
        extrema.min_ratio = std::min(extrema.min_ratio, value);
      }
    }
  }
  if (first) throw ValidationError("window extrema: empty history");
  return extrema;
}

}  // namespace apportion
