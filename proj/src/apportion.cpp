#include "apportion/apportion.hpp"

#include <algorithm>
#include <cmath>

namespace apportion {

DerCapacity normalize_capacity(const DerCapacity& cap) {
  if (!std::isfinite(cap.pi_min) || !std::isfinite(cap.pi_max))
    throw ValidationError("capacity: non-finite bound");
  if (cap.pi_max < cap.pi_min)
    throw ValidationError("capacity: pi_max below pi_min");
  DerCapacity out = cap;
  if (out.headroom() < kMinHeadroom) out.pi_max = out.pi_min + kMinHeadroom;
  return out;
}

std::string to_string(Feasibility f) {
  switch (f) {
    case Feasibility::feasible: return "feasible";
    case Feasibility::over_demand: return "over_demand";
    case Feasibility::under_demand: return "under_demand";
  }
  return "unknown";
}

namespace {

void check_command(const CommandInstant& cmd, std::size_t node_count) {
  if (cmd.circulating.empty())
    throw ValidationError("command: needs at least one circulating node");
  for (int id : cmd.circulating)
    if (id < 0 || id >= static_cast<int>(node_count))
      throw ValidationError("command: circulating node out of range");
}

}  // namespace

InitialMasses init_black(const CommandInstant& cmd,
                         const std::vector<DerCapacity>& caps) {
  if (cmd.mode != CommandMode::black)
    throw ValidationError("init_black: command is not a black start");
  check_command(cmd, caps.size());

  const double share = cmd.magnitude / static_cast<double>(cmd.circulating.size());
  InitialMasses init;
  init.num0.resize(caps.size());
  init.den0.resize(caps.size());
  for (std::size_t i = 0; i < caps.size(); ++i) {
    const DerCapacity cap = normalize_capacity(caps[i]);
    init.num0[i] = -cap.pi_min;
    init.den0[i] = cap.headroom();
  }
  for (int id : cmd.circulating) init.num0[id] += share;
  return init;
}

InitialMasses init_brown(const CommandInstant& cmd,
                         const std::vector<DerCapacity>& caps,
                         const DispatchVector& prev) {
  if (cmd.mode != CommandMode::brown)
    throw ValidationError("init_brown: command is not a brown start");
  check_command(cmd, caps.size());
  const auto& carried =
      prev.pi_star_raw.empty() ? prev.pi_star : prev.pi_star_raw;
  if (carried.size() != caps.size())
    throw ValidationError("init_brown: previous dispatch missing or wrong size");

  const double share = cmd.magnitude / static_cast<double>(cmd.circulating.size());
  InitialMasses init;
  init.num0.resize(caps.size());
  init.den0.resize(caps.size());
  for (std::size_t i = 0; i < caps.size(); ++i) {
    const DerCapacity cap = normalize_capacity(caps[i]);
    init.num0[i] = -cap.pi_min + carried[i];
    init.den0[i] = cap.headroom();
  }
  for (int id : cmd.circulating) init.num0[id] += share;
  return init;
}

DerCapacity apply_res_priority(const DerCapacity& cap, double eps_res) {
  if (cap.kind != DerKind::RES)
    throw ValidationError("res priority: capacity is not RES");
  if (eps_res <= 0.0)
    throw ValidationError("res priority: eps_res must be positive");
  DerCapacity out = cap;
  out.pi_min = out.pi_max - eps_res;
  return out;
}

double res_priority_margin(const DerCapacity& cap, double eps_res_override) {
  if (eps_res_override > 0.0) return eps_res_override;
  return 1e-3 * cap.pi_max;
}

std::vector<DerCapacity> prioritize_res(const std::vector<DerCapacity>& caps,
                                        double eps_res_override) {
  std::vector<DerCapacity> out;
  out.reserve(caps.size());
  for (const auto& cap : caps) {
    if (cap.kind != DerKind::RES) {
      out.push_back(cap);
      continue;
    }
    const double eps = res_priority_margin(cap, eps_res_override);
    out.push_back(eps > 0.0 ? apply_res_priority(cap, eps) : cap);
  }
  return out;
}

double dispatch_from_ratio(double ratio, const DerCapacity& cap,
                           bool* clamped) {
  double r = ratio;
  if (r < 0.0) r = 0.0;
  if (r > 1.0) r = 1.0;
  if (clamped) *clamped = (r != ratio);
  return cap.pi_min + r * cap.headroom();
}

DispatchVector dispatch_from_ratios(const std::vector<double>& ratios,
                                    const std::vector<DerCapacity>& caps,
                                    double cmd_abs, Feasibility feasibility) {
  if (ratios.size() != caps.size())
    throw ValidationError("dispatch: ratio/capacity size mismatch");
  DispatchVector out;
  out.feasibility = feasibility;
  out.pi_star.resize(caps.size());
  out.pi_star_raw.resize(caps.size());
  double total = 0.0;
  for (std::size_t i = 0; i < caps.size(); ++i) {
    bool clamped = false;
    out.pi_star[i] = dispatch_from_ratio(ratios[i], caps[i], &clamped);
    out.pi_star_raw[i] = caps[i].pi_min + ratios[i] * caps[i].headroom();
    if (clamped) ++out.clamp_count;
    total += out.pi_star[i];
  }
  out.residual = cmd_abs - total;
  return out;
}

std::optional<DispatchVector> early_dispatch(
    const std::vector<double>& snapshot_ratios,
    const std::vector<DerCapacity>& caps, int theta, int theta_min,
    double cmd_abs, Feasibility feasibility) {
  if (theta <= theta_min) return std::nullopt;
  DispatchVector out =
      dispatch_from_ratios(snapshot_ratios, caps, cmd_abs, feasibility);
  out.theta = theta;
  return out;
}

Feasibility check_feasibility(double cmd_abs,
                              const std::vector<DerCapacity>& caps) {
  double min_sum = 0.0;
  double max_sum = 0.0;
  for (const auto& cap : caps) {
    min_sum += cap.pi_min;
    max_sum += cap.pi_max;
  }
  if (cmd_abs > max_sum) return Feasibility::over_demand;
  if (cmd_abs < min_sum) return Feasibility::under_demand;
  return Feasibility::feasible;
}

DispatchVector clamp_infeasible(Feasibility kind, double cmd_abs,
                                const std::vector<DerCapacity>& caps) {
  if (kind == Feasibility::feasible)
    throw ValidationError("clamp_infeasible: command is feasible");
  DispatchVector out;
  out.feasibility = kind;
  out.pi_star.resize(caps.size());
  double total = 0.0;
  for (std::size_t i = 0; i < caps.size(); ++i) {
    out.pi_star[i] =
        kind == Feasibility::over_demand ? caps[i].pi_max : caps[i].pi_min;
    total += out.pi_star[i];
  }
  out.pi_star_raw = out.pi_star;
  out.residual = cmd_abs - total;
  return out;
}

}  // namespace apportion
