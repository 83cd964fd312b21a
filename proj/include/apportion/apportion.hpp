#pragma once

#include <optional>
#include <string>
#include <vector>

#include "apportion/topology.hpp"

namespace apportion {

enum class DerKind { RES, ESS };

// Generation envelope of one DER at a command instant, in kW. pi_min may be
// negative (storage charging). Headroom pi_max - pi_min is the node's share
// of the denominator mass and must stay strictly positive; see
// normalize_capacity.
struct DerCapacity {
  double pi_min = 0.0;
  double pi_max = 0.0;
  DerKind kind = DerKind::ESS;

  double headroom() const { return pi_max - pi_min; }
};

// Smallest headroom kept after normalization, kW.
inline constexpr double kMinHeadroom = 1e-6;

// Validates pi_max >= pi_min and inflates a degenerate envelope so the
// headroom is at least kMinHeadroom.
DerCapacity normalize_capacity(const DerCapacity& cap);

enum class CommandMode { black, brown };

// One aggregator command: an absolute target (black) or a delta against the
// previous allocation (brown), injected through the circulating nodes.
struct CommandInstant {
  double time_s = 0.0;
  CommandMode mode = CommandMode::black;
  double magnitude = 0.0;  // kW; absolute for black, delta for brown
  std::vector<int> circulating;
};

enum class Feasibility { feasible, over_demand, under_demand };

std::string to_string(Feasibility f);

// Per-node power references for one command instant. pi_star holds the
// physical (box-clamped) commands; pi_star_raw the unclamped ratio mapping,
// which is what brown starts carry forward so the command ledger telescopes
// exactly across infeasible instants.
struct DispatchVector {
  std::vector<double> pi_star;
  std::vector<double> pi_star_raw;
  double residual = 0.0;  // commanded minus allocated
  Feasibility feasibility = Feasibility::feasible;
  int clamp_count = 0;
  int theta = 0;  // epoch tag for early dispatches, 0 for terminal
};

struct InitialMasses {
  std::vector<double> num0;  // r(0), kW
  std::vector<double> den0;  // s(0), kW
};

// Black start: circulating nodes seed magnitude/l minus their floor, all
// others minus their floor; denominators are the headrooms.
InitialMasses init_black(const CommandInstant& cmd,
                         const std::vector<DerCapacity>& caps);

// Brown start: like black but seeded with the delta plus the previous
// allocation, so sum(num0) equals the black-start sum at the implied
// absolute command.
InitialMasses init_brown(const CommandInstant& cmd,
                         const std::vector<DerCapacity>& caps,
                         const DispatchVector& prev);

// RES prioritization: lift the floor to pi_max - eps_res so the renewable
// node's capacity is committed before storage. Rejects ESS input.
DerCapacity apply_res_priority(const DerCapacity& cap, double eps_res);

// Fleet-wide prioritization; ESS entries pass through untouched. A RES node
// uses eps_res_override when positive, else 1e-3*pi_max; nodes with no
// positive capacity are left alone (normalization keeps them alive).
std::vector<DerCapacity> prioritize_res(const std::vector<DerCapacity>& caps,
                                        double eps_res_override = 0.0);

// Per-node eps_res actually applied by prioritize_res.
double res_priority_margin(const DerCapacity& cap, double eps_res_override);

// pi_min + ratio*headroom, with the ratio clamped to [0,1] first. `clamped`,
// when given, is set if clamping occurred.
double dispatch_from_ratio(double ratio, const DerCapacity& cap,
                           bool* clamped = nullptr);

// Maps every node's ratio; residual is measured against cmd_abs.
DispatchVector dispatch_from_ratios(const std::vector<double>& ratios,
                                    const std::vector<DerCapacity>& caps,
                                    double cmd_abs, Feasibility feasibility);

// Early dispatch from an epoch snapshot; withheld for theta <= theta_min.
std::optional<DispatchVector> early_dispatch(
    const std::vector<double>& snapshot_ratios,
    const std::vector<DerCapacity>& caps, int theta, int theta_min,
    double cmd_abs, Feasibility feasibility);

// feasible iff sum(pi_min) <= cmd_abs <= sum(pi_max).
Feasibility check_feasibility(double cmd_abs,
                              const std::vector<DerCapacity>& caps);

// Saturation dispatch for infeasible commands: everyone at pi_max
// (over-demand) or pi_min (under-demand), residual carrying the gap.
DispatchVector clamp_infeasible(Feasibility kind, double cmd_abs,
                                const std::vector<DerCapacity>& caps);

}  // namespace apportion
