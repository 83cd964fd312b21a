#include "apportion/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

namespace apportion {

EngineKind engine_from_string(const std::string& name) {
  if (name == "reference") return EngineKind::reference;
  if (name == "parallel") return EngineKind::parallel;
  throw ValidationError("engine: expected 'reference' or 'parallel'");
}

std::string to_string(EngineKind kind) {
  return kind == EngineKind::reference ? "reference" : "parallel";
}

IrradianceProfile IrradianceProfile::fixed(double value) {
  IrradianceProfile p;
  p.times = {0.0};
  p.values = {value};
  return p;
}

double IrradianceProfile::sample(double t) const {
  if (values.empty()) return 0.0;
  double current = values.front();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] <= t) current = values[i];
    else break;
  }
  return current;
}

double irradiance_to_capacity(double irradiance, double rating_kw,
                              double g_stc) {
  if (irradiance < 0.0)
    throw ValidationError("irradiance: negative irradiance");
  if (g_stc <= 0.0) throw ValidationError("irradiance: g_stc must be positive");
  if (rating_kw < 0.0) throw ValidationError("irradiance: negative rating");
  return rating_kw * std::min(irradiance / g_stc, 1.0);
}

PlantState plant_track(const PlantState& plant, double reference) {
  if (plant.ramp_limit <= 0.0)
    throw ValidationError("plant: ramp_limit must be positive");
  PlantState next = plant;
  next.commanded = reference;
  const double gap = reference - plant.output;
  if (std::abs(gap) <= plant.ramp_limit)
    next.output = reference;
  else
    next.output = plant.output + (gap > 0 ? plant.ramp_limit : -plant.ramp_limit);
  return next;
}

int Scenario::effective_diameter() const {
  int d = graph.diameter_bound() ? *graph.diameter_bound()
                                 : exact_diameter(graph);
  return std::max(d, 1);
}

void validate_scenario(const Scenario& scenario) {
  const int n = scenario.graph.node_count();
  if (!validate_strong_connectivity(scenario.graph))
    throw ValidationError("graph: not strongly connected");
  if (scenario.graph.diameter_bound()) {
    int exact = exact_diameter(scenario.graph);
    if (*scenario.graph.diameter_bound() < exact)
      throw ValidationError("graph: diameter_bound below the exact diameter");
  }
  if (!(scenario.tolerance > 0.0))
    throw ValidationError("rho: must be positive");
  if (scenario.max_delay < 0)
    throw ValidationError("tau_bar: must be non-negative");
  if (!(scenario.rounds_per_second > 0.0))
    throw ValidationError("rounds_per_second: must be positive");
  if (scenario.epoch_cap < 1)
    throw ValidationError("epoch_cap: must be at least 1");
  if (scenario.theta_min < 0)
    throw ValidationError("theta_min: must be non-negative");
  if (scenario.eps_res < 0.0)
    throw ValidationError("eps_res: must be non-negative");
  if (static_cast<int>(scenario.ders.size()) != n)
    throw ValidationError("ders: need exactly one entry per graph node");

  for (std::size_t i = 0; i < scenario.ders.size(); ++i) {
    const auto& der = scenario.ders[i];
    const std::string at = "ders[" + std::to_string(i) + "]: ";
    if (der.rating < 0.0) throw ValidationError(at + "negative rating");
    if (der.rating > 0.0 && der.g_stc <= 0.0)
      throw ValidationError(at + "g_stc must be positive");
    if (der.rating == 0.0 && der.pi_max < der.pi_min)
      throw ValidationError(at + "pi_max below pi_min");
    if (der.ramp_limit < 0.0) throw ValidationError(at + "negative ramp_limit");
    if (der.rating > 0.0 && scenario.irradiance.empty())
      throw ValidationError(at + "irradiance profile required for rated unit");
  }
  for (std::size_t i = 0; i + 1 < scenario.irradiance.times.size(); ++i)
    if (!(scenario.irradiance.times[i] < scenario.irradiance.times[i + 1]))
      throw ValidationError("irradiance: times must be strictly increasing");
  for (double g : scenario.irradiance.values)
    if (g < 0.0) throw ValidationError("irradiance: negative value");

  double prev_t = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < scenario.schedule.size(); ++m) {
    const auto& cmd = scenario.schedule[m];
    const std::string at = "schedule[" + std::to_string(m) + "]: ";
    if (!(cmd.time_s > prev_t))
      throw ValidationError(at + "times must be strictly increasing");
    prev_t = cmd.time_s;
    if (m == 0 && cmd.mode != CommandMode::black)
      throw ValidationError(at + "first command must be a black start");
    if (!std::isfinite(cmd.magnitude))
      throw ValidationError(at + "magnitude must be finite");
    if (cmd.circulating.empty())
      throw ValidationError(at + "needs at least one circulating node");
    for (int id : cmd.circulating)
      if (id < 0 || id >= n)
        throw ValidationError(at + "circulating node out of range");
  }
}

std::vector<DerCapacity> sample_capacities(const Scenario& scenario,
                                           double t) {
  const double g = scenario.irradiance.sample(t);
  std::vector<DerCapacity> caps;
  caps.reserve(scenario.ders.size());
  for (const auto& der : scenario.ders) {
    DerCapacity cap;
    cap.kind = der.kind;
    cap.pi_min = der.pi_min;
    cap.pi_max = der.rating > 0.0
                     ? irradiance_to_capacity(g, der.rating, der.g_stc)
                     : der.pi_max;
    caps.push_back(cap);
  }
  if (scenario.res_priority) caps = prioritize_res(caps, scenario.eps_res);
  for (auto& cap : caps) cap = normalize_capacity(cap);
  return caps;
}

namespace {

// Splits [0,n) across worker threads for the parallel engine; the reference
// engine and small populations run inline. Any exception from a worker is
// rethrown after the join.
void for_range(int n, EngineKind engine, int threads,
               const std::function<void(int, int)>& fn) {
  int workers = 1;
  if (engine == EngineKind::parallel) {
    workers = threads > 0 ? threads
                          : static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers = std::min(workers, n / 64);
  }
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex err_mutex;
  std::exception_ptr error = nullptr;
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

struct World::Impl {
  const Graph* graph = nullptr;
  const WeightAssignment* weights = nullptr;
  InstantOptions opt;
  int stage_len = 1;
  long epoch_len = 1;
  int window = 2;
  Round round = 0;
  bool all_converged = false;
  double last_gap = std::numeric_limits<double>::quiet_NaN();

  std::vector<NodeState> nodes;
  // ring[slot][node]: messages due at rounds with round % window == slot
  std::vector<std::vector<std::vector<MassMessage>>> mass_ring;
  std::vector<std::vector<std::vector<ExtremumMessage>>> ext_ring;
  std::vector<std::vector<ExtremumMessage>> ext_pending;
  std::vector<std::vector<int>> out_edge_index;  // per node, out_neighbors order
  std::vector<BoundaryRecord> boundaries;
  // Rolling per-node ratios over the last stage_len rounds; tracker resets
  // are seeded from these windows.
  std::vector<std::vector<double>> ratio_window;

  bool record_history = false;
  std::vector<std::vector<double>> history;

  double num_total0 = 0.0;
  double den_total0 = 0.0;
  double audit_scale = 1.0;

  int delay_draw(int edge_index, Round send_round) const {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(edge_index) << 32) ^
        static_cast<std::uint64_t>(send_round);
    return keyed_draw(opt.seed, key, opt.max_delay);
  }

  void enqueue(const MassMessage& msg) {
    mass_ring[msg.deliver_round % window][msg.to].push_back(msg);
  }
  void enqueue(const ExtremumMessage& msg) {
    ext_ring[msg.deliver_round % window][msg.to].push_back(msg);
  }

  // Emits each unconverged node's mass shares and tracker values for the
  // current round. The mass and extremum message on one edge share a single
  // delay draw: they model one packet, which is what keeps the trackers
  // covering every mass a node has absorbed at stage boundaries.
  void emit_all() {
    const int n = graph->node_count();
    std::vector<std::vector<MassMessage>> mass_out(n);
    std::vector<std::vector<ExtremumMessage>> ext_out(n);
    for_range(n, opt.engine, opt.threads, [&](int begin, int end) {
      std::vector<int> delays;
      for (int i = begin; i < end; ++i) {
        if (nodes[i].converged) continue;
        const auto& neighbors = graph->out_neighbors(i);
        delays.resize(neighbors.size());
        for (std::size_t j = 0; j < neighbors.size(); ++j)
          delays[j] = delay_draw(out_edge_index[i][j], round);
        mass_out[i] = emit_masses(nodes[i], *graph, *weights, delays);
        ext_out[i].reserve(neighbors.size());
        for (std::size_t j = 0; j < neighbors.size(); ++j) {
          ExtremumMessage msg;
          msg.from = i;
          msg.to = neighbors[j];
          msg.max_ratio = nodes[i].max_ratio;
          msg.min_ratio = nodes[i].min_ratio;
          msg.stage_index = nodes[i].stage;
          msg.epoch = nodes[i].epoch;
          msg.send_round = round;
          msg.deliver_round = round + 1 + delays[j];
          ext_out[i].push_back(msg);
        }
      }
    });
    for (int i = 0; i < n; ++i) {
      for (const auto& msg : mass_out[i]) enqueue(msg);
      for (const auto& msg : ext_out[i]) enqueue(msg);
    }
  }

  void audit() const {
    double num_sum = 0.0;
    double den_sum = 0.0;
    for (const auto& node : nodes) {
      if (!(node.den_mass > 0.0))
        throw ProtocolViolation("audit: non-positive denominator mass at node " +
                                std::to_string(node.node_id));
      num_sum += node.num_mass;
      den_sum += node.den_mass;
    }
    for (const auto& slot : mass_ring) {
      for (const auto& inbox : slot) {
        for (const auto& msg : inbox) {
          num_sum += msg.mass_num;
          den_sum += msg.mass_den;
        }
      }
    }
    if (std::abs(num_sum - num_total0) > 1e-9 * audit_scale ||
        std::abs(den_sum - den_total0) > 1e-9 * audit_scale)
      throw ProtocolViolation("audit: mass conservation violated at round " +
                              std::to_string(round));
  }
};

World::World(const Graph& graph, const WeightAssignment& weights,
             const InstantOptions& options, const InitialMasses& init)
    : impl_(std::make_unique<Impl>()) {
  const int n = graph.node_count();
  if (static_cast<int>(init.num0.size()) != n ||
      static_cast<int>(init.den0.size()) != n)
    throw ValidationError("world: initial mass vectors must match node count");
  if (static_cast<int>(weights.out_weight.size()) != n)
    throw ValidationError("world: weight assignment must match node count");
  for (double s0 : init.den0)
    if (!(s0 > 0.0))
      throw ValidationError("world: initial denominator mass must be positive");

  impl_->graph = &graph;
  impl_->weights = &weights;
  impl_->opt = options;
  impl_->stage_len = options.max_delay + 1;
  impl_->epoch_len = epoch_length(options.diameter, options.max_delay);
  impl_->window = options.max_delay + 2;
  impl_->mass_ring.assign(impl_->window,
                          std::vector<std::vector<MassMessage>>(n));
  impl_->ext_ring.assign(impl_->window,
                         std::vector<std::vector<ExtremumMessage>>(n));
  impl_->ext_pending.assign(n, {});

  impl_->out_edge_index.resize(n);
  for (int i = 0; i < n; ++i) {
    const auto& neighbors = graph.out_neighbors(i);
    impl_->out_edge_index[i].reserve(neighbors.size());
    for (int to : neighbors)
      impl_->out_edge_index[i].push_back(graph.edge_index(i, to));
  }

  impl_->nodes.resize(n);
  impl_->ratio_window.assign(n, {});
  double abs_num = 0.0;
  double abs_den = 0.0;
  for (int i = 0; i < n; ++i) {
    NodeState& node = impl_->nodes[i];
    node.node_id = i;
    node.num_mass = init.num0[i];
    node.den_mass = init.den0[i];
    const double ratio = node.ratio();
    node.max_ratio = ratio;
    node.min_ratio = ratio;
    impl_->ratio_window[i].push_back(ratio);
    impl_->num_total0 += node.num_mass;
    impl_->den_total0 += node.den_mass;
    abs_num += std::abs(node.num_mass);
    abs_den += std::abs(node.den_mass);
  }
  impl_->audit_scale = std::max({1.0, abs_num, abs_den});

  // The ledger balances before each round's emission: an emitted share only
  // leaves the sender's stored mass at its next update.
  if (options.audit) impl_->audit();
  impl_->emit_all();  // round-0 emission; first updates consume it
}

World::~World() = default;
World::World(World&&) noexcept = default;
World& World::operator=(World&&) noexcept = default;

RoundEvents World::run_round() {
  Impl& w = *impl_;
  if (w.all_converged)
    throw ProtocolViolation("run_round: all nodes already converged");
  const int n = w.graph->node_count();
  const Round next = w.round + 1;
  const int slot = static_cast<int>(next % w.window);

  RoundEvents events;
  events.stage_boundary = (next % w.stage_len == 0);
  events.epoch_boundary = (next % w.epoch_len == 0);

  // Ratio updates plus delivery of extremum values into the per-node pending
  // sets. Each node's inbox slice is private to it, so this parallelizes.
  for_range(n, w.opt.engine, w.opt.threads, [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      auto& mass_in = w.mass_ring[slot][i];
      auto& ext_in = w.ext_ring[slot][i];
      w.nodes[i] = ratio_update(w.nodes[i], mass_in,
                                w.weights->self_weight(i));
      mass_in.clear();
      for (const auto& msg : ext_in) w.ext_pending[i].push_back(msg);
      ext_in.clear();
      auto& window = w.ratio_window[i];
      window.push_back(w.nodes[i].ratio());
      if (window.size() > static_cast<std::size_t>(w.stage_len))
        window.erase(window.begin());
    }
  });

  if (events.stage_boundary) {
    for_range(n, w.opt.engine, w.opt.threads, [&](int begin, int end) {
      for (int i = begin; i < end; ++i) {
        w.nodes[i] =
            extremum_stage_update(w.nodes[i], w.ext_pending[i], w.stage_len);
        w.ext_pending[i].clear();
      }
    });
  }

  if (events.epoch_boundary) {
    BoundaryRecord record;
    record.theta = w.nodes[0].epoch;
    record.round = next;
    record.max_tracker.resize(n);
    record.min_tracker.resize(n);
    record.ratios.resize(n);
    for (int i = 0; i < n; ++i) {
      record.max_tracker[i] = w.nodes[i].max_ratio;
      record.min_tracker[i] = w.nodes[i].min_ratio;
      record.ratios[i] = w.nodes[i].ratio();
    }
    w.last_gap = w.nodes[0].max_ratio - w.nodes[0].min_ratio;

    std::vector<EpochOutcome> outcomes(n);
    for_range(n, w.opt.engine, w.opt.threads, [&](int begin, int end) {
      for (int i = begin; i < end; ++i)
        outcomes[i] = epoch_check(w.nodes[i], w.opt.tolerance, w.epoch_len,
                                  w.ratio_window[i]);
    });
    // The termination predicate compares globally agreed extrema, so every
    // node must reach the same verdict at the same boundary.
    for (int i = 1; i < n; ++i)
      if (outcomes[i].converged != outcomes[0].converged)
        throw ProtocolViolation("epoch boundary: nodes disagree on termination");
    for (int i = 0; i < n; ++i) w.nodes[i] = outcomes[i].state;

    record.converged = outcomes[0].converged;
    if (!record.converged) {
      record.reset_max.resize(n);
      record.reset_min.resize(n);
      for (int i = 0; i < n; ++i) {
        record.reset_max[i] = w.nodes[i].max_ratio;
        record.reset_min[i] = w.nodes[i].min_ratio;
      }
    }
    w.boundaries.push_back(std::move(record));
    if (outcomes[0].converged) {
      w.all_converged = true;
      events.all_converged = true;
    } else {
      events.reset = true;
      events.snapshot_theta = outcomes[0].snapshot_epoch;
    }
  }

  w.round = next;
  if (w.record_history)
    for (int i = 0; i < n; ++i) w.history[i].push_back(w.nodes[i].ratio());
  if (w.opt.audit) w.audit();
  if (!w.all_converged) w.emit_all();
  return events;
}

bool World::all_converged() const { return impl_->all_converged; }
Round World::round() const { return impl_->round; }
long World::epoch_len() const { return impl_->epoch_len; }
int World::stage_len() const { return impl_->stage_len; }
std::span<const NodeState> World::nodes() const { return impl_->nodes; }
const std::vector<BoundaryRecord>& World::boundaries() const {
  return impl_->boundaries;
}
double World::last_extrema_gap() const { return impl_->last_gap; }

void World::enable_history() {
  Impl& w = *impl_;
  if (w.round != 0)
    throw ValidationError("world: history must be enabled before rounds run");
  w.record_history = true;
  w.history.assign(w.nodes.size(), {});
  for (std::size_t i = 0; i < w.nodes.size(); ++i)
    w.history[i].push_back(w.nodes[i].ratio());
}

const std::vector<std::vector<double>>& World::ratio_history() const {
  return impl_->history;
}

InstantResult run_command_instant(const Graph& graph,
                                  const WeightAssignment& weights,
                                  const InstantOptions& options,
                                  const CommandInstant& cmd,
                                  const std::vector<DerCapacity>& caps,
                                  const DispatchVector* prev,
                                  const InstantRunSettings& settings) {
  std::vector<DerCapacity> caps_norm;
  caps_norm.reserve(caps.size());
  for (const auto& cap : caps) caps_norm.push_back(normalize_capacity(cap));

  InstantResult result;
  InitialMasses init;
  if (cmd.mode == CommandMode::black) {
    init = init_black(cmd, caps_norm);
    result.implied_abs = cmd.magnitude;
  } else {
    if (!prev)
      throw ValidationError("brown start: previous dispatch required");
    init = init_brown(cmd, caps_norm, *prev);
    const auto& carried =
        prev->pi_star_raw.empty() ? prev->pi_star : prev->pi_star_raw;
    double carried_sum = 0.0;
    for (double v : carried) carried_sum += v;
    result.implied_abs = cmd.magnitude + carried_sum;
  }
  result.feasibility = check_feasibility(result.implied_abs, caps_norm);
  result.oracle_ratio = oracle_consensus_ratio(init.num0, init.den0);
  result.initial_ratios.resize(caps_norm.size());
  for (std::size_t i = 0; i < caps_norm.size(); ++i)
    result.initial_ratios[i] = init.num0[i] / init.den0[i];

  World world(graph, weights, options, init);
  if (settings.record_history) world.enable_history();

  const int n = graph.node_count();
  std::vector<double> early_pi(n, std::numeric_limits<double>::quiet_NaN());
  if (settings.sink) settings.sink(0, world.nodes(), early_pi);

  while (!world.all_converged()) {
    RoundEvents events = world.run_round();
    if (events.reset) {
      const BoundaryRecord& boundary = world.boundaries().back();
      EpochSnapshot snapshot;
      snapshot.theta = events.snapshot_theta;
      snapshot.ratios = boundary.ratios;
      auto dispatch = early_dispatch(snapshot.ratios, caps_norm,
                                     snapshot.theta, settings.theta_min,
                                     result.implied_abs, result.feasibility);
      if (dispatch) {
        if (result.early_from_theta == 0)
          result.early_from_theta = snapshot.theta;
        early_pi = dispatch->pi_star;
        result.early.push_back(std::move(*dispatch));
      }
      result.snapshots.push_back(std::move(snapshot));
      if (world.nodes()[0].epoch > options.epoch_cap)
        throw EpochCapExceeded(
            "epoch cap " + std::to_string(options.epoch_cap) +
                " exhausted; extrema gap " +
                std::to_string(world.last_extrema_gap()) + " vs tolerance " +
                std::to_string(options.tolerance),
            world.last_extrema_gap());
    }
    if (settings.sink) settings.sink(world.round(), world.nodes(), early_pi);
  }

  result.final_ratios.resize(n);
  for (int i = 0; i < n; ++i)
    result.final_ratios[i] =
        world.nodes()[i].final_num / world.nodes()[i].final_den;
  result.epochs_used = world.nodes()[0].epoch;
  result.rounds_used = world.round();
  result.boundaries = world.boundaries();
  if (settings.record_history) result.ratio_history = world.ratio_history();

  if (result.feasibility == Feasibility::feasible) {
    result.terminal = dispatch_from_ratios(result.final_ratios, caps_norm,
                                           result.implied_abs,
                                           Feasibility::feasible);
  } else {
    result.terminal = clamp_infeasible(result.feasibility, result.implied_abs,
                                       caps_norm);
    // Carry the unclamped allocation so the command ledger telescopes
    // exactly through the infeasible stretch.
    for (std::size_t i = 0; i < caps_norm.size(); ++i)
      result.terminal.pi_star_raw[i] =
          caps_norm[i].pi_min + result.final_ratios[i] * caps_norm[i].headroom();
  }
  return result;
}

SimTrace run_scenario(const Scenario& scenario,
                      const ScenarioRunSettings& settings) {
  validate_scenario(scenario);
  const WeightAssignment weights = synthesize_weights(scenario.graph);
  const int diameter = scenario.effective_diameter();
  const int n = scenario.graph.node_count();
  const double dt = 1.0 / scenario.rounds_per_second;

  SimTrace trace;
  trace.seed = scenario.seed;
  trace.dt_s = dt;

  std::vector<PlantState> plants(n);
  std::vector<double> references(n, 0.0);
  Round global_round = 0;

  auto default_ramp = [](const DerSpec& der) {
    double span = std::max({std::abs(der.pi_min), std::abs(der.pi_max),
                            der.rating, 1.0});
    return 0.05 * span;
  };
  for (int i = 0; i < n; ++i) {
    plants[i].ramp_limit = scenario.ders[i].ramp_limit > 0.0
                               ? scenario.ders[i].ramp_limit
                               : default_ramp(scenario.ders[i]);
  }

  auto step_plants = [&]() {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      plants[i] = plant_track(plants[i], references[i]);
      total += plants[i].output;
    }
    trace.total_output.push_back(total);
    ++global_round;
  };

  DispatchVector prev;
  bool have_prev = false;
  double nominal_abs = 0.0;
  std::vector<Round> command_starts;
  Round busy_until = 0;  // consensus must finish before the next command

  for (std::size_t m = 0; m < scenario.schedule.size(); ++m) {
    const CommandInstant& cmd = scenario.schedule[m];
    const Round start_round = std::llround(cmd.time_s / dt);
    if (start_round < busy_until)
      throw ValidationError(
          "schedule[" + std::to_string(m) +
          "]: previous command instant had not converged by t=" +
          std::to_string(cmd.time_s));
    if (settings.simulate_plants)
      while (global_round < start_round) step_plants();

    const auto caps = sample_capacities(scenario, cmd.time_s);
    InstantOptions options;
    options.tolerance = scenario.tolerance;
    options.max_delay = scenario.max_delay;
    options.diameter = diameter;
    options.epoch_cap = scenario.epoch_cap;
    options.seed = splitmix64(scenario.seed ^ (m + 1));
    options.engine = settings.engine;
    options.threads = settings.threads;
    options.audit = settings.audit;

    InstantRunSettings run;
    run.theta_min = scenario.theta_min;
    run.record_history = settings.record_history;
    RoundSink file_sink =
        settings.make_sink ? settings.make_sink(static_cast<int>(m))
                           : RoundSink{};
    if (settings.simulate_plants) {
      run.sink = [&, file_sink](Round round, std::span<const NodeState> nodes,
                                std::span<const double> early_pi) {
        if (round > 0) {
          for (int i = 0; i < n; ++i)
            if (!std::isnan(early_pi[i])) references[i] = early_pi[i];
          step_plants();
        }
        if (file_sink) file_sink(round, nodes, early_pi);
      };
    } else {
      run.sink = file_sink;
    }

    InstantResult result;
    const std::string where =
        "schedule[" + std::to_string(m) + "] at t=" + std::to_string(cmd.time_s);
    try {
      result = run_command_instant(scenario.graph, weights, options, cmd, caps,
                                   have_prev ? &prev : nullptr, run);
    } catch (const EpochCapExceeded& e) {
      throw EpochCapExceeded(where + ": " + e.what(), e.extrema_gap);
    } catch (const std::exception& e) {
      throw ValidationError(where + ": " + e.what());
    }

    nominal_abs = cmd.mode == CommandMode::black ? cmd.magnitude
                                                 : nominal_abs + cmd.magnitude;

    CommandSummary summary;
    summary.index = static_cast<int>(m);
    summary.time_s = cmd.time_s;
    summary.mode = cmd.mode;
    summary.magnitude = cmd.magnitude;
    summary.nominal_abs = nominal_abs;
    summary.implied_abs = result.implied_abs;
    summary.feasibility = result.feasibility;
    summary.epochs_used = result.epochs_used;
    summary.rounds_used = result.rounds_used;
    summary.sum_pi_star = 0.0;
    for (double v : result.terminal.pi_star) summary.sum_pi_star += v;
    summary.residual = result.terminal.residual;
    summary.clamp_count = result.terminal.clamp_count;
    summary.early_from_theta = result.early_from_theta;
    summary.oracle_ratio = result.oracle_ratio;
    for (std::size_t i = 0; i < result.final_ratios.size(); ++i)
      summary.max_ratio_error =
          std::max(summary.max_ratio_error,
                   std::abs(result.final_ratios[i] - result.oracle_ratio));
    summary.response_rounds =
        result.early_from_theta > 0
            ? static_cast<double>(result.early_from_theta - 1) *
                  static_cast<double>(epoch_length(diameter,
                                                   scenario.max_delay))
            : static_cast<double>(result.rounds_used);

    references = result.terminal.pi_star;
    prev = result.terminal;
    have_prev = true;
    busy_until = start_round + result.rounds_used;
    command_starts.push_back(start_round);
    trace.commands.push_back(summary);
    trace.results.push_back(std::move(result));
  }

  // Tail: let the plants finish slewing to the last terminal dispatch.
  if (settings.simulate_plants) {
    long guard = 0;
    for (;;) {
      bool settled = true;
      for (int i = 0; i < n; ++i)
        if (plants[i].output != references[i]) settled = false;
      if (settled) break;
      step_plants();
      if (++guard > 100'000'000L)
        throw ValidationError("plants failed to settle");
    }
  }

  // Derived metric: rounds from each command's arrival until the total
  // output first enters a 5% band around that command's terminal sum.
  if (settings.simulate_plants) {
    for (std::size_t m = 0; m < trace.commands.size(); ++m) {
      const Round begin = command_starts[m];
      const Round end = m + 1 < command_starts.size()
                            ? command_starts[m + 1]
                            : static_cast<Round>(trace.total_output.size());
      const double target = trace.commands[m].sum_pi_star;
      const double band = 0.05 * std::max(std::abs(target), 1.0);
      Round crossed = end;
      for (Round r = begin; r < end; ++r) {
        if (std::abs(trace.total_output[r] - target) <= band) {
          crossed = r;
          break;
        }
      }
      trace.commands[m].ramp_rounds = std::max<Round>(crossed - begin, 0);
    }
  }

  return trace;
}

TraceAudit audit_instant(const InstantResult& result) {
  TraceAudit audit;
  // Converged trackers at each boundary must equal the extrema of the seeds
  // the trackers took at the previous reset (initial ratios for the first).
  const std::vector<double>* seed_max = &result.initial_ratios;
  const std::vector<double>* seed_min = &result.initial_ratios;
  for (std::size_t b = 0; b < result.boundaries.size(); ++b) {
    const BoundaryRecord& boundary = result.boundaries[b];
    double expect_max = (*seed_max)[0];
    double expect_min = (*seed_min)[0];
    for (double r : *seed_max) expect_max = std::max(expect_max, r);
    for (double r : *seed_min) expect_min = std::min(expect_min, r);
    for (std::size_t i = 0; i < boundary.max_tracker.size(); ++i) {
      if (boundary.max_tracker[i] != expect_max) ++audit.extremum_mismatches;
      if (boundary.min_tracker[i] != expect_min) ++audit.extremum_mismatches;
      // Slack of a few ulps: boundary ratios are quotients of freshly mixed
      // masses, the trackers are propagated verbatim.
      const double slack =
          1e-12 * std::max({1.0, std::abs(boundary.max_tracker[i]),
                            std::abs(boundary.min_tracker[i])});
      if (boundary.ratios[i] < boundary.min_tracker[i] - slack ||
          boundary.ratios[i] > boundary.max_tracker[i] + slack)
        ++audit.sandwich_violations;
    }
    if (b > 0) {
      const BoundaryRecord& previous = result.boundaries[b - 1];
      if (!(boundary.max_tracker[0] < previous.max_tracker[0]))
        ++audit.monotonicity_violations;
      if (!(boundary.min_tracker[0] > previous.min_tracker[0]))
        ++audit.monotonicity_violations;
    }
    if (!boundary.converged) {
      seed_max = &boundary.reset_max;
      seed_min = &boundary.reset_min;
    }
  }
  return audit;
}

}  // namespace apportion
