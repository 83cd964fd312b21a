#include "apportion/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace apportion {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t hash) {
  for (unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

nlohmann::json graph_to_json(const Graph& graph) {
  nlohmann::json j;
  j["nodes"] = graph.node_count();
  auto edges = nlohmann::json::array();
  for (const auto& [from, to] : graph.edges())
    edges.push_back(nlohmann::json::array({from, to}));
  j["edges"] = std::move(edges);
  if (graph.diameter_bound()) j["diameter_bound"] = *graph.diameter_bound();
  return j;
}

Graph graph_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("graph: expected an object");
  if (!j.contains("nodes") || !j.at("nodes").is_number_integer())
    throw ValidationError("graph.nodes: integer required");
  if (!j.contains("edges") || !j.at("edges").is_array())
    throw ValidationError("graph.edges: array required");
  const int nodes = j.at("nodes").get<int>();
  std::vector<std::pair<int, int>> edges;
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2)
      throw ValidationError("graph.edges: each edge must be [from, to]");
    edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
  }
  std::optional<int> bound;
  if (j.contains("diameter_bound")) bound = j.at("diameter_bound").get<int>();
  return Graph(nodes, std::move(edges), bound);
}

namespace {

DerKind kind_from_string(const std::string& s) {
  if (s == "RES") return DerKind::RES;
  if (s == "ESS") return DerKind::ESS;
  throw ValidationError("ders.kind: expected \"RES\" or \"ESS\"");
}

CommandMode mode_from_string(const std::string& s) {
  if (s == "black") return CommandMode::black;
  if (s == "brown") return CommandMode::brown;
  throw ValidationError("schedule.mode: expected \"black\" or \"brown\"");
}

const char* kScenarioKeys[] = {
    "name",      "graph",        "rho",     "tau_bar", "rounds_per_second",
    "seed",      "theta_min",    "epoch_cap",          "res_priority",
    "eps_res",   "ders",         "irradiance",         "schedule"};

}  // namespace

nlohmann::json scenario_to_json(const Scenario& s) {
  nlohmann::json j;
  j["name"] = s.name;
  j["graph"] = graph_to_json(s.graph);
  j["rho"] = s.tolerance;
  j["tau_bar"] = s.max_delay;
  j["rounds_per_second"] = s.rounds_per_second;
  j["seed"] = s.seed;
  j["theta_min"] = s.theta_min;
  j["epoch_cap"] = s.epoch_cap;
  j["res_priority"] = s.res_priority;
  j["eps_res"] = s.eps_res;
  auto ders = nlohmann::json::array();
  for (const auto& der : s.ders) {
    nlohmann::json d;
    d["kind"] = der.kind == DerKind::RES ? "RES" : "ESS";
    d["pi_min"] = der.pi_min;
    d["pi_max"] = der.pi_max;
    d["rating"] = der.rating;
    d["g_stc"] = der.g_stc;
    d["ramp_limit"] = der.ramp_limit;
    ders.push_back(std::move(d));
  }
  j["ders"] = std::move(ders);
  nlohmann::json irr;
  irr["times"] = s.irradiance.times;
  irr["values"] = s.irradiance.values;
  j["irradiance"] = std::move(irr);
  auto schedule = nlohmann::json::array();
  for (const auto& cmd : s.schedule) {
    nlohmann::json c;
    c["t"] = cmd.time_s;
    c["mode"] = cmd.mode == CommandMode::black ? "black" : "brown";
    c["magnitude"] = cmd.magnitude;
    c["circulating"] = cmd.circulating;
    schedule.push_back(std::move(c));
  }
  j["schedule"] = std::move(schedule);
  return j;
}

Scenario scenario_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("scenario: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* key : kScenarioKeys)
      if (it.key() == key) known = true;
    if (!known)
      throw ValidationError("scenario: unknown field \"" + it.key() + "\"");
  }
  Scenario s;
  try {
    s.name = j.value("name", std::string{});
    if (!j.contains("graph")) throw ValidationError("graph: required");
    s.graph = graph_from_json(j.at("graph"));
    if (!j.contains("rho")) throw ValidationError("rho: required");
    s.tolerance = j.at("rho").get<double>();
    s.max_delay = j.value("tau_bar", 0);
    s.rounds_per_second = j.value("rounds_per_second", 20.0);
    s.seed = j.value("seed", std::uint64_t{1});
    s.theta_min = j.value("theta_min", 3);
    s.epoch_cap = j.value("epoch_cap", 200L);
    s.res_priority = j.value("res_priority", false);
    s.eps_res = j.value("eps_res", 0.0);

    if (!j.contains("ders") || !j.at("ders").is_array())
      throw ValidationError("ders: array required");
    for (const auto& d : j.at("ders")) {
      DerSpec der;
      if (!d.contains("kind")) throw ValidationError("ders.kind: required");
      der.kind = kind_from_string(d.at("kind").get<std::string>());
      der.pi_min = d.value("pi_min", 0.0);
      der.pi_max = d.value("pi_max", 0.0);
      der.rating = d.value("rating", 0.0);
      der.g_stc = d.value("g_stc", 1000.0);
      der.ramp_limit = d.value("ramp_limit", 0.0);
      s.ders.push_back(der);
    }

    if (j.contains("irradiance")) {
      const auto& irr = j.at("irradiance");
      if (irr.contains("fixed")) {
        s.irradiance = IrradianceProfile::fixed(irr.at("fixed").get<double>());
      } else {
        s.irradiance.times = irr.value("times", std::vector<double>{});
        s.irradiance.values = irr.value("values", std::vector<double>{});
        if (s.irradiance.times.size() != s.irradiance.values.size())
          throw ValidationError("irradiance: times/values length mismatch");
      }
    }

    if (!j.contains("schedule") || !j.at("schedule").is_array())
      throw ValidationError("schedule: array required");
    for (const auto& c : j.at("schedule")) {
      CommandInstant cmd;
      if (!c.contains("t")) throw ValidationError("schedule.t: required");
      cmd.time_s = c.at("t").get<double>();
      if (!c.contains("mode")) throw ValidationError("schedule.mode: required");
      cmd.mode = mode_from_string(c.at("mode").get<std::string>());
      if (!c.contains("magnitude"))
        throw ValidationError("schedule.magnitude: required");
      cmd.magnitude = c.at("magnitude").get<double>();
      cmd.circulating = c.value("circulating", std::vector<int>{});
      s.schedule.push_back(std::move(cmd));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scenario: malformed field: ") +
                          e.what());
  }
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("scenario " + path + ": invalid JSON: " + e.what());
  }
  return scenario_from_json(j);
}

void save_scenario(const Scenario& scenario, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write scenario file: " + path);
  out << scenario_to_json(scenario).dump(2) << "\n";
}

std::string config_digest(const Scenario& scenario) {
  return hex64(fnv1a(scenario_to_json(scenario).dump()));
}

std::string format_trace_row(Round round, const NodeState& node,
                             double early_pi) {
  std::string row;
  row.reserve(96);
  row += std::to_string(round);
  row += ',';
  row += std::to_string(node.node_id);
  row += ',';
  row += format_double(node.num_mass);
  row += ',';
  row += format_double(node.den_mass);
  row += ',';
  row += format_double(node.max_ratio);
  row += ',';
  row += format_double(node.min_ratio);
  row += ',';
  row += std::to_string(node.epoch);
  row += ',';
  row += node.converged ? '1' : '0';
  row += ',';
  if (!std::isnan(early_pi)) row += format_double(early_pi);
  row += '\n';
  return row;
}

struct TraceWriter::File {
  std::ofstream out;
};

TraceWriter::TraceWriter(std::string prefix) : prefix_(std::move(prefix)) {}

std::function<RoundSink(int)> TraceWriter::sink_factory() {
  return [this](int cmd_index) -> RoundSink {
    auto file = std::make_shared<File>();
    std::string path = prefix_ + "_cmd" + std::to_string(cmd_index) + ".csv";
    file->out.open(path, std::ios::binary);
    if (!file->out) throw ValidationError("cannot write trace file: " + path);
    paths_.push_back(path);
    files_.push_back(file);
    file->out << kTraceHeader;
    hash_ = fnv1a(kTraceHeader, hash_);
    return [this, file](Round round, std::span<const NodeState> nodes,
                        std::span<const double> early_pi) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        std::string row = format_trace_row(round, nodes[i], early_pi[i]);
        file->out << row;
        hash_ = fnv1a(row, hash_);
      }
    };
  };
}

void TraceWriter::close() {
  for (auto& file : files_) file->out.close();
  files_.clear();
}

}  // namespace apportion
