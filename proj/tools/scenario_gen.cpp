// Regenerates the bundled scenario files. The topology is seeded, so the
// output is reproducible byte for byte:
//   scenario-gen [out_dir]
#include <iostream>
#include <string>
#include <vector>

#include "apportion/io.hpp"
#include "apportion/simnet.hpp"

namespace {

constexpr int kNodes = 250;
constexpr int kDiameter = 19;
constexpr std::uint64_t kTopologySeed = 2026;

// 30-second samples linearly interpolated between anchor points.
apportion::IrradianceProfile sampled_profile(
    const std::vector<std::pair<double, double>>& anchors) {
  apportion::IrradianceProfile profile;
  const double t_end = anchors.back().first;
  std::size_t seg = 0;
  for (double t = 0.0; t <= t_end; t += 30.0) {
    while (seg + 1 < anchors.size() && anchors[seg + 1].first <= t) ++seg;
    double value = anchors[seg].second;
    if (seg + 1 < anchors.size() && anchors[seg + 1].first > anchors[seg].first) {
      const double f = (t - anchors[seg].first) /
                       (anchors[seg + 1].first - anchors[seg].first);
      value += f * (anchors[seg + 1].second - anchors[seg].second);
    }
    profile.times.push_back(t);
    profile.values.push_back(value);
  }
  return profile;
}

apportion::Scenario make_testcase1(const apportion::Graph& graph) {
  apportion::Scenario s;
  s.name = "testcase1";
  s.graph = graph;
  s.tolerance = 0.01;
  s.max_delay = 1;
  s.rounds_per_second = 20.0;
  s.seed = 1;
  s.irradiance = apportion::IrradianceProfile::fixed(800.0);
  for (int i = 0; i < kNodes; ++i) {
    apportion::DerSpec der;
    der.kind = apportion::DerKind::RES;
    der.rating = 5.0;
    der.g_stc = 1000.0;
    s.ders.push_back(der);
  }
  apportion::CommandInstant cmd;
  cmd.time_s = 27.0;
  cmd.mode = apportion::CommandMode::black;
  cmd.magnitude = 500.0;
  cmd.circulating = {3, 117};
  s.schedule.push_back(cmd);
  return s;
}

apportion::Scenario make_testcase2(const apportion::Graph& graph) {
  apportion::Scenario s;
  s.name = "testcase2";
  s.graph = graph;
  s.tolerance = 0.01;
  s.max_delay = 1;
  s.rounds_per_second = 20.0;
  s.seed = 2;
  s.res_priority = true;
  s.irradiance = sampled_profile({{0, 850},
                                  {180, 850},
                                  {300, 350},
                                  {480, 330},
                                  {600, 400},
                                  {800, 820},
                                  {900, 860},
                                  {1000, 845},
                                  {1080, 800},
                                  {1200, 800}});
  for (int i = 0; i < kNodes; ++i) {
    apportion::DerSpec der;
    if (i % 12 == 6 && i < 240) {  // 20 storage units, 60 kW each
      der.kind = apportion::DerKind::ESS;
      der.pi_min = -60.0;
      der.pi_max = 60.0;
    } else {
      der.kind = apportion::DerKind::RES;
      der.rating = 20.0;
      der.g_stc = 1000.0;
    }
    s.ders.push_back(der);
  }
  const std::vector<int> circulating = {3, 117};
  auto add = [&](double t, apportion::CommandMode mode, double magnitude) {
    apportion::CommandInstant cmd;
    cmd.time_s = t;
    cmd.mode = mode;
    cmd.magnitude = magnitude;
    cmd.circulating = circulating;
    s.schedule.push_back(cmd);
  };
  add(0.0, apportion::CommandMode::black, 3620.0);
  add(300.0, apportion::CommandMode::brown, 0.0);    // low irradiance
  add(800.0, apportion::CommandMode::brown, 0.0);    // irradiance recovered
  add(900.0, apportion::CommandMode::brown, -820.0);
  add(1080.0, apportion::CommandMode::brown, 1010.0);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out_dir = argc > 1 ? argv[1] : "scenarios";
  std::cerr << "generating " << kNodes << "-node topology (D=" << kDiameter
            << ")...\n";
  apportion::Graph graph =
      apportion::generate_with_diameter(kNodes, kDiameter, kTopologySeed);

  apportion::Scenario tc1 = make_testcase1(graph);
  apportion::validate_scenario(tc1);
  apportion::save_scenario(tc1, out_dir + "/testcase1.json");

  apportion::Scenario tc2 = make_testcase2(graph);
  apportion::validate_scenario(tc2);
  apportion::save_scenario(tc2, out_dir + "/testcase2.json");

  std::cerr << "wrote " << out_dir << "/testcase1.json and "
            << out_dir << "/testcase2.json\n";
  return 0;
}
