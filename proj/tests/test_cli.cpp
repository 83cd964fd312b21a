#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "apportion/cli.hpp"
#include "apportion/io.hpp"
#include "test_support.hpp"

using namespace apportion;

namespace {

Scenario demo_scenario() {
  Scenario s;
  s.name = "demo";
  s.graph = Graph(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}, {2, 0}});
  s.tolerance = 1e-3;
  s.max_delay = 1;
  s.seed = 5;
  for (int i = 0; i < 4; ++i) {
    DerSpec der;
    der.kind = DerKind::ESS;
    der.pi_min = i == 0 ? -2.0 : 0.0;
    der.pi_max = 4.0 + i;
    s.ders.push_back(der);
  }
  CommandInstant cmd;
  cmd.time_s = 0.0;
  cmd.mode = CommandMode::black;
  cmd.magnitude = 9.0;
  cmd.circulating = {1};
  s.schedule.push_back(cmd);
  CommandInstant next;
  next.time_s = 30.0;
  next.mode = CommandMode::brown;
  next.magnitude = 2.5;
  next.circulating = {0, 3};
  s.schedule.push_back(next);
  return s;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("double formatting round-trips and is stable") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(500.0) == "500");
  CHECK(format_double(1.0 / 3.0) == format_double(1.0 / 3.0));
  double v = 0.1 + 0.2;
  CHECK(std::stod(format_double(v)) == v);
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
}

TEST_CASE("fnv1a and hex encoding") {
  CHECK(fnv1a("") == kFnvOffset);
  CHECK(fnv1a("a") != fnv1a("b"));
  CHECK(hex64(0) == "0000000000000000");
  CHECK(hex64(0xdeadbeefULL) == "00000000deadbeef");
}

TEST_CASE("graph json round trip is bit exact") {
  Graph g = random_strongly_connected(9, 7, 123);
  nlohmann::json j = graph_to_json(g);
  Graph back = graph_from_json(j);
  CHECK(graph_to_json(back).dump() == j.dump());
  CHECK(back.edges() == g.edges());
}

TEST_CASE("scenario file round trip is bit exact") {
  Scenario s = demo_scenario();
  auto dir = testsup::fresh_temp_dir("roundtrip");
  const std::string path = (dir / "demo.json").string();
  save_scenario(s, path);
  Scenario loaded = load_scenario(path);
  const std::string again = (dir / "demo2.json").string();
  save_scenario(loaded, again);
  CHECK(slurp(path) == slurp(again));
  CHECK(config_digest(s) == config_digest(loaded));
}

TEST_CASE("scenario loader reports malformed fields") {
  auto dir = testsup::fresh_temp_dir("badjson");
  const std::string path = (dir / "bad.json").string();
  std::ofstream(path) << "{\"rho\": 0.01}";
  CHECK_THROWS_AS(load_scenario(path), ValidationError);
  std::ofstream(path) << "{\"graph\": {\"nodes\": 1, \"edges\": []}, "
                         "\"rho\": 0.01, \"ders\": [], \"schedule\": [], "
                         "\"bogus\": 1}";
  CHECK_THROWS_WITH_AS(load_scenario(path),
                       "scenario: unknown field \"bogus\"", ValidationError);
  std::ofstream(path) << "not json";
  CHECK_THROWS_AS(load_scenario(path), ValidationError);
}

TEST_CASE("cmd_validate accepts the bundled scenario and rejects bad input") {
  std::ostringstream out, err;
  const std::string bundled = testsup::scenarios_dir() + "/testcase1.json";
  CHECK(cmd_validate(bundled, out, err) == 0);
  CHECK(out.str().find("ok:") != std::string::npos);

  auto dir = testsup::fresh_temp_dir("validate");
  Scenario bad = demo_scenario();
  bad.graph = Graph(2, {{0, 1}});
  bad.ders.resize(2);
  bad.schedule.resize(1);
  const std::string bad_path = (dir / "bad.json").string();
  save_scenario(bad, bad_path);
  std::ostringstream out2, err2;
  CHECK(cmd_validate(bad_path, out2, err2) == 2);
  CHECK(err2.str().find("strongly connected") != std::string::npos);

  Scenario bad_rho = demo_scenario();
  bad_rho.tolerance = -1.0;
  const std::string rho_path = (dir / "rho.json").string();
  save_scenario(bad_rho, rho_path);
  std::ostringstream out3, err3;
  CHECK(cmd_validate(rho_path, out3, err3) == 2);
  CHECK(err3.str().find("rho") != std::string::npos);
}

TEST_CASE("cmd_run writes traces and a summary; reruns share digests") {
  auto dir = testsup::fresh_temp_dir("cmdrun");
  Scenario s = demo_scenario();
  const std::string path = (dir / "demo.json").string();
  save_scenario(s, path);

  RunFlags flags;
  flags.out_dir = (dir / "a").string();
  std::ostringstream out, err;
  REQUIRE(cmd_run(path, flags, out, err) == 0);
  CHECK(err.str().empty());

  auto summary = nlohmann::json::parse(slurp((dir / "a/summary.json").string()));
  CHECK(summary.at("audits_passed").get<bool>());
  CHECK(summary.at("commands").size() == 2);
  CHECK(summary.at("trace_files").size() == 2);

  RunFlags flags2 = flags;
  flags2.out_dir = (dir / "b").string();
  std::ostringstream out2, err2;
  REQUIRE(cmd_run(path, flags2, out2, err2) == 0);
  auto summary2 =
      nlohmann::json::parse(slurp((dir / "b/summary.json").string()));
  CHECK(summary.at("trace_digest") == summary2.at("trace_digest"));
  CHECK(summary.at("config_digest") == summary2.at("config_digest"));
  CHECK(slurp((dir / "a/trace_cmd0.csv").string()) ==
        slurp((dir / "b/trace_cmd0.csv").string()));

  SUBCASE("seed override changes the digest and is recorded") {
    RunFlags seeded = flags;
    seeded.out_dir = (dir / "c").string();
    seeded.seed = 7;
    std::ostringstream out3, err3;
    REQUIRE(cmd_run(path, seeded, out3, err3) == 0);
    auto summary3 =
        nlohmann::json::parse(slurp((dir / "c/summary.json").string()));
    CHECK(summary3.at("overrides").at("seed").get<std::uint64_t>() == 7);
    CHECK(summary3.at("config_digest") != summary.at("config_digest"));
  }
}

TEST_CASE("cmd_run surfaces epoch-cap exhaustion with diagnostics") {
  auto dir = testsup::fresh_temp_dir("epochcap");
  Scenario s = demo_scenario();
  const std::string path = (dir / "demo.json").string();
  save_scenario(s, path);
  RunFlags flags;
  flags.out_dir = (dir / "o").string();
  flags.rho = 1e-15;  // unreachable tolerance
  flags.epoch_cap = 1;
  std::ostringstream out, err;
  CHECK(cmd_run(path, flags, out, err) == 1);
  CHECK(err.str().find("epoch cap") != std::string::npos);
  CHECK(err.str().find("extrema gap") != std::string::npos);
}

TEST_CASE("cmd_run trace files carry the fixed header") {
  auto dir = testsup::fresh_temp_dir("header");
  Scenario s = demo_scenario();
  const std::string path = (dir / "demo.json").string();
  save_scenario(s, path);
  RunFlags flags;
  flags.out_dir = (dir / "o").string();
  std::ostringstream out, err;
  REQUIRE(cmd_run(path, flags, out, err) == 0);
  const std::string csv = slurp((dir / "o/trace_cmd0.csv").string());
  CHECK(csv.rfind("round,node,r,s,z,w,theta,converged,pi_star_early\n", 0) ==
        0);
  CHECK(csv.find("\r") == std::string::npos);
}

TEST_CASE("cmd_oracle matches the simulator on small instances") {
  auto dir = testsup::fresh_temp_dir("oracle");
  Scenario s = demo_scenario();
  const std::string path = (dir / "demo.json").string();
  save_scenario(s, path);
  std::ostringstream out, err;
  CHECK(cmd_oracle(path, {}, out, err) == 0);
  CHECK(out.str().find("all within tolerance") != std::string::npos);

  SUBCASE("single node is an exact match") {
    Scenario solo;
    solo.name = "solo";
    solo.graph = Graph(1, {});
    solo.tolerance = 1e-6;
    solo.seed = 2;
    DerSpec der;
    der.kind = DerKind::ESS;
    der.pi_min = 0.0;
    der.pi_max = 10.0;
    solo.ders.push_back(der);
    CommandInstant cmd;
    cmd.time_s = 0.0;
    cmd.mode = CommandMode::black;
    cmd.magnitude = 4.0;
    cmd.circulating = {0};
    solo.schedule.push_back(cmd);
    const std::string solo_path = (dir / "solo.json").string();
    save_scenario(solo, solo_path);
    std::ostringstream out2, err2;
    CHECK(cmd_oracle(solo_path, {}, out2, err2) == 0);
    CHECK(out2.str().find("0    0.4    0    0") != std::string::npos);
  }

  SUBCASE("random 6-node batch has zero extremum mismatches") {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      Scenario batch;
      batch.name = "batch";
      batch.graph = random_strongly_connected(6, 7, seed * 13);
      batch.tolerance = 1e-3;
      batch.max_delay = static_cast<int>(seed % 3);
      batch.seed = seed;
      for (int i = 0; i < 6; ++i) {
        DerSpec der;
        der.kind = DerKind::ESS;
        der.pi_min = i % 2 ? -3.0 : 0.0;
        der.pi_max = 4.0 + i;
        batch.ders.push_back(der);
      }
      CommandInstant cmd;
      cmd.time_s = 0.0;
      cmd.mode = CommandMode::black;
      cmd.magnitude = 11.0;
      cmd.circulating = {static_cast<int>(seed % 6)};
      batch.schedule.push_back(cmd);
      const std::string batch_path = (dir / "batch.json").string();
      save_scenario(batch, batch_path);
      std::ostringstream out2, err2;
      CHECK(cmd_oracle(batch_path, {}, out2, err2) == 0);
    }
  }

  SUBCASE("instance cap is enforced") {
    OracleFlags flags;
    flags.max_nodes = 2;
    std::ostringstream out2, err2;
    CHECK(cmd_oracle(path, flags, out2, err2) == 2);
  }
}

TEST_CASE("cli binary end to end") {
  const char* bin = std::getenv("APPORTION_BIN");
  if (!bin) return;  // available under ctest
  const std::string bundled = testsup::scenarios_dir() + "/testcase1.json";
  const std::string cmd = std::string(bin) + " validate " + bundled +
                          " > /dev/null 2>&1";
  CHECK(std::system(cmd.c_str()) == 0);
}
