#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "rws/io.hpp"
#include "test_support.hpp"

using namespace rws;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("rwsim_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file);
  out << text;
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(RWSIM_BINARY) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json k2_config() {
  json cfg;
  cfg["walk_m1"] = {{"type", "preset"}, {"name", "path"}, {"n", 2}};
  cfg["potential"] = "obstacle";
  cfg["c"] = 1.5;
  cfg["delta"] = 1.0;
  cfg["u0"] = {{"type", "values"}, {"values", {0.6, -0.6}}};
  cfg["tau"] = 0.02;
  cfg["T"] = 0.5;
  cfg["output_dir"] = "out";
  return cfg;
}

}  // namespace

TEST_CASE("fields and kernels round trip bitwise") {
  auto dir = fresh_dir("roundtrip");
  rws::testing::Rng rng(7);
  Field f = rws::testing::random_field(11, rng, -5.0, 5.0);
  io::write_field(dir / "f.txt", f);
  Field g = io::read_field(dir / "f.txt", 11);
  for (Eigen::Index i = 0; i < f.size(); ++i) CHECK(f[i] == g[i]);

  auto rw = rws::testing::random_reversible_walk(9, rng);
  io::write_kernel(dir / "k.txt", rw.kernel());
  SparseRowMatrix k = io::read_kernel(dir / "k.txt");
  CHECK(k.rows() == 9);
  Eigen::MatrixXd diff = Eigen::MatrixXd(SparseColMatrix(k)) -
                         Eigen::MatrixXd(SparseColMatrix(rw.kernel()));
  CHECK(diff.cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS(io::read_field(dir / "f.txt", 12));  // node 11 missing
}

TEST_CASE("edge lists map labels in first-appearance order") {
  auto dir = fresh_dir("edges");
  write_text(dir / "g.txt",
             "# comment line\n"
             "a b 1.0\n"
             "\n"
             "b c 2.0\n");
  auto rw = io::read_edge_list_walk(dir / "g.txt");
  REQUIRE(rw.size() == 3);
  CHECK(rw.space().labels[0] == "a");
  CHECK(rw.space().labels[2] == "c");
  // node b has degree 3
  CHECK(rw.nu().weights()[1] == doctest::Approx(3.0));
}

TEST_CASE("seeded uniform fields are reproducible and in range") {
  Field a = io::deterministic_uniform_field(50, -0.25, 0.75, 1234);
  Field b = io::deterministic_uniform_field(50, -0.25, 0.75, 1234);
  Field c = io::deterministic_uniform_field(50, -0.25, 0.75, 1235);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.minCoeff() >= -0.25);
  CHECK(a.maxCoeff() <= 0.75);
}

TEST_CASE("run configs parse strictly and round trip through json") {
  auto cfg = io::parse_run_config(k2_config());
  CHECK(cfg.potential == "obstacle");
  CHECK(cfg.c == 1.5);
  CHECK(cfg.walk_m2.at("type") == "same_as_m1");
  CHECK(cfg.scheme == "imex_split");

  auto again = io::parse_run_config(cfg.to_json());
  CHECK(again.tau == cfg.tau);
  CHECK(again.T == cfg.T);
  CHECK(again.u0 == cfg.u0);

  json bad = k2_config();
  bad["tua"] = 0.1;  // typo must be rejected, not ignored
  CHECK_THROWS_AS(io::parse_run_config(bad), std::invalid_argument);

  json bad2 = k2_config();
  bad2["tau"] = -1.0;
  CHECK_THROWS_AS(io::parse_run_config(bad2), std::invalid_argument);
}

TEST_CASE("walk builders cover every source type") {
  auto dir = fresh_dir("walks");

  json preset = {{"type", "preset"}, {"name", "cycle"}, {"n", 5}};
  auto cyc = io::build_walk(preset, dir);
  CHECK(cyc.size() == 5);
  CHECK(cyc.flags().reversible);

  write_text(dir / "edges.txt", "0 1 1\n1 2 1\n");
  json from_file = {{"type", "edge_list"}, {"path", "edges.txt"}};
  auto pw = io::build_walk(from_file, dir);
  CHECK(pw.size() == 3);

  write_text(dir / "mk.txt", "2 2 4\n0 0 0.9\n0 1 0.1\n1 0 0.5\n1 1 0.5\n");
  json markov = {{"type", "markov_kernel"}, {"path", "mk.txt"}};
  auto mk = io::build_walk(markov, dir);
  CHECK(mk.nu().weights()[0] / mk.total_measure() == doctest::Approx(5.0 / 6.0));

  write_text(dir / "pts.txt", "0.0\n0.5\n1.0\n");
  json cloud = {{"type", "point_cloud"}, {"path", "pts.txt"},
                {"profile", "box"}, {"radius", 0.6}};
  auto pc = io::build_walk(cloud, dir);
  CHECK(pc.size() == 3);
  CHECK(pc.flags().connected);

  json grid = {{"type", "grid_kernel"}, {"dim", 1}, {"cells", {16}}, {"h", 0.0625},
               {"profile", "triangle"}, {"radius", 0.25}};
  auto gw = io::build_walk(grid, dir);
  CHECK(gw.size() == 16);
  CHECK(gw.flags().reversible);

  json self = {{"type", "same_as_m1"}};
  CHECK_THROWS(io::build_walk(self, dir));

  json unknown = {{"type", "banana"}};
  CHECK_THROWS(io::build_walk(unknown, dir));
}

TEST_CASE("problems materialize with restriction and initial data") {
  auto dir = fresh_dir("problem");
  json j = k2_config();
  j["walk_m1"] = {{"type", "preset"}, {"name", "path"}, {"n", 4}};
  j["u0"] = {{"type", "two_phase_split"}};
  j["restrict_nodes"] = {0, 1, 2};
  auto cfg = io::parse_run_config(j);
  auto prob = io::build_problem(cfg, dir);
  CHECK(prob.m1.size() == 3);
  CHECK(prob.m2.size() == 3);
  REQUIRE(prob.u0.size() == 3);
  CHECK(prob.u0[0] == 1.0);
  CHECK(prob.u0[2] == -1.0);

  json r = k2_config();
  r["u0"] = {{"type", "random_uniform"}, {"low", -0.5}, {"high", 0.5}, {"seed", 11}};
  auto prob2 = io::build_problem(io::parse_run_config(r), dir);
  CHECK(prob2.u0.minCoeff() >= -0.5);
  CHECK(prob2.u0.maxCoeff() <= 0.5);
  auto prob3 = io::build_problem(io::parse_run_config(r), dir);
  CHECK(prob2.u0[0] == prob3.u0[0]);
}

TEST_CASE("cli validate accepts a sound config and rejects a broken one") {
  auto dir = fresh_dir("cli_validate");
  write_text(dir / "good.json", k2_config().dump(2));
  CHECK(run_cli("validate --config " + (dir / "good.json").string()) == 0);

  json bad = k2_config();
  bad["u0"] = {{"type", "values"}, {"values", {2.0, -0.6}}};  // outside the obstacle domain
  write_text(dir / "bad.json", bad.dump(2));
  CHECK(run_cli("validate --config " + (dir / "bad.json").string()) == 2);
}

TEST_CASE("cli run produces a complete, self-describing trajectory") {
  auto dir = fresh_dir("cli_run");
  write_text(dir / "cfg.json", k2_config().dump(2));
  REQUIRE(run_cli("run --config " + (dir / "cfg.json").string()) == 0);

  const fs::path out = dir / "out";
  CHECK(fs::exists(out / "manifest.json"));
  CHECK(fs::exists(out / "diagnostics.jsonl"));
  CHECK(fs::exists(out / "m1_kernel.txt"));
  CHECK(fs::exists(out / "u0.txt"));

  auto manifest = json::parse(read_text(out / "manifest.json"));
  CHECK(manifest.at("tool") == "rwsim");
  CHECK(manifest.at("config").at("walk_m1").at("type") == "kernel_with_measure");

  auto traj = io::read_trajectory(out);
  CHECK(traj.steps.size() == 26);
  CHECK(traj.tau == 0.02);
  REQUIRE(!traj.snapshots.empty());
  CHECK(traj.snapshots.front().size() == 2);

  // the written directory is a valid config source again
  auto prob = io::read_problem(out);
  CHECK(prob.m1.size() == 2);
  CHECK(prob.u0[0] == doctest::Approx(0.6));
}

TEST_CASE("cli runs are byte-for-byte deterministic") {
  auto dir = fresh_dir("cli_det");
  json cfg = k2_config();
  cfg["u0"] = {{"type", "random_uniform"}, {"low", -0.5}, {"high", 0.5}, {"seed", 99}};
  write_text(dir / "cfg.json", cfg.dump(2));

  json cfg2 = cfg;
  cfg2["output_dir"] = "out2";
  write_text(dir / "cfg2.json", cfg2.dump(2));

  REQUIRE(run_cli("run --config " + (dir / "cfg.json").string()) == 0);
  REQUIRE(run_cli("run --config " + (dir / "cfg2.json").string()) == 0);

  const std::string a = read_text(dir / "out" / "diagnostics.jsonl");
  const std::string b = read_text(dir / "out2" / "diagnostics.jsonl");
  CHECK(!a.empty());
  CHECK(a == b);
}

TEST_CASE("trajectory reads match the in-memory solve") {
  auto dir = fresh_dir("cli_match");
  write_text(dir / "cfg.json", k2_config().dump(2));
  REQUIRE(run_cli("run --config " + (dir / "cfg.json").string()) == 0);

  auto cfg = io::load_run_config(dir / "cfg.json");
  auto prob = io::build_problem(cfg, dir);
  auto direct = solve(prob);
  auto loaded = io::read_trajectory(dir / "out");

  REQUIRE(direct.steps.size() == loaded.steps.size());
  for (std::size_t k = 0; k < direct.steps.size(); ++k) {
    CAPTURE(k);
    CHECK(direct.steps[k].mass == doctest::Approx(loaded.steps[k].mass).epsilon(1e-15));
    CHECK(direct.steps[k].energy ==
          doctest::Approx(loaded.steps[k].energy).epsilon(1e-12));
  }
  REQUIRE(direct.snapshots.size() == loaded.snapshots.size());
  const Field& ua = direct.snapshots.back();
  const Field& ub = loaded.snapshots.back();
  CHECK((ua - ub).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("a truncated diagnostics stream is reported with its last step") {
  auto dir = fresh_dir("cli_trunc");
  write_text(dir / "cfg.json", k2_config().dump(2));
  REQUIRE(run_cli("run --config " + (dir / "cfg.json").string()) == 0);

  const fs::path diag = dir / "out" / "diagnostics.jsonl";
  std::string text = read_text(diag);
  // drop the completion marker and the final record
  auto pos = text.rfind("{\"event\"");
  REQUIRE(pos != std::string::npos);
  pos = text.rfind('\n', pos - 2);
  write_text(diag, text.substr(0, pos + 1));

  try {
    io::read_trajectory(dir / "out");
    FAIL("expected a throw");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find("incomplete") != std::string::npos);
    CHECK(msg.find("24") != std::string::npos);
  }
}

TEST_CASE("cli analyze writes audit and asymptotics reports") {
  auto dir = fresh_dir("cli_analyze");
  json cfg = k2_config();
  cfg["T"] = 2.0;
  write_text(dir / "cfg.json", cfg.dump(2));
  REQUIRE(run_cli("run --config " + (dir / "cfg.json").string()) == 0);
  CHECK(run_cli("analyze " + (dir / "out").string()) == 0);

  auto aud = json::parse(read_text(dir / "out" / "audit.json"));
  CHECK(aud.at("all_pass") == true);
  auto asy = json::parse(read_text(dir / "out" / "asymptotics.json"));
  CHECK(asy.contains("steady"));
  CHECK(asy.at("gap2_defined") == true);
}

TEST_CASE("cli sweep fans out over configs") {
  auto dir = fresh_dir("cli_sweep");
  json a = k2_config();
  a["output_dir"] = "out_a";
  json b = k2_config();
  b["output_dir"] = "out_b";
  b["tau"] = 0.05;
  write_text(dir / "a.json", a.dump(2));
  write_text(dir / "b.json", b.dump(2));
  CHECK(run_cli("sweep " + (dir / "a.json").string() + " " + (dir / "b.json").string() +
                " --jobs 2") == 0);
  CHECK(fs::exists(dir / "out_a" / "manifest.json"));
  CHECK(fs::exists(dir / "out_b" / "manifest.json"));

  json bad = k2_config();
  bad["output_dir"] = "out_bad";
  bad["u0"] = {{"type", "values"}, {"values", {5.0, 0.0}}};
  write_text(dir / "bad.json", bad.dump(2));
  CHECK(run_cli("sweep " + (dir / "a.json").string() + " " + (dir / "bad.json").string()) != 0);
}

TEST_CASE("run failures leave a marked, non-silent directory") {
  auto dir = fresh_dir("cli_fail");
  json cfg = k2_config();
  // fixed point scheme with a step far beyond the contraction window
  cfg["scheme"] = "picard";
  cfg["tau"] = 0.9;
  cfg["T"] = 1.8;
  cfg["c"] = 4.0;
  cfg["potential"] = "power";
  cfg["power_p"] = 3.0;
  cfg["u0"] = {{"type", "values"}, {"values", {0.4, -0.2}}};
  write_text(dir / "cfg.json", cfg.dump(2));
  CHECK(run_cli("run --config " + (dir / "cfg.json").string()) == 3);
  const std::string diag = read_text(dir / "out" / "diagnostics.jsonl");
  CHECK(diag.find("incomplete") != std::string::npos);
  CHECK_THROWS(io::read_trajectory(dir / "out"));
}
