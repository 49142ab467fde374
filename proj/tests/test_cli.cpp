#include <catch2/catch_amalgamated.hpp>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& scratch_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "condenser_cli_tests";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

fs::path config_path(const std::string& name) { return fs::path(CONDENSER_CONFIG_DIR) / name; }

int run_cli(const std::string& args, const fs::path& err_file = {}) {
  std::string cmd = std::string(CONDENSER_BIN) + " " + args;
  cmd += err_file.empty() ? " 2>/dev/null" : " 2>" + err_file.string();
  cmd += " >/dev/null";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  REQUIRE(os.good());
  os << text;
}

json summary_of(const fs::path& out_dir) { return json::parse(slurp(out_dir / "summary.json")); }

}  // namespace

TEST_CASE("solve runs are deterministic and self-describing") {
  const fs::path out1 = scratch_root() / "solve1";
  const fs::path out2 = scratch_root() / "solve2";
  const std::string cfg = config_path("solve_small.json").string();

  CHECK(run_cli("solve --config " + cfg + " --out " + out1.string()) == 0);
  CHECK(run_cli("solve --config " + cfg + " --out " + out2.string()) == 0);

  for (const char* f : {"summary.json", "measure.csv", "trace.csv", "kkt.csv"}) {
    CHECK(fs::exists(out1 / f));
  }
  CHECK(slurp(out1 / "summary.json") == slurp(out2 / "summary.json"));
  CHECK(slurp(out1 / "measure.csv") == slurp(out2 / "measure.csv"));

  const json s = summary_of(out1);
  CHECK(s.at("tool") == "condenser");
  CHECK(s.at("subcommand") == "solve");
  CHECK(s.at("version").is_string());
  CHECK(s.at("config_hash").get<std::string>().size() == 16);
  CHECK(s.at("solve").at("converged") == true);
  CHECK(s.at("kkt").at("pass") == true);
}

TEST_CASE("solver flags override the config and are recorded") {
  const fs::path out = scratch_root() / "solve_flags";
  const std::string cfg = config_path("solve_small.json").string();
  CHECK(run_cli("solve --config " + cfg + " --out " + out.string() + " --seed 7 --tol 1e-9") ==
        0);
  const json s = summary_of(out);
  CHECK(s.at("seed") == 7);
  CHECK(s.at("tol").get<double>() == 1e-9);
}

TEST_CASE("coincident capped spheres report an equivalent second minimizer") {
  const fs::path out = scratch_root() / "twins";
  CHECK(run_cli("solve --config " + config_path("sphere_twins.json").string() + " --out " +
                out.string()) == 0);
  const json s = summary_of(out);
  const json& twins = s.at("requivalent_minimizers");
  REQUIRE(twins.at("found") == true);
  CHECK(twins.at("equivalent") == true);
  CHECK(twins.at("distance").get<double>() <= 1e-9);
  CHECK(twins.at("max_component_diff").get<double>() > 0.0);
  const double g1 = s.at("solve").at("weighted_energy").get<double>();
  const double g2 = twins.at("twin_weighted_energy").get<double>();
  CHECK(std::abs(g1 - g2) <= 1e-10 * (1.0 + std::abs(g1)));
  CHECK(fs::exists(out / "measure_twin.csv"));
}

TEST_CASE("thinness subcommand classifies the exponential horn") {
  const fs::path out = scratch_root() / "thin_c2";
  CHECK(run_cli("thinness --config " + config_path("thinness_c2.json").string() + " --out " +
                out.string()) == 0);
  const json s = summary_of(out);
  CHECK(s.at("thinness").at("verdict") == "thin-infinite-capacity");
  CHECK(s.at("thinness").at("shells").size() == 9);
  REQUIRE(s.contains("solvability"));
  CHECK(s.at("solvability").at("verdict") == "unsolvable");

  const std::string csv = slurp(out / "thinness.csv");
  CHECK(csv.rfind("k,capacity,wiener_term", 0) == 0);
}

TEST_CASE("capacity subcommand recovers the sphere radius") {
  const fs::path out = scratch_root() / "cap";
  CHECK(run_cli("capacity --config " + config_path("capacity_sphere.json").string() + " --out " +
                out.string()) == 0);
  const json s = summary_of(out);
  const double c = s.at("capacity").at("capacity").get<double>();
  CHECK(std::abs(c - 1.0) <= 0.02);
  CHECK(std::abs(s.at("capacity").at("gamma_norm_sq").get<double>() - c) <= 1e-8 * c);
  CHECK(s.at("capacity").at("min_potential").get<double>() >= 1.0 - 1e-3);
  CHECK(fs::exists(out / "equilibrium.csv"));
}

TEST_CASE("sweep subcommand reproduces the image-charge mass ratio") {
  const fs::path out = scratch_root() / "sweep";
  CHECK(run_cli("sweep --config " + config_path("sweep_point_to_sphere.json").string() +
                " --out " + out.string()) == 0);
  const json s = summary_of(out);
  CHECK(std::abs(s.at("sweep").at("mass_ratio").get<double>() - 1.0 / 3.0) <= 0.01);
  CHECK(fs::exists(out / "swept.csv"));
}

TEST_CASE("verify subcommand checks a solve output and flags corruption") {
  const fs::path solve_out = scratch_root() / "verify_solve";
  const std::string cfg = config_path("solve_small.json").string();
  REQUIRE(run_cli("solve --config " + cfg + " --out " + solve_out.string()) == 0);

  json verify_cfg = json::parse(slurp(config_path("solve_small.json")));
  verify_cfg["verify"] = {{"measure_csv", (solve_out / "measure.csv").string()}};
  const fs::path vc = scratch_root() / "verify_cfg.json";
  spit(vc, verify_cfg.dump(2));

  const fs::path vout = scratch_root() / "verify_ok";
  CHECK(run_cli("verify --config " + vc.string() + " --out " + vout.string()) == 0);
  const json ok = summary_of(vout);
  CHECK(ok.at("verify").at("admissible") == true);
  CHECK(ok.at("verify").at("normalized") == true);
  CHECK(ok.at("verify").at("pass") == true);

  // scale one mass entry: no longer normalized, and the node conditions break
  std::istringstream is(slurp(solve_out / "measure.csv"));
  std::ostringstream os;
  std::string line;
  std::getline(is, line);
  os << line << '\n';
  bool doctored = false;
  while (std::getline(is, line)) {
    if (!doctored) {
      const auto comma = line.rfind(',');
      const double m = std::stod(line.substr(comma + 1));
      if (m > 1e-3) {
        os << line.substr(0, comma + 1) << (m * 1.5) << '\n';
        doctored = true;
        continue;
      }
    }
    os << line << '\n';
  }
  REQUIRE(doctored);
  const fs::path bad_csv = scratch_root() / "measure_bad.csv";
  spit(bad_csv, os.str());
  verify_cfg["verify"]["measure_csv"] = bad_csv.string();
  spit(vc, verify_cfg.dump(2));

  const fs::path vbad = scratch_root() / "verify_bad";
  CHECK(run_cli("verify --config " + vc.string() + " --out " + vbad.string()) == 0);
  const json bad = summary_of(vbad);
  CHECK(bad.at("verify").at("normalized") == false);
}

TEST_CASE("config errors exit with code 1 and name the field") {
  const fs::path bad1 = scratch_root() / "missing_alpha.json";
  spit(bad1, R"({"kernel": {"family": "riesz"}, "plates": [{"points": [[0,0,0]]}]})");
  const fs::path err = scratch_root() / "stderr.txt";
  CHECK(run_cli("solve --config " + bad1.string() + " --out " + (scratch_root() / "x1").string(),
                err) == 1);
  CHECK(slurp(err).find("kernel.alpha") != std::string::npos);

  const fs::path bad2 = scratch_root() / "no_plates.json";
  spit(bad2, R"({"kernel": {"family": "riesz", "alpha": 2.0}})");
  CHECK(run_cli("solve --config " + bad2.string() + " --out " + (scratch_root() / "x2").string(),
                err) == 1);
  CHECK(slurp(err).find("plates") != std::string::npos);

  CHECK(run_cli("solve --config " + (scratch_root() / "absent.json").string() + " --out " +
                (scratch_root() / "x3").string(), err) == 1);
}

TEST_CASE("infeasible problems exit with code 2") {
  json cfg;
  cfg["kernel"] = {{"family", "riesz"}, {"alpha", 2.0}};
  cfg["plates"] = json::array({json{{"points", {{0, 0, 0}, {1, 0, 0}}},
                                    {"a", 1.5},
                                    {"cap", {1.0, 1.0}},
                                    {"f", {0.0, "inf"}}}});
  const fs::path p = scratch_root() / "infeasible.json";
  spit(p, cfg.dump(2));
  const fs::path out = scratch_root() / "infeasible_out";
  CHECK(run_cli("solve --config " + p.string() + " --out " + out.string()) == 2);
  const json s = summary_of(out);
  CHECK(s.at("infeasible") == true);
}

TEST_CASE("iteration starvation exits with code 3") {
  const fs::path out = scratch_root() / "starved";
  CHECK(run_cli("solve --config " + config_path("solve_small.json").string() + " --out " +
                out.string() + " --max-iters 1 --tol 1e-15") == 3);
  const json s = summary_of(out);
  CHECK(s.at("solve").at("converged") == false);
}
