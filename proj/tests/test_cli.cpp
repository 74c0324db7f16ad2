#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kBinary = QSDLAB_CLI_PATH;
const fs::path kConfigs = QSDLAB_CONFIG_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "qsdlab_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

int run(const std::string& args, const fs::path& out) {
  const std::string cmd = kBinary.string() + " " + args + " --out " + out.string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json report(const fs::path& out) { return json::parse(slurp(out / "report.json")); }

fs::path write_config(const std::string& name, const std::string& text) {
  const fs::path p = scratch(name + ".json");
  std::ofstream(p) << text;
  return p;
}

std::string without_timestamp(const fs::path& out) {
  json r = report(out);
  r.erase("timestamp");
  return r.dump();
}

}  // namespace

TEST_CASE("classify: Brownian motion on the half line") {
  const auto out = scratch("classify");
  CHECK(run("classify " + (kConfigs / "bm_halfline.json").string(), out) == 0);
  const auto r = report(out);
  CHECK(r["status"] == "ok");
  CHECK(r["outputs"]["endpoints"]["left"]["class"] == "Regular");
  CHECK(r["outputs"]["endpoints"]["right"]["class"] == "Natural");
  CHECK(r["outputs"]["class_t"] == false);
}

TEST_CASE("verify-qsd: Dirichlet Brownian motion on (0, pi)") {
  const auto out = scratch("verify");
  CHECK(run("verify-qsd " + (kConfigs / "dirichlet_bm.json").string(), out) == 0);
  const auto r = report(out);
  CHECK(std::abs(r["outputs"]["lambda0"].get<double>() - 0.5) <= 1e-3);
  CHECK(r["residuals"]["density_l1"].get<double>() <= 1e-3);
  CHECK(r["residuals"]["invariance"].get<double>() <= 1e-10);
  CHECK(r["tolerances"]["invariance"].get<double>() == 1e-10);
  CHECK(fs::exists(out / "qsd_reference.csv"));
}

TEST_CASE("qsd on a natural boundary is a contract violation") {
  const auto out = scratch("notclasst");
  CHECK(run("qsd " + (kConfigs / "bm_halfline.json").string(), out) == 2);
  const auto r = report(out);
  CHECK(r["status"] == "error");
  CHECK(r["error"]["code"] == "NotClassT");
}

TEST_CASE("same config and seed give the same report") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const std::string args = "yaglom " + (kConfigs / "dirichlet_bm.json").string() + " --paths 3000 --grid-n 400";
  REQUIRE(run(args, a) == 0);
  REQUIRE(run(args, b) == 0);
  CHECK(without_timestamp(a) == without_timestamp(b));
  CHECK(slurp(a / "yaglom.csv") == slurp(b / "yaglom.csv"));
  CHECK(report(a).contains("timestamp"));

  const auto c = scratch("det_c");
  REQUIRE(run(args + " --seed 99", c) == 0);
  CHECK(report(c)["inputs"]["config_digest"] != report(a)["inputs"]["config_digest"]);
  CHECK(report(c)["outputs"]["tv_distance"] != report(a)["outputs"]["tv_distance"]);
}

TEST_CASE("CSV tables are versioned and plot-ready") {
  const auto out = scratch("csv");
  REQUIRE(run("yaglom " + (kConfigs / "dirichlet_bm.json").string() + " --paths 2000 --grid-n 200", out) == 0);
  std::istringstream csv(slurp(out / "yaglom.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "# qsd-lab csv schema 1");
  std::getline(csv, line);
  CHECK(line == "t,value,stderr");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 5);
}

TEST_CASE("flags override the config and enter the digest") {
  const auto a = scratch("flags_a"), b = scratch("flags_b");
  REQUIRE(run("spectrum " + (kConfigs / "dirichlet_bm.json").string() + " --grid-n 100", a) == 0);
  REQUIRE(run("spectrum " + (kConfigs / "dirichlet_bm.json").string() + " --grid-n 100 --tolerance-profile strict", b) ==
          0);
  CHECK(report(a)["inputs"]["grid_n"] == 100);
  CHECK(report(a)["outputs"]["grid"]["states"] == 100);
  CHECK(report(b)["tolerances"]["profile"] == "strict");
  CHECK(report(a)["inputs"]["config_digest"] != report(b)["inputs"]["config_digest"]);
}

TEST_CASE("chain problems run the whole ladder") {
  const auto out = scratch("chain_all");
  CHECK(run("all " + (kConfigs / "random_chain.json").string(), out) == 0);
  const auto r = report(out);
  for (const char* step : {"classify", "spectrum", "qsd", "verify-qsd", "doob-check", "tightness", "moments"}) {
    CHECK(r["summary"][step] == "ok");
  }
  CHECK(r["steps"]["verify-qsd"]["outputs"]["nonnegative_left_eigenvectors"] == 1);
  CHECK(fs::exists(out / "qsd.csv"));
}

TEST_CASE("all keeps going after a failed step") {
  const auto out = scratch("halfline_all");
  CHECK(run("all " + (kConfigs / "bm_halfline.json").string() + " --grid-n 300", out) == 2);
  const auto r = report(out);
  CHECK(r["summary"]["classify"] == "ok");
  CHECK(r["summary"]["qsd"] == "error");
  CHECK(r["summary"]["tightness"] == "ok");
  CHECK(fs::exists(out / "tightness.csv"));
}

TEST_CASE("input errors exit with 1") {
  const auto out = scratch("errors");
  CHECK(run("frobnicate " + (kConfigs / "bm_halfline.json").string(), out) == 1);
  CHECK(report(out)["error"]["code"] == "UnknownSubcommand");

  CHECK(run("classify /nonexistent/config.json", out) == 1);
  CHECK(report(out)["error"]["code"] == "ConfigParse");

  const auto both = write_config("both", R"({"kind": "chain", "chain": {"random": {"n": 3, "seed": 1}},
                                            "diffusion": {"left": 0, "right": 1}})");
  CHECK(run("classify " + both.string(), out) == 1);
  CHECK(report(out)["error"]["code"] == "ConfigParse");

  const auto bad_expr = write_config("bad_expr", R"({"kind": "diffusion",
                                                    "diffusion": {"left": 0, "right": 1, "drift": "x +* 2"}})");
  CHECK(run("classify " + bad_expr.string(), out) == 1);
  CHECK(report(out)["error"]["code"] == "ExpressionParse");

  const auto pole = write_config("pole", R"({"kind": "diffusion",
                                            "diffusion": {"left": -1, "right": 1, "drift": "1/x"}})");
  CHECK(run("classify " + pole.string(), out) == 1);
  CHECK(report(out)["error"]["code"] == "InvalidInput");

  const auto missing = write_config("missing", R"({"kind": "chain", "chain": {"file": "nope.json"}})");
  CHECK(run("classify " + missing.string(), out) == 1);

  CHECK(run("classify " + (kConfigs / "bm_halfline.json").string() + " --tolerance-profile loose", out) == 1);
  CHECK(run("classify " + (kConfigs / "bm_halfline.json").string() + " --dt -1", out) == 1);
}

TEST_CASE("a chain payload may live in its own file") {
  const auto gen = write_config("gen", R"({"masses": [1, 2, 1],
                                          "rates": [[-2, 1, 0], [0.5, -1.5, 0.5], [0, 1, -1.5]]})");
  const auto cfg = write_config("chain_file", R"({"kind": "chain", "chain": {"file": "gen.json"}})");
  const auto out = scratch("chain_file_out");
  CHECK(run("qsd " + cfg.string(), out) == 0);
  const auto nu = report(out)["outputs"]["nu"];
  CHECK(nu.size() == 3);
  double total = 0.0;
  for (const auto& v : nu) {
    CHECK(v.get<double>() > 0.0);
    total += v.get<double>();
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fs::exists(gen));
}
