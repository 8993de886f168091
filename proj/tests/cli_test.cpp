#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "odegan/config.hpp"
#include "odegan/experiments.hpp"

#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

using namespace odegan;
using nlohmann::json;

namespace {

const std::filesystem::path kWork = std::filesystem::temp_directory_path() / "odegan_cli_test";

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = kWork / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_file(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  out << body;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ExecResult {
  int code = -1;
  std::string output;
};

// Runs the installed binary with stderr folded into stdout.
ExecResult exec_cli(const std::string& args) {
  const std::string cmd = std::string(ODEGAN_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  ExecResult r;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe) != nullptr) r.output += buf;
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json load_summary(const std::filesystem::path& dir, const std::string& kind) {
  return json::parse(read_file(dir / (kind + "_summary.json")));
}

}  // namespace

TEST_CASE("config files parse key = value lines with comments") {
  const auto dir = fresh_dir("cfg_parse");
  write_file(dir / "a.cfg",
             "# comment\n"
             "\n"
             "seed = 9\n"
             "trainer.h=0.25\n"
             "  toy.steppers = euler, rk4  \n");
  KeyValueConfig cfg = KeyValueConfig::from_file(dir / "a.cfg");
  CHECK(cfg.get_u64("seed", 1) == 9);
  CHECK(cfg.get_double("trainer.h", 0.0) == 0.25);
  const auto list = cfg.get_string_list("toy.steppers", {});
  REQUIRE(list.size() == 2);
  CHECK(list[0] == "euler");
  CHECK(list[1] == "rk4");
  CHECK_NOTHROW(cfg.require_all_consumed());
}

TEST_CASE("typed getters report defaults, record echo, and reject junk") {
  KeyValueConfig cfg;
  cfg.set("a.x", "nope");
  cfg.set("a.b", "maybe");
  CHECK(cfg.get_double("missing.double", 1.5) == 1.5);
  CHECK(cfg.get_long("missing.long", -3) == -3);
  CHECK(cfg.get_bool("missing.bool", true) == true);
  CHECK_THROWS_AS(cfg.get_double("a.x", 0.0), ConfigError);
  CHECK_THROWS_AS(cfg.get_bool("a.b", false), ConfigError);
  CHECK(cfg.echo().at("missing.double") == "1.5");

  KeyValueConfig unknown;
  unknown.set("trainer.stepsize", "0.1");
  unknown.get_double("trainer.h", 0.03);
  CHECK_THROWS_WITH_AS(unknown.require_all_consumed(),
                       "unknown config keys: trainer.stepsize", ConfigError);
}

TEST_CASE("overrides beat file values") {
  const auto dir = fresh_dir("cfg_override");
  write_file(dir / "a.cfg", "toy.epsilon = 0.5\n");
  KeyValueConfig cfg = KeyValueConfig::from_file(dir / "a.cfg");
  cfg.apply_override("toy.epsilon=0.25");
  CHECK(cfg.get_double("toy.epsilon", 0.1) == 0.25);
  CHECK_THROWS_AS(cfg.apply_override("no-equals-sign"), ConfigError);
}

TEST_CASE("threshold bands") {
  CHECK(make_threshold("t", 0.5, 0.0, 1.0).pass);
  CHECK(!make_threshold("t", -0.5, 0.0, 1.0).pass);
  CHECK(!make_threshold("t", 1.5, 0.0, 1.0).pass);
  CHECK(make_threshold("t", 5.0, 3.0, std::nullopt).pass);
  CHECK(!make_threshold("t", std::nan(""), std::nullopt, 1.0).pass);
}

TEST_CASE("toy subcommand passes its reference thresholds") {
  const auto dir = fresh_dir("toy_ref");
  const ExecResult r = exec_cli("toy --out " + dir.string());
  CHECK(r.code == 0);
  const json summary = load_summary(dir, "toy");
  CHECK(summary["status"] == "completed");
  CHECK(summary["exit_code"] == 0);
  REQUIRE(summary["thresholds"].size() == 2);
  for (const auto& t : summary["thresholds"]) CHECK(t["pass"] == true);

  const std::string csv = read_file(dir / "toy_euler.csv");
  CHECK(csv.rfind("# schema odegan-toy-trajectory-1\n", 0) == 0);
  CHECK(csv.find("t,theta,phi,state_norm,analytic_theta,analytic_phi,abs_error\n") !=
        std::string::npos);
}

TEST_CASE("reruns reproduce byte-identical CSV bodies") {
  const auto d1 = fresh_dir("rerun_1");
  const auto d2 = fresh_dir("rerun_2");
  const std::string mog_args =
      " --set trainer.iterations=40 --set trainer.batch=32 --set gan.hidden=4,4"
      " --set gan.latent=3 --set trainer.log_every=5 --set mog.dump_samples=200"
      " --set seed=12";
  for (const auto& dir : {d1, d2}) {
    CHECK(exec_cli("toy --out " + dir.string()).code == 0);
    CHECK(exec_cli("order-test --out " + dir.string()).code == 0);
    CHECK(exec_cli("eigen-check --out " + dir.string()).code == 0);
    exec_cli("mog --out " + dir.string() + mog_args);  // thresholds may fail; bytes matter
  }
  for (const std::string file :
       {"toy_euler.csv", "toy_heun.csv", "order_errors.csv", "eigen_trials.csv",
        "mog_trajectory.csv", "mog_samples.csv"}) {
    CAPTURE(file);
    CHECK(read_file(d1 / file) == read_file(d2 / file));
  }
}

TEST_CASE("unknown keys and bad values exit with the config-error code") {
  const auto dir = fresh_dir("bad_cfg");
  ExecResult r = exec_cli("toy --out " + dir.string() + " --set trainer.stepsize=0.1");
  CHECK(r.code == 4);
  CHECK(r.output.find("trainer.stepsize") != std::string::npos);

  r = exec_cli("toy --out " + dir.string() + " --set trainer.h=fast");
  CHECK(r.code == 4);

  r = exec_cli("mog --out " + dir.string() + " --set trainer.stepper=leapfrog");
  CHECK(r.code == 4);

  r = exec_cli("toy --out " + dir.string() + " --set toy.epsilon=2.5");
  CHECK(r.code == 4);

  r = exec_cli("linear-probe --out " + dir.string());
  CHECK(r.code == 4);
  CHECK(r.output.find("probe.file") != std::string::npos);
}

TEST_CASE("threshold failures exit 2, aborts exit 3") {
  const auto dir = fresh_dir("exit_codes");
  // 40 iterations cannot reach 14/16 dump coverage.
  ExecResult r = exec_cli("mog --out " + dir.string() +
                          " --set trainer.iterations=40 --set trainer.batch=32"
                          " --set gan.hidden=4,4 --set gan.latent=3"
                          " --set mog.dump_samples=200");
  CHECK(r.code == 2);

  r = exec_cli("toy --out " + dir.string() + " --set trainer.h=1e150");
  CHECK(r.code == 3);
  const json summary = load_summary(dir, "toy");
  CHECK(summary["status"] == "aborted");
  CHECK(summary["abort_iteration"].get<long>() >= 0);
}

TEST_CASE("output directory resolution: flag beats environment beats config key") {
  const auto flag_dir = fresh_dir("outres_flag");
  const auto env_dir = fresh_dir("outres_env");
  const auto key_dir = fresh_dir("outres_key");

  ExecResult r = exec_cli("order-test --out " + flag_dir.string());
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(flag_dir / "order_errors.csv"));

  const std::string env_prefix = "ODEGAN_OUTPUT_DIR=" + env_dir.string() + " ";
  const std::string cmd = env_prefix + std::string(ODEGAN_BIN) + " order-test 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[256];
  while (fgets(buf, sizeof(buf), pipe) != nullptr) {
  }
  CHECK(WEXITSTATUS(pclose(pipe)) == 0);
  CHECK(std::filesystem::exists(env_dir / "order_errors.csv"));

  const auto cfg_file = kWork / "outres.cfg";
  write_file(cfg_file, "output_dir = " + key_dir.string() + "\n");
  r = exec_cli("order-test --config " + cfg_file.string());
  CHECK(r.code == 0);
  CHECK(std::filesystem::exists(key_dir / "order_errors.csv"));
}

TEST_CASE("config file plus --set override on the real binary") {
  const auto dir = fresh_dir("cfg_cli");
  const auto cfg_file = kWork / "toyeps.cfg";
  write_file(cfg_file, "toy.epsilon = 0.5\ntoy.steppers = heun\n");
  const ExecResult r = exec_cli("toy --config " + cfg_file.string() + " --out " +
                                dir.string() + " --set toy.epsilon=0.3");
  CHECK(r.code == 0);
  const json summary = load_summary(dir, "toy");
  CHECK(summary["config"]["toy.epsilon"] == "0.3");
  CHECK(summary["metrics"]["epsilon"].get<double>() == 0.3);
  CHECK(summary["metrics"]["steppers"].contains("heun"));
  CHECK(!summary["metrics"]["steppers"].contains("euler"));
  // Off-reference settings declare no thresholds.
  CHECK(summary["thresholds"].empty());
}

TEST_CASE("linear-probe analyses blocks from a JSON file") {
  const auto dir = fresh_dir("probe");
  const auto blocks = kWork / "blocks.json";
  write_file(blocks, R"({"a": [[0.1]], "b": [[1.0]], "c": [[0.0]]})");
  const ExecResult r = exec_cli("linear-probe --out " + dir.string() +
                                " --set probe.file=" + blocks.string());
  CHECK(r.code == 0);
  const json summary = load_summary(dir, "linear-probe");
  CHECK(summary["metrics"]["verdict"] == "ConvergesLocally");
  CHECK(summary["metrics"]["min_real_part"].get<double>() == doctest::Approx(0.05));
  const std::string csv = read_file(dir / "probe_spectrum.csv");
  CHECK(csv.rfind("# schema odegan-spectrum-1\n", 0) == 0);

  write_file(blocks, R"({"a": [[0.1]], "b": [[1.0, 2.0]], "c": [[0.0]]})");
  CHECK(exec_cli("linear-probe --out " + dir.string() +
                 " --set probe.file=" + blocks.string())
            .code == 4);

  write_file(blocks, "not json");
  CHECK(exec_cli("linear-probe --out " + dir.string() +
                 " --set probe.file=" + blocks.string())
            .code == 4);
}

TEST_CASE("reg-sweep emits the aggregate CSV and per-lambda trajectories") {
  const auto dir = fresh_dir("regsweep_small");
  KeyValueConfig cfg;
  cfg.set("reg.lambdas", "0.0,0.07");
  cfg.set("trainer.iterations", "60");
  cfg.set("trainer.batch", "32");
  cfg.set("trainer.log_every", "5");
  cfg.set("reg.window_start", "10");
  cfg.set("gan.hidden", "4,4");
  cfg.set("gan.latent", "3");
  const RunSummary summary = run_reg_sweep(cfg, dir);
  CHECK(summary.kind == "reg-sweep");
  REQUIRE(summary.thresholds.size() == 1);
  CHECK(summary.thresholds[0].name == "embedded_err_max_increase");
  const std::string csv = read_file(dir / "reg_sweep.csv");
  CHECK(csv.rfind("# schema odegan-regsweep-1\n", 0) == 0);
  CHECK(read_file(dir / "reg_trajectory_0.csv")
            .rfind("# schema odegan-trajectory-1\n", 0) == 0);
  CHECK(std::filesystem::exists(dir / "reg_trajectory_1.csv"));

  // Duplicated lambda values give identical means (determinism).
  const auto dir2 = fresh_dir("regsweep_dup");
  KeyValueConfig dup;
  dup.set("reg.lambdas", "0.03,0.03");
  dup.set("trainer.iterations", "60");
  dup.set("trainer.batch", "32");
  dup.set("trainer.log_every", "5");
  dup.set("reg.window_start", "10");
  dup.set("gan.hidden", "4,4");
  dup.set("gan.latent", "3");
  const RunSummary s2 = run_reg_sweep(dup, dir2);
  const double e0 = s2.metrics["sweep"][0]["mean_embedded_err"].get<double>();
  const double e1 = s2.metrics["sweep"][1]["mean_embedded_err"].get<double>();
  CHECK(e0 == e1);
  CHECK(s2.thresholds[0].pass);
}

TEST_CASE("in-process mog run returns the same summary shape the CLI writes") {
  const auto dir = fresh_dir("mog_inproc");
  KeyValueConfig cfg;
  cfg.set("trainer.iterations", "30");
  cfg.set("trainer.batch", "16");
  cfg.set("trainer.log_every", "10");
  cfg.set("gan.hidden", "4,4");
  cfg.set("gan.latent", "3");
  cfg.set("mog.dump_samples", "100");
  const RunSummary summary = run_mog(cfg, dir);
  CHECK(summary.kind == "mog");
  CHECK(summary.status == "completed");
  CHECK(summary.metrics.contains("window_mean_gap_d"));
  CHECK(summary.metrics.contains("dump_coverage"));
  CHECK(summary.exit_code() == load_summary(dir, "mog")["exit_code"].get<int>());
  for (const auto& f : summary.files) CHECK(std::filesystem::exists(dir / f));
}
