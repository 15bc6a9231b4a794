#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "treeproj/error.hpp"
#include "treeproj/run_config.hpp"

using namespace treeproj;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("treeproj_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with stdout captured into `out`; returns the exit code.
int run(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string("\"") + TREEPROJ_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value)
      setenv("TREEPROJ_SEED", value, 1);
    else
      unsetenv("TREEPROJ_SEED");
  }
  ~EnvGuard() { unsetenv("TREEPROJ_SEED"); }
};

}  // namespace

TEST_CASE("config precedence: defaults < file < environment < overrides") {
  const fs::path dir = scratch("cli_precedence");
  write_text(dir / "run.cfg", "# desk run\nseed = 5\nsteps = 40\nlr = 0.002  # faster\n");
  RunConfig c;
  CHECK(c.integer("steps") == 3000);
  c.load_file(dir / "run.cfg");
  CHECK(c.integer("steps") == 40);
  CHECK(c.real("lr") == 0.002);
  CHECK(c.seed() == 5);
  {
    EnvGuard env("11");
    c.apply_environment();
  }
  CHECK(c.seed() == 11);
  c.set("seed", "12");
  c.set("steps", "50");
  CHECK(c.seed() == 12);
  CHECK(c.integer("steps") == 50);
  CHECK(c.dump().find("steps = 50\n") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("config rejects unknown keys and bad values with their origin") {
  const fs::path dir = scratch("cli_bad_config");
  RunConfig c;
  try {
    c.set("stepz", "3", "--set");
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("stepz") != std::string::npos);
  }
  CHECK_THROWS_AS(c.set("steps", "many"), ContractViolation);
  CHECK_THROWS_AS(c.set("evaluate", "perhaps"), ContractViolation);
  CHECK_THROWS_AS(c.set("lr", "0.1x"), ContractViolation);
  write_text(dir / "bad.cfg", "steps = 4\nno equals sign\n");
  try {
    c.load_file(dir / "bad.cfg");
    FAIL("expected ContractViolation");
  } catch (const ContractViolation& e) {
    CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(c.load_file(dir / "absent.cfg"), IoError);
  {
    EnvGuard env("not-a-number");
    CHECK_THROWS_AS(c.apply_environment(), ContractViolation);
  }
  fs::remove_all(dir);
}

TEST_CASE("typed views of the config") {
  RunConfig c;
  c.set("d_model", "48");
  c.set("heads", "4");
  c.set("dropout", "0.2");
  c.set("threshold_mode", "score-tuned");
  CHECK(encoder_config(c).d_model == 48);
  CHECK(train_config(c).dropout == 0.2);
  CHECK(dynamics_options(c).mode == ThresholdMode::ScoreTuned);
  c.set("unseen", "repeat:reverse");
  CHECK(corpus_config(c).unseen.size() == 1);
}

TEST_CASE("CLI exit codes and artifacts") {
  const fs::path dir = scratch("cli_run");
  const fs::path log = dir / "stdout.txt";

  CHECK(run("gen-data --out \"" + (dir / "data").string() +
                "\" --set train_count=30 --set val_count=10 --set cg_count=10 --seed 3",
            log) == 0);
  CHECK(fs::exists(dir / "data" / "train.tsv"));
  CHECK(fs::exists(dir / "data" / "cg_test.tsv"));
  CHECK(slurp(dir / "data" / "resolved_config.gen-data.txt").find("seed = 3\n") != std::string::npos);

  CHECK(run("gen-data --out \"" + (dir / "x").string() + "\" --set no_such_key=1", log) == 1);
  CHECK(slurp(log).find("no_such_key") != std::string::npos);
  CHECK(run("gen-data", log) == 1);
  CHECK(run("no-such-command", log) == 1);
  CHECK(run("project --checkpoint \"" + (dir / "missing").string() + "\" --input \"" +
                (dir / "data" / "train.tsv").string() + "\" --run-dir \"" + (dir / "p").string() + "\"",
            log) == 2);
  CHECK(run("train --data \"" + (dir / "nowhere").string() + "\" --run-dir \"" + (dir / "r").string() + "\"", log) == 2);

  write_text(dir / "pred.sexpr", "((a b) c)\n(a (b c))\n");
  write_text(dir / "gold.sexpr", "((a b) c)\n((a b) c)\n");
  REQUIRE(run("eval-trees --pred \"" + (dir / "pred.sexpr").string() + "\" --gold \"" + (dir / "gold.sexpr").string() + "\"",
              log) == 0);
  const auto j = nlohmann::json::parse(slurp(log));
  CHECK(j["f1"].get<double>() == doctest::Approx(0.75));
  CHECK(j["sentences"].get<int>() == 2);

  write_text(dir / "short.sexpr", "((a b) c)\n");
  CHECK(run("eval-trees --pred \"" + (dir / "pred.sexpr").string() + "\" --gold \"" + (dir / "short.sexpr").string() + "\"",
            log) == 1);
  fs::remove_all(dir);
}
