#include <doctest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "fixtures.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string("\"") + D2C_CLI_PATH + "\" " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

constexpr const char* kTinyConfig = R"({
  "profile": "desk-scale",
  "train": {"iterations": 3, "updates_per_iteration": 10},
  "sac": {"actor_hidden": [16], "critic_hidden": [16], "batch_size": 16},
  "classifier": {"trunk_hidden": [16], "negatives": 16, "positives": 16, "target": 16,
                 "update_frequency": 50, "iterations_per_update": 2},
  "curriculum": {"candidates": 40},
  "eval": {"every": 2, "episodes_per_goal": 1}
})";

}  // namespace

TEST_CASE("verify passes and --help lists subcommands and flags") {
  const auto v = run("verify");
  CHECK(v.code == 0);
  CHECK(v.out.find("[PASS]") != std::string::npos);
  CHECK(v.out.find("[FAIL]") == std::string::npos);

  const auto h = run("--help");
  CHECK(h.code == 0);
  for (const char* s : {"train", "eval", "plot", "snapshot", "verify"}) CHECK(h.out.find(s) != std::string::npos);
  const auto th = run("train --help");
  for (const char* s : {"--config", "--profile", "--seed", "--env", "--output", "--resume"})
    CHECK(th.out.find(s) != std::string::npos);
}

TEST_CASE("bad usage exits nonzero") {
  CHECK(run("").code != 0);
  CHECK(run("frobnicate").code != 0);
  CHECK(run("train --profile nope").code != 0);
  CHECK(run("eval").code != 0);
}

TEST_CASE("malformed config reports the key path") {
  const auto dir = d2c::test::scratch_dir("cli_badcfg");
  std::ofstream(dir / "bad.json") << R"({"sac": {"batch_size": "many"}})";
  const auto r = run("train --config \"" + (dir / "bad.json").string() + "\" --output \"" + (dir / "out").string() + "\"");
  CHECK(r.code != 0);
  CHECK(r.out.find("sac.batch_size") != std::string::npos);

  std::ofstream(dir / "unknown.json") << R"({"train": {"iteratoins": 3}})";
  const auto u = run("train --config \"" + (dir / "unknown.json").string() + "\"");
  CHECK(u.code != 0);
  CHECK(u.out.find("train.iteratoins") != std::string::npos);
}

TEST_CASE("plot rejects inputs with different schemas") {
  const auto dir = d2c::test::scratch_dir("cli_plot");
  std::ofstream(dir / "a.csv") << "iter,steps,curr_dist,success,mean_reward,clf_loss,critic_loss,actor_loss,alpha\n"
                                  "0,10,1,,,,,,\n";
  std::ofstream(dir / "b.csv") << "iter,steps\n0,10\n";
  const auto bad = run("plot --input \"" + (dir / "a.csv").string() + "\" --input \"" + (dir / "b.csv").string() +
                       "\" --output \"" + (dir / "p.svg").string() + "\"");
  CHECK(bad.code != 0);
  CHECK(bad.out.find("<-- differs") != std::string::npos);
  const auto ok = run("plot --input \"" + (dir / "a.csv").string() + "\" --column curr_dist --output \"" +
                      (dir / "p.svg").string() + "\"");
  CHECK(ok.code == 0);
  CHECK(fs::exists(dir / "p.svg"));
}

TEST_CASE("train, eval and snapshot end to end; same seed gives identical CSVs") {
  const auto dir = d2c::test::scratch_dir("cli_train");
  std::ofstream(dir / "tiny.json") << kTinyConfig;
  const std::string cfg = "--config \"" + (dir / "tiny.json").string() + "\" --seed 5 --quiet";
  const auto a = run("train " + cfg + " --output \"" + (dir / "a").string() + "\"");
  REQUIRE_MESSAGE(a.code == 0, a.out);
  const auto b = run("train " + cfg + " --output \"" + (dir / "b").string() + "\"");
  REQUIRE_MESSAGE(b.code == 0, b.out);
  CHECK(a.out.find("final success rate") != std::string::npos);
  for (const char* f : {"config.json", "metrics.csv", "snapshot.svg", "checkpoint/manifest.json"})
    CHECK(fs::exists(dir / "a" / f));
  const auto csv = slurp(dir / "a" / "metrics.csv");
  CHECK(csv == slurp(dir / "b" / "metrics.csv"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  const auto e = run("eval --checkpoint \"" + (dir / "a" / "checkpoint").string() + "\" --episodes 1");
  CHECK(e.code == 0);
  CHECK(e.out.find("success_rate") != std::string::npos);
  const auto s = run("snapshot --checkpoint \"" + (dir / "a" / "checkpoint").string() + "\" --output \"" +
                     (dir / "s.svg").string() + "\"");
  CHECK(s.code == 0);
  CHECK(slurp(dir / "s.svg") == slurp(dir / "a" / "snapshot.svg"));

  const auto missing = run("eval --checkpoint \"" + (dir / "nope").string() + "\"");
  CHECK(missing.code != 0);
  CHECK(missing.out.find("error:") != std::string::npos);
}
