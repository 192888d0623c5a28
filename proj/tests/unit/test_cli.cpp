#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "afftrack/io.hpp"
#include "afftrack/simgen.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const auto d = fs::temp_directory_path() / "afftrack_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args`, capturing stdout.
Run cli(const std::string& args) {
  const std::string log = path("stdout.txt");
  const std::string cmd = std::string(AFFTRACK_CLI) + " " + args + " > " + log + " 2> " + path("stderr.txt");
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

const std::string& scenario() {
  static const std::string manifest = [] {
    REQUIRE(cli("simulate --preset crossing_pair --seed 3 --out " + path("s1")).code == 0);
    return path("s1/manifest.txt");
  }();
  return manifest;
}

const std::string& checkpoint() {
  static const std::string ck = [] {
    REQUIRE(cli("train --manifest " + scenario() + " --epochs 1 --out " + path("ck1")).code == 0);
    return path("ck1");
  }();
  return ck;
}

}  // namespace

TEST_CASE("simulate") {
  CHECK(fs::exists(scenario()));
  CHECK(cli("simulate --preset nope --out " + path("bad")).code == 2);
  CHECK(cli("simulate --preset crossing_pair --seed 3 --out " + path("s2")).code == 0);
  for (const char* f : {"gt.txt", "detections.txt", "detections2d.txt", "clouds/000000.txt"})
    CHECK(slurp(workdir() / "s1" / f) == slurp(workdir() / "s2" / f));
  CHECK(cli("simulate --list --out " + path("unused")).out.find("cluster_dense") != std::string::npos);
}

TEST_CASE("train") {
  CHECK(fs::exists(checkpoint()));
  const Run r = cli("train --manifest " + scenario() + " --epochs 1 --out " + path("ck_b") +
                    " --loss-csv " + path("loss.csv"));
  CHECK(r.code == 0);
  CHECK(slurp(path("loss.csv")).rfind("epoch,mean_loss\n0,", 0) == 0);
  CHECK(cli("train --manifest " + scenario() + " --epochs 0 --out " + path("ck0")).code == 0);
  CHECK(fs::exists(path("ck0")));
  CHECK(cli("train --manifest " + scenario() + " --mixer nope --out " + path("ck_x")).code == 2);
}

TEST_CASE("track") {
  CHECK(cli("track --manifest " + scenario() + " --affinity heuristic --out " + path("t.txt")).code == 0);
  CHECK_FALSE(afftrack::load_tracks(path("t.txt")).empty());
  CHECK(cli("track --manifest " + scenario() + " --out " + path("t2.txt")).code == 2);
  CHECK(cli("track --manifest " + scenario() + " --checkpoint " + checkpoint() + " --out " + path("t3.txt"))
            .code == 0);
}

TEST_CASE("eval") {
  const auto s = afftrack::load_scenario(scenario());
  auto perfect = s.gt;
  for (auto& fr : perfect)
    for (auto& b : fr) b.state.score = 1.0;
  afftrack::save_tracks(path("perfect.txt"), perfect);
  const Run r = cli("eval --gt " + scenario() + " --tracks " + path("perfect.txt"));
  REQUIRE(r.code == 0);
  std::smatch m;
  REQUIRE(std::regex_search(r.out, m, std::regex("overall: AMOTA (\\S+) .* IDS (\\d+) ")));
  CHECK(std::stod(m[1]) == 1.0);
  CHECK(m[2] == "0");

  const Run d = cli("eval --gt " + scenario() + " --checkpoint " + checkpoint() + " --discrimination");
  CHECK(d.code == 0);
  CHECK(d.out.find("JSD=") != std::string::npos);

  const Run a = cli("eval --gt " + scenario() + " --checkpoint " + checkpoint() + " --ablation");
  CHECK(a.code == 0);
  int rows = 0;
  for (const char* id : {"1a ", "2a ", "3a ", "4a ", "1b ", "2b ", "3b ", "4b "})
    rows += a.out.find(std::string("\n") + id) != std::string::npos;
  CHECK(rows == 8);
}
