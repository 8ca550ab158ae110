#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ncs/cli.hpp"
#include "ncs/io.hpp"

using namespace ncs;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "ncs");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ncs_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

std::string plant_doc(const std::string& a, const std::string& b, const std::string& extra_config = "") {
  return R"({"plant": {"subsystems": [{"n": 1, "m": 1, "r": 1, "A": [[)" + a + R"(]], "B": [[)" + b +
         R"(]], "C": [[1]]}], "lipschitz": {"a": 0.1, "b": 0, "c": 0, "h": 0}},
 "config": {"kappa": [10], "mu": [10], "iota": 0, "omega": 0, "beta": [0.1], "epsilon": [0.05])" +
         extra_config + "}}";
}

const char* kDecoupled = R"({"plant": {"subsystems": [
   {"n": 1, "m": 1, "r": 1, "A": [[1]], "B": [[1]], "C": [[1]]},
   {"n": 1, "m": 1, "r": 1, "A": [[-1]], "B": [[1]], "C": [[1]]}],
  "lipschitz": {"a": 0, "b": 0, "c": 0, "h": 0}},
 "config": {"kappa": [10, 10], "mu": [10, 10], "iota": 5, "omega": 5, "beta": [0.1, 0.1],
            "epsilon": [0.05, 0.05], "T_max": 0.5}})";

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("durations accept multiples of pi") {
    CHECK(parse_duration("10pi") == doctest::Approx(10.0 * M_PI));
    CHECK(parse_duration("2.5") == 2.5);
    CHECK(parse_duration("pi") == doctest::Approx(M_PI));
    CHECK_THROWS(parse_duration("ten"));
  }

  TEST_CASE("usage errors exit with 1") {
    CHECK(run({"design", "--bogus"}) == kExitInputError);
    CHECK(run({"design"}) == kExitInputError);
    CHECK(run({"design", "--example", "cartpole"}) == kExitInputError);
  }

  TEST_CASE("malformed input exits with 1") {
    const auto dir = scratch("malformed");
    const auto in = write(dir / "bad.json", "{\"plant\": [1, 2,\n");
    CHECK(run({"design", "--input", in.string(), "--out", (dir / "out").string()}) == kExitInputError);
    CHECK_FALSE(fs::exists(dir / "out" / "manifest.json"));
  }

  TEST_CASE("uncontrollable plant exits with 2") {
    const auto dir = scratch("uncontrollable");
    const auto in = write(dir / "p.json", plant_doc("1", "0"));
    CHECK(run({"design", "--input", in.string(), "--t-end", "1", "--out", (dir / "out").string()}) ==
          kExitInfeasible);
    CHECK(fs::exists(dir / "out" / "schedule.json"));
    CHECK(fs::exists(dir / "out" / "manifest.json"));
  }

  TEST_CASE("design, simulate and plot a scalar plant") {
    const auto dir = scratch("pipeline");
    const auto in = write(dir / "p.json", plant_doc("1", "1", R"(, "T_max": 0.5)"));
    const auto out = (dir / "out").string();
    REQUIRE(run({"design", "--input", in.string(), "--t-end", "3", "--out", out}) == kExitOk);
    for (const char* f : {"schedule.json", "summary.csv", "manifest.json"}) CHECK(fs::exists(dir / "out" / f));
    const auto doc = load_schedule(dir / "out" / "schedule.json");
    CHECK(doc.complete);
    CHECK(doc.entries.back().t + doc.entries.back().T >= 3.0);
    const Json manifest = Json::parse(read_file(dir / "out" / "manifest.json"));
    CHECK(manifest["command"] == "design");
    CHECK(manifest["exit_code"] == 0);

    const auto sched = (dir / "out" / "schedule.json").string();
    CHECK(run({"simulate", "--input", sched, "--x0", "zero", "--out", (dir / "zero").string()}) == kExitOk);
    CHECK(fs::exists(dir / "zero" / "trace.csv"));
    CHECK(fs::exists(dir / "zero" / "monitor.json"));
    CHECK(run({"simulate", "--input", sched, "--x0", "random-unit", "--seed", "7", "--out", (dir / "rnd").string()}) ==
          kExitOk);
    const Json mon = Json::parse(read_file(dir / "rnd" / "monitor.json"));
    CHECK(mon["passed"] == true);

    const auto x0 = write(dir / "x0.json", R"({"x0": [1], "e0": [-1]})");
    CHECK(run({"simulate", "--input", sched, "--x0", "file", "--x0-file", x0.string(), "--out",
               (dir / "file").string()}) == kExitOk);
    CHECK(run({"simulate", "--input", sched, "--x0", "file", "--out", (dir / "nofile").string()}) == kExitInputError);

    // Same input and seed give the same bytes.
    REQUIRE(run({"simulate", "--input", sched, "--x0", "random-unit", "--seed", "7", "--out",
                 (dir / "rnd2").string()}) == kExitOk);
    CHECK(read_file(dir / "rnd" / "trace.csv") == read_file(dir / "rnd2" / "trace.csv"));
    REQUIRE(run({"design", "--input", in.string(), "--t-end", "3", "--out", (dir / "again").string()}) == kExitOk);
    CHECK(read_file(dir / "out" / "schedule.json") == read_file(dir / "again" / "schedule.json"));

    REQUIRE(run({"plot", "--out", out}) == kExitOk);
    const std::string script = read_file(dir / "out" / "plot.gp");
    REQUIRE(run({"plot", "--out", out}) == kExitOk);
    CHECK(read_file(dir / "out" / "plot.gp") == script);
  }

  TEST_CASE("truncated schedule exits with 1") {
    const auto dir = scratch("truncated");
    const auto in = write(dir / "p.json", plant_doc("1", "1", R"(, "T_max": 0.5)"));
    REQUIRE(run({"design", "--input", in.string(), "--t-end", "1", "--out", (dir / "out").string()}) == kExitOk);
    const std::string text = read_file(dir / "out" / "schedule.json");
    const auto cut = write(dir / "cut.json", text.substr(0, text.size() / 2));
    CHECK(run({"simulate", "--input", cut.string(), "--out", (dir / "sim").string()}) == kExitInputError);
    CHECK(run({"simulate", "--input", (dir / "missing.json").string(), "--out", (dir / "sim").string()}) ==
          kExitInputError);
  }

  TEST_CASE("plot without a summary exits with 1") {
    const auto dir = scratch("plot_empty");
    CHECK(run({"plot", "--out", dir.string()}) == kExitInputError);
  }

  TEST_CASE("compare on a decoupled plant") {
    const auto dir = scratch("compare");
    const auto in = write(dir / "p.json", kDecoupled);
    REQUIRE(run({"compare", "--input", in.string(), "--t-end", "1", "--out", (dir / "out").string()}) == kExitOk);
    const std::string csv = read_file(dir / "out" / "links_compare.csv");
    CHECK(csv == "k,t,heuristic,optimal\n0,0,0,0\n1,0.5,0,0\n");
  }
}
