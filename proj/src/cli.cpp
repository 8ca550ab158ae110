#include "ncs/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numbers>
#include <optional>
#include <random>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "ncs/designer.hpp"
#include "ncs/io.hpp"
#include "ncs/simulator.hpp"

namespace ncs {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string input;
  std::string example;
  std::string variant = "linear-search";
  std::string t_end;
  double ode_step = 0.0;
  std::uint64_t seed = 7;
  std::string out = "out";
  int jobs = 1;
  std::optional<double> t_max;
  std::string x0_mode = "random-unit";
  std::string x0_file;
  int samples = 100;
};

void configure_logging() {
  spdlog::set_level(spdlog::level::warn);
  const char* env = std::getenv("NCS_LOG");
  if (!env) return;
  const std::string v = env;
  if (v == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (v == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (v == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::warn("ignoring NCS_LOG={}; expected error, info or debug", v);
  }
}

ProblemDocument load_input(const Options& o) {
  if (!o.example.empty() && !o.input.empty()) throw InvalidInputError("--input and --example are exclusive");
  if (!o.example.empty()) {
    if (o.example != "pendulum") throw InvalidInputError("unknown example \"" + o.example + "\"");
    auto ex = build_pendulum_example();
    return {std::move(ex.plant), std::move(ex.config)};
  }
  if (o.input.empty()) throw InvalidInputError("one of --input or --example is required");
  return load_problem(o.input);
}

double t_end_of(const Options& o) {
  return o.t_end.empty() ? 10.0 * std::numbers::pi : parse_duration(o.t_end);
}

void apply_overrides(const Options& o, DesignConfig& config, int n) {
  if (o.t_max) config.t_max = *o.t_max;
  if (o.ode_step > 0.0) config.ode_step = o.ode_step;
  config.validate(n);
}

fs::path prepare_out(const Options& o) {
  const fs::path out = o.out;
  fs::create_directories(out);
  return out;
}

void write_manifest(const fs::path& out, const std::string& command, const Options& o, double t_end,
                    double seconds, const std::vector<std::string>& files, int exit_code) {
  Json m = Json::object();
  m["command"] = command;
  m["input"] = o.example.empty() ? o.input : "example:" + o.example;
  m["output_dir"] = o.out;
  m["variant"] = o.variant;
  m["t_end"] = t_end;
  m["seed"] = o.seed;
  m["tool_version"] = kToolVersion;
  m["wall_clock_seconds"] = seconds;
  m["exit_code"] = exit_code;
  m["files"] = files;
  write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_design(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  ProblemDocument doc = load_input(o);
  apply_overrides(o, doc.config, doc.plant.size());
  const double t_end = t_end_of(o);
  const SparsifyVariant variant = parse_variant(o.variant);
  if (o.jobs < 1) throw InvalidInputError("--jobs must be at least 1");
  plant_to_json(doc.plant);  // fails early on plants that cannot be saved

  const DesignRun run = run_design(doc.plant, doc.config, t_end, variant, o.jobs);
  const fs::path out = prepare_out(o);
  ScheduleDocument sched{doc.plant, doc.config, variant, t_end, run.complete, run.diagnostic, run.tmin_bound,
                         run.entries};
  write_file_atomic(out / "schedule.json", schedule_to_string(sched));
  write_file_atomic(out / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, doc.plant, run.entries); });
  const int code = run.complete ? kExitOk : kExitInfeasible;
  write_manifest(out, "design", o, t_end, elapsed(t0), {"schedule.json", "summary.csv"}, code);
  if (run.complete) {
    spdlog::info("designed {} intervals over [0, {}]", run.entries.size(), t_end);
  } else {
    std::cerr << "design infeasible: " << run.diagnostic << "\n";
  }
  return code;
}

std::pair<VectorXd, VectorXd> initial_conditions(const Options& o, int n) {
  VectorXd x0 = VectorXd::Zero(n), e0 = VectorXd::Zero(n);
  if (o.x0_mode == "zero") return {x0, e0};
  if (o.x0_mode == "random-unit") {
    std::mt19937_64 rng(o.seed);
    std::normal_distribution<double> normal;
    for (int i = 0; i < n; ++i) x0(i) = normal(rng);
    for (int i = 0; i < n; ++i) e0(i) = normal(rng);
    return {x0.normalized(), e0.normalized()};
  }
  if (o.x0_mode == "file") {
    if (o.x0_file.empty()) throw InvalidInputError("--x0 file requires --x0-file");
    const std::string text = read_file(o.x0_file);
    Json j;
    try {
      j = Json::parse(text);
    } catch (const Json::parse_error& e) {
      throw IoError(o.x0_file + ": malformed JSON: " + e.what());
    }
    auto vec = [&](const char* key) {
      if (!j.is_object() || !j.contains(key) || !j[key].is_array() || static_cast<int>(j[key].size()) != n) {
        throw IoError(fmt::format("{}: \"{}\" must be an array of {} numbers", o.x0_file, key, n));
      }
      VectorXd v(n);
      for (int i = 0; i < n; ++i) {
        if (!j[key][i].is_number()) throw IoError(fmt::format("{}: {}[{}] is not a number", o.x0_file, key, i));
        v(i) = j[key][i].get<double>();
      }
      return v;
    };
    return {vec("x0"), vec("e0")};
  }
  throw InvalidInputError("--x0 must be zero, random-unit or file");
}

Json vector_json(const VectorXd& v) {
  Json a = Json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

int cmd_simulate(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (o.input.empty()) throw InvalidInputError("simulate requires --input <schedule.json>");
  const ScheduleDocument doc = load_schedule(o.input);
  if (doc.entries.empty()) throw IoError(o.input + ": schedule has no entries");
  const double step = o.ode_step > 0.0 ? o.ode_step : doc.config.ode_step;
  const int n = doc.plant.total_states();
  const auto [x0, e0] = initial_conditions(o, n);

  Json monitor = Json::object();
  monitor["x0"] = vector_json(x0);
  monitor["e0"] = vector_json(e0);
  const fs::path out = prepare_out(o);
  std::vector<std::string> files;
  bool passed = true;
  try {
    const SimulationTrace trace = simulate(doc.plant, doc.entries, x0, e0, step);
    write_file_atomic(out / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, trace); });
    files.push_back("trace.csv");
    const LyapunovReport ly = monitor_lyapunov(trace, doc.entries, doc.config.min_beta());
    const Theorem2Report th = verify_theorem2(doc.plant, doc.entries, doc.config, o.samples);
    monitor["t_end"] = trace.times.back();
    monitor["rows"] = trace.size();
    monitor["final"] = {{"x_norm", trace.x.back().norm()},
                        {"e_norm", trace.e.back().norm()},
                        {"xu_norm", trace.xu.back().norm()}};
    monitor["lyapunov"] = lyapunov_to_json(ly);
    monitor["theorem2"] = theorem2_to_json(th);
    passed = ly.passed && th.passed;
  } catch (const DivergenceError& e) {
    monitor["divergence"] = {{"t", e.time()}, {"message", e.what()}};
    std::cerr << e.what() << "\n";
    passed = false;
  }
  monitor["passed"] = passed;
  write_file_atomic(out / "monitor.json", monitor.dump(2) + "\n");
  files.push_back("monitor.json");
  const int code = passed ? kExitOk : kExitMonitorFailure;
  write_manifest(out, "simulate", o, doc.t_end, elapsed(t0), files, code);
  if (!passed) std::cerr << "monitor failure; see " << (out / "monitor.json").string() << "\n";
  return code;
}

int cmd_compare(const Options& o) {
  const auto t0 = std::chrono::steady_clock::now();
  ProblemDocument doc = load_input(o);
  apply_overrides(o, doc.config, doc.plant.size());
  const double t_end = t_end_of(o);
  if (o.jobs < 1) throw InvalidInputError("--jobs must be at least 1");
  if (doc.plant.adjacency().size() > 12) {
    throw InvalidInputError(fmt::format("exhaustive search is limited to 12 plant links, this plant has {}",
                                        doc.plant.adjacency().size()));
  }
  const DesignRun run = run_design(doc.plant, doc.config, t_end, SparsifyVariant::kLinearSearch, o.jobs);
  const auto rows = compare_with_exhaustive(doc.plant, doc.config, run, o.jobs);
  const fs::path out = prepare_out(o);
  write_file_atomic(out / "links_compare.csv", [&](std::ostream& os) { write_links_compare_csv(os, rows); });
  write_file_atomic(out / "summary.csv", [&](std::ostream& os) { write_summary_csv(os, doc.plant, run.entries); });
  const int code = run.complete ? kExitOk : kExitInfeasible;
  write_manifest(out, "compare", o, t_end, elapsed(t0), {"links_compare.csv", "summary.csv"}, code);
  if (!run.complete) std::cerr << "design infeasible: " << run.diagnostic << "\n";
  return code;
}

int cmd_plot(const Options& o) {
  const fs::path out = o.out;
  const fs::path summary = out / "summary.csv";
  if (!fs::exists(summary)) throw IoError(summary.string() + " not found; run design first");
  const std::string text = read_file(summary);
  const std::string header = text.substr(0, text.find('\n'));
  const bool compare = fs::exists(out / "links_compare.csv");
  write_file_atomic(out / "plot.gp", plot_script(header, compare));
  std::cout << (out / "plot.gp").string() << "\n";
  return kExitOk;
}

}  // namespace

double parse_duration(const std::string& text) {
  std::string s = text;
  double scale = 1.0;
  for (const std::string suffix : {"pi", "π"}) {
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
      s.erase(s.size() - suffix.size());
      scale = std::numbers::pi;
      if (s.empty()) s = "1";
      break;
    }
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidInputError("invalid duration \"" + text + "\"");
  }
  if (used != s.size() || !std::isfinite(v * scale) || !(v > 0.0)) {
    throw InvalidInputError("invalid duration \"" + text + "\"");
  }
  return v * scale;
}

int run_cli(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Sparse distributed observer-controller design for time-varying networked plants"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  Options o;
  double t_max = 0.0;

  auto add_problem = [&](CLI::App* c) {
    c->add_option("--input", o.input, "Plant and config JSON document");
    c->add_option("--example", o.example, "Built-in example (pendulum)");
    c->add_option("--t-end", o.t_end, "Design horizon, e.g. 31.4159 or 10pi (default 10pi)");
    c->add_option("--t-max", t_max, "Cap on T_k");
    c->add_option("--jobs", o.jobs, "Worker threads for exhaustive search");
    c->add_option("--out", o.out, "Output directory");
    c->add_option("--ode-step", o.ode_step, "Integration step stored in the config");
    c->add_option("--seed", o.seed, "Recorded in the manifest");
  };
  auto* design = app.add_subcommand("design", "Design a gain schedule");
  add_problem(design);
  design->add_option("--variant", o.variant, "linear-search, threshold or exhaustive");
  auto* compare = app.add_subcommand("compare", "Compare linear-search link counts with the exhaustive optimum");
  add_problem(compare);

  auto* sim = app.add_subcommand("simulate", "Simulate a schedule and check the Lyapunov conditions");
  sim->add_option("--input", o.input, "schedule.json from design")->required();
  sim->add_option("--x0", o.x0_mode, "zero, random-unit or file");
  sim->add_option("--x0-file", o.x0_file, "JSON with \"x0\" and \"e0\" arrays, for --x0 file");
  sim->add_option("--seed", o.seed, "Seed for --x0 random-unit");
  sim->add_option("--ode-step", o.ode_step, "Integration step (default min T_k / 20)");
  sim->add_option("--samples", o.samples, "Samples per interval for the decrease-condition check");
  sim->add_option("--out", o.out, "Output directory");

  auto* plot = app.add_subcommand("plot", "Write a gnuplot script over summary.csv");
  plot->add_option("--out", o.out, "Output directory holding summary.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInputError;
  }
  if (design->count("--t-max") || compare->count("--t-max")) o.t_max = t_max;

  try {
    if (*design) return cmd_design(o);
    if (*sim) return cmd_simulate(o);
    if (*compare) return cmd_compare(o);
    return cmd_plot(o);
  } catch (const DesignInfeasibleError& e) {
    std::cerr << "design infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const IoError& e) {
    std::cerr << "input error: " << e.what() << "\n";
  } catch (const InvalidInputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
  } catch (const ModelError& e) {
    std::cerr << "input error: " << e.what() << "\n";
  } catch (const SimulationError& e) {
    std::cerr << "input error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
  }
  return kExitInputError;
}

}  // namespace ncs
