// End-to-end checks on the pendulum example. Prints one PASS/FAIL line per
// criterion and exits nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "encoding_check.hpp"
#include "ncs/cli.hpp"
#include "ncs/designer.hpp"
#include "ncs/io.hpp"
#include "ncs/simulator.hpp"
#include "random_lmi.hpp"

using namespace ncs;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& title, const std::string& detail) {
  std::printf("%s %d %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "ncs");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

double lambda_min_diff(const SymMatrix& a, const SymMatrix& b) {
  return min_eig(SymMatrix::symmetrized(a.matrix() - b.matrix()));
}

/// Largest residual of the full interval problem at the stored certificate,
/// with every auxiliary scalar at its most favourable value.
double certificate_residual(const TimeVaryingNetworkedPlant& plant, const DesignConfig& config,
                            const std::vector<GainScheduleEntry>& entries, std::size_t k) {
  const auto& e = entries[k];
  DesignIterationInput in;
  in.k = e.k;
  in.t = e.t;
  in.snapshot = aggregate(plant, e.t);
  in.alpha = e.alpha;
  if (k > 0) in.prev = PreviousCertificate{entries[k - 1].Z, entries[k - 1].Phat};
  const Theorem3Problem tp = assemble_theorem3(in, config);
  Assignment a = tp.problem.zero_assignment();
  a[tp.Z] = e.Z.matrix();
  a[tp.Phat] = e.Phat.matrix();
  a[tp.W] = e.W.to_dense();
  a[tp.What] = e.What.to_dense();
  if (tp.Y >= 0) a[tp.Y] = e.Y.to_dense();
  if (tp.Yhat >= 0) a[tp.Yhat] = e.Yhat.to_dense();
  int off = 0;
  for (int i = 0; i < plant.size(); ++i) {
    const int n = tp.n[i];
    const double zmin = min_eig(e.Z.block(off, n));
    const double pmin = min_eig(e.Phat.block(off, n));
    const std::string si = std::to_string(i + 1);
    for (const auto& [name, v] : {std::pair<std::string, double>{"sK." + si, zmin}, {"sL." + si, zmin},
                                  {"sM." + si, pmin}, {"sO." + si, pmin}}) {
      if (auto id = tp.problem.find_variable(name)) a[*id](0, 0) = v;
    }
    off += n;
  }
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& r : check_solution(tp.problem, a)) worst = std::max(worst, r.residual);
  return worst;
}

}  // namespace

int main() {
  setenv("NCS_LOG", "error", 0);
  const fs::path root = fs::temp_directory_path() / "ncs_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto ex = build_pendulum_example();
  const DesignConfig& cfg = ex.config;

  // 1. Pendulum design over [0, 10 pi].
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run({"design", "--example", "pendulum", "--t-end", "10pi", "--variant", "linear-search", "--out",
                        (root / "a").string()});
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ScheduleDocument doc;
  bool loaded = false;
  try {
    doc = load_schedule(root / "a" / "schedule.json");
    loaded = true;
  } catch (const std::exception& e) {
    std::printf("cannot load schedule: %s\n", e.what());
  }
  const auto& entries = doc.entries;
  {
    double worst_res = -std::numeric_limits<double>::infinity(), worst_gain = -std::numeric_limits<double>::infinity();
    if (loaded) {
      for (std::size_t k = 0; k < entries.size(); ++k) {
        worst_res = std::max(worst_res, certificate_residual(ex.plant, cfg, entries, k));
        const auto& e = entries[k];
        for (int i = 0; i < 3; ++i) {
          worst_gain = std::max(worst_gain, max_singular_value(e.K.block(i, i)) - cfg.kappa[i]);
          worst_gain = std::max(worst_gain, max_singular_value(e.M.block(i, i)) - cfg.mu[i]);
        }
        for (const auto& [ij, b] : e.L.blocks())
          worst_gain = std::max(worst_gain, max_singular_value(b) - cfg.iota(ij.first, ij.second));
        for (const auto& [ij, b] : e.O.blocks())
          worst_gain = std::max(worst_gain, max_singular_value(b) - cfg.omega(ij.first, ij.second));
      }
    }
    const bool ok = code == 0 && loaded && doc.complete && worst_res <= 1e-6 && worst_gain <= 1e-8 && wall <= 600.0;
    report(1, ok, "pendulum design",
           fmt::format("exit {}, {} intervals, max LMI residual {:.3e}, max gain excess {:.3e}, {:.1f} s", code,
                       entries.size(), worst_res, worst_gain, wall));
  }

  // 9. A second identical run produces the same schedule bytes.
  {
    const int code2 = run({"design", "--example", "pendulum", "--t-end", "10pi", "--variant", "linear-search",
                           "--out", (root / "b").string()});
    bool same = false;
    try {
      same = read_file(root / "a" / "schedule.json") == read_file(root / "b" / "schedule.json");
    } catch (const std::exception&) {
    }
    report(9, code2 == 0 && same, "determinism",
           same ? "schedule.json byte-identical across two runs" : "schedule.json differs");
  }

  // 2. Link sparsity against the exhaustive optimum.
  {
    bool subset = loaded, bounded = loaded, optimal = loaded;
    int max_gap = 0, max_links = 0;
    if (loaded) {
      DesignRun heuristic;
      heuristic.entries = entries;
      heuristic.complete = doc.complete;
      const auto rows = compare_with_exhaustive(ex.plant, cfg, heuristic);
      for (const auto& e : entries) {
        for (const Link& l : e.alpha) subset &= ex.plant.has_link(l);
        max_links = std::max(max_links, e.link_count());
        bounded &= e.link_count() <= static_cast<int>(ex.plant.adjacency().size());
      }
      for (const auto& r : rows) {
        optimal &= r.optimal <= r.heuristic;
        max_gap = std::max(max_gap, r.heuristic - r.optimal);
      }
    }
    report(2, subset && bounded && optimal && max_gap <= 1, "link sparsity",
           fmt::format("max heuristic links {}, max heuristic-exhaustive gap {}", max_links, max_gap));
  }

  // 3. Certificate monotonicity.
  {
    double worst_z = std::numeric_limits<double>::infinity(), worst_p = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k < entries.size(); ++k) {
      worst_z = std::min(worst_z, lambda_min_diff(entries[k].Z, entries[k - 1].Z));
      worst_p = std::min(worst_p, lambda_min_diff(entries[k - 1].Phat, entries[k].Phat));
    }
    report(3, loaded && worst_z >= -1e-8 && worst_p >= -1e-8, "certificate monotonicity",
           fmt::format("min eig(Z_k - Z_k-1) {:.3e}, min eig(Phat_k-1 - Phat_k) {:.3e}", worst_z, worst_p));
  }

  // 4. Lyapunov decrease along 10 random trajectories.
  {
    bool ok = loaded;
    double worst_margin = 0.0, worst_jump = 0.0, worst_x = 0.0, worst_e = 0.0;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> N;
    for (int trial = 0; trial < 10 && loaded; ++trial) {
      VectorXd x0(12), e0(12);
      for (int i = 0; i < 12; ++i) {
        x0(i) = N(rng);
        e0(i) = N(rng);
      }
      x0.normalize();
      e0.normalize();
      try {
        const auto tr = simulate(ex.plant, entries, x0, e0);
        const auto rep = monitor_lyapunov(tr, entries, cfg.min_beta());
        ok &= rep.passed;
        worst_margin = std::max(worst_margin, rep.worst_interval_margin);
        worst_jump = std::max(worst_jump, rep.worst_switch_increase);
        worst_x = std::max(worst_x, tr.x.back().norm());
        worst_e = std::max(worst_e, tr.e.back().norm());
      } catch (const std::exception& err) {
        std::printf("simulation failed: %s\n", err.what());
        ok = false;
      }
    }
    ok &= worst_x <= 1e-2 && worst_e <= 1e-2;
    report(4, ok, "Lyapunov decrease",
           fmt::format("worst interval ratio excess {:.3e}, worst switch increase {:.3e}, final |x| {:.3e}, "
                       "final |e| {:.3e}",
                       worst_margin, worst_jump, worst_x, worst_e));
  }

  // 5. Decrease conditions re-evaluated along each interval.
  {
    Theorem2Report rep;
    if (loaded) rep = verify_theorem2(ex.plant, entries, cfg, 100, 1e-6);
    report(5, loaded && rep.passed && rep.max_residual() <= 1e-6, "decrease conditions",
           fmt::format("max residual {:.3e} over {} intervals at 100 samples", rep.max_residual(), entries.size()));
  }

  // 6. Switching times against the guaranteed bound and the stored certificate.
  {
    bool ok = loaded && !entries.empty();
    double tmin = 0.0, shortest = std::numeric_limits<double>::infinity(), worst_diff = 0.0;
    if (ok) {
      const double ah = 0.48 + 0.34;
      tmin = 0.5 * std::min(0.05 * 0.2 / ah, 0.2 / (ah * max_eig(entries[0].Phat)));
      for (const auto& e : entries) {
        shortest = std::min(shortest, e.T);
        Certificate c;
        c.Z = e.Z;
        c.Phat = e.Phat;
        c.W = e.W;
        c.Y = e.Y;
        c.What = e.What;
        c.Yhat = e.Yhat;
        const double T = switching_time(c, aggregate(ex.plant, e.t), cfg, ex.plant.lipschitz(), cfg.t_max).T;
        worst_diff = std::max(worst_diff, std::abs(T - e.T));
      }
      ok = shortest >= tmin && worst_diff <= 1e-10;
    }
    report(6, ok, "switching times",
           fmt::format("shortest T {:.6e} vs bound {:.6e}, max recompute difference {:.3e}", shortest, tmin,
                       worst_diff));
  }

  // 7. Solver on random problems with known status.
  {
    std::mt19937_64 rng(7);
    int matched = 0;
    double worst_check = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const bool feasible = trial % 2 == 0;
      const auto inst = ncs::testing::random_lmi(rng, feasible);
      const auto sol = solve_feasibility(inst.problem);
      if (sol.status == (feasible ? LmiStatus::kFeasible : LmiStatus::kInfeasible)) ++matched;
      const auto res = check_solution(inst.problem, sol.values);
      for (std::size_t j = 0; j < res.size(); ++j) {
        const double oracle = ncs::testing::oracle_residual(inst.problem, inst.problem.constraints()[j], sol.values);
        worst_check = std::max(worst_check, std::abs(res[j].residual - oracle));
      }
    }
    report(7, matched == 200 && worst_check <= 1e-10, "solver oracle",
           fmt::format("{}/200 statuses match, max residual disagreement {:.3e}", matched, worst_check));
  }

  // 8. Auxiliary-scalar norm encoding against the direct bound.
  {
    const auto tally = ncs::testing::encoding_equivalence(ex.plant, cfg, 100, 11);
    report(8, tally.mismatches == 0 && tally.direct_true > 0 && tally.direct_false > 0, "norm encoding",
           fmt::format("{} comparisons on 100 points ({} bounds held, {} violated), {} mismatches", tally.comparisons,
                       tally.direct_true, tally.direct_false, tally.mismatches));
  }

  fs::remove_all(root);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
