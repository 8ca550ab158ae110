#pragma once

// Per-interval synthesis of the observer-based distributed controller:
// constraint assembly, gain recovery, switching times, and the link
// sparsification strategies.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncs/lmi.hpp"
#include "ncs/model.hpp"

namespace ncs {

class DesignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The full-link problem (or every candidate, for exhaustive search) has no
/// feasible point. Carries the maximized phase-I slack.
class DesignInfeasibleError : public DesignError {
 public:
  DesignInfeasibleError(const std::string& what, double slack) : DesignError(what), slack_(slack) {}
  double slack() const { return slack_; }

 private:
  double slack_;
};

/// A stored certificate is inconsistent with a feasible solve.
class CertificateError : public DesignError {
 public:
  using DesignError::DesignError;
};

struct PreviousCertificate {
  SymMatrix Z;
  SymMatrix Phat;
};

/// Decision matrices of one feasible solve.
struct Certificate {
  SymMatrix Z, Phat;
  BlockMatrix W, Y, What, Yhat;
  double slack = 0.0;
  int iterations = 0;
};

struct DesignIterationInput {
  int k = 0;
  double t = 0.0;
  PlantSnapshot snapshot;
  std::optional<PreviousCertificate> prev;  // present iff k >= 1
  LinkSet alpha;
  /// Optional solver starting point, e.g. the certificate of a neighbouring
  /// solve. Does not change the problem.
  std::optional<Certificate> warm;
};

enum class SparsifyVariant { kLinearSearch, kThreshold, kExhaustive };

const char* to_string(SparsifyVariant v);
/// Parses "linear-search", "threshold" or "exhaustive".
SparsifyVariant parse_variant(const std::string& s);

struct RelaxedLink {
  Link link;
  double value = 0.0;
};

struct SparsifyReport {
  SparsifyVariant variant = SparsifyVariant::kLinearSearch;
  LinkSet alpha_dagger;
  int link_count = 0;
  int solve_count = 0;
  std::vector<RelaxedLink> relaxed_alpha;  // from the first relaxation, if any
};

/// Assembled LMI problem together with the handles of its variables.
struct Theorem3Problem {
  LmiProblem problem;
  VarId Z = -1, Phat = -1, W = -1, What = -1;
  VarId Y = -1, Yhat = -1;  // -1 when no link is active
  LinkSet alpha;
  std::vector<int> n, m, r;
  /// Z and Phat fixed at the previous certificate instead of being variables.
  bool held = false;
  SymMatrix Z_fixed, Phat_fixed;
};

struct Gains {
  BlockMatrix K, L, M, O;
};

struct SwitchingTime {
  double controller_branch = 0.0;
  double observer_branch = 0.0;
  double T = 0.0;
};

SolverOptions solver_options(const DesignConfig& config);

/// With `hold_certificate` (and a previous certificate present) Z and Phat are
/// fixed at their previous values; the box and monotonicity constraints then
/// hold trivially and are left out.
Theorem3Problem assemble_theorem3(const DesignIterationInput& input, const DesignConfig& config,
                                  bool hold_certificate = false);

/// Extracts the decision matrices of a solved problem.
Certificate extract_certificate(const Theorem3Problem& p, const LmiSolution& solution);

/// Solves the problem for the given links, trying the held certificate first
/// when k >= 1. Returns nullopt when infeasible; `slack` receives the phase-I
/// optimum of the last solve either way.
std::optional<Certificate> solve_theorem3(const DesignIterationInput& input, const DesignConfig& config,
                                          double* slack = nullptr);

/// K_i = W_i Z_i^-1, L_ij = Y_ij Z_j^-1, M_i = Phat_i^-1 What_i, O_ij = Phat_i^-1 Yhat_ij.
Gains recover_gains(const Certificate& cert, const DesignConfig& config);

/// F = (A+H)Z + B(W+Y) + beta o Z and Fhat = Phat(A+H) + (What+Yhat)C + beta o Phat.
MatrixXd controller_form(const Certificate& cert, const PlantSnapshot& s, const DesignConfig& config);
MatrixXd observer_form(const Certificate& cert, const PlantSnapshot& s, const DesignConfig& config);

SwitchingTime switching_time(const Certificate& cert, const PlantSnapshot& snapshot, const DesignConfig& config,
                             const LipschitzBounds& lipschitz, double t_max);

/// Guaranteed lower bound on every switching interval of a schedule anchored
/// at Phat_0. May be +inf when all Lipschitz constants vanish.
double tmin_lower_bound(const DesignConfig& config, const LipschitzBounds& lipschitz, const SymMatrix& Phat0,
                        const TimeVaryingNetworkedPlant& plant);

/// Relaxed link weights: minimize sum(alpha) over [0,1] subject to the two
/// stability LMIs with every other matrix fixed at `cert`.
std::vector<RelaxedLink> relax_links(const DesignIterationInput& input, const Certificate& cert,
                                     const DesignConfig& config);

struct SparsifyResult {
  SparsifyReport report;
  Certificate certificate;
};

SparsifyResult sparsify_linear_search(const DesignIterationInput& input, const DesignConfig& config);
SparsifyResult sparsify_threshold(const DesignIterationInput& input, const DesignConfig& config);
/// Smallest feasible link set; at most 12 candidate links. `jobs` > 1 solves
/// candidates of equal size concurrently.
SparsifyResult sparsify_exhaustive(const DesignIterationInput& input, const DesignConfig& config, int jobs = 1);

SparsifyResult sparsify(SparsifyVariant variant, const DesignIterationInput& input, const DesignConfig& config,
                        int jobs = 1);

/// Builds the schedule record for a solved interval.
GainScheduleEntry make_entry(const DesignIterationInput& input, const SparsifyResult& result,
                             const DesignConfig& config, const LipschitzBounds& lipschitz);

struct DesignRun {
  std::vector<GainScheduleEntry> entries;
  std::vector<SparsifyReport> reports;
  bool complete = false;
  std::string diagnostic;
  double tmin_bound = 0.0;
};

/// Iterates t_{k+1} = t_k + T_k from 0 until t_end. An infeasible interval
/// stops the run and leaves the partial schedule in the result.
DesignRun run_design(const TimeVaryingNetworkedPlant& plant, const DesignConfig& config, double t_end,
                     SparsifyVariant variant, int jobs = 1);

struct LinkComparisonRow {
  int k = 0;
  double t = 0.0;
  int heuristic = 0;
  int optimal = 0;
};

/// Re-runs the exhaustive search on every interval of a heuristic schedule,
/// with identical inputs (same t_k and monotonicity anchors).
std::vector<LinkComparisonRow> compare_with_exhaustive(const TimeVaryingNetworkedPlant& plant,
                                                       const DesignConfig& config, const DesignRun& heuristic,
                                                       int jobs = 1);

}  // namespace ncs
