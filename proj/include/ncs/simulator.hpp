#pragma once

// Closed-loop simulation of a gain schedule, Lyapunov monitoring along the
// trajectory, and sampled re-verification of the decrease conditions.

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncs/model.hpp"

namespace ncs {

class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// ||x|| or ||e|| exceeded the divergence threshold.
class DivergenceError : public SimulationError {
 public:
  DivergenceError(const std::string& what, double t) : SimulationError(what), t_(t) {}
  double time() const { return t_; }

 private:
  double t_;
};

inline constexpr double kDivergenceThreshold = 1e12;

/// One row per grid point. Every switch instant t_k (k >= 1) appears twice:
/// first as the left limit, evaluated with the outgoing certificate, then as
/// the switch row with the incoming one.
///
/// `xu` is the state of the unforced loop dx/dt = [A + H + B(K + L)] x started
/// from the same x0, i.e. the plant with exact state knowledge.
struct SimulationTrace {
  std::vector<double> times;
  std::vector<int> interval;  // schedule index active on the row
  std::vector<VectorXd> x, e, xu;
  std::vector<double> V_state, V_err, V_unforced;
  std::vector<char> is_switch;
  std::vector<std::size_t> switch_markers;  // rows where k increments

  std::size_t size() const { return times.size(); }
  VectorXd xhat(std::size_t row) const { return x[row] + e[row]; }
};

/// Largest admissible integration step for a schedule: min_k T_k / 20.
double default_ode_step(const std::vector<GainScheduleEntry>& schedule);

/// Fixed-step RK4 over the whole schedule. Steps are shrunk per interval so
/// that every t_k is a grid point. `ode_step` <= 0 selects the default.
SimulationTrace simulate(const TimeVaryingNetworkedPlant& plant, const std::vector<GainScheduleEntry>& schedule,
                         const VectorXd& x0, const VectorXd& e0, double ode_step = 0.0);

struct MonitorViolation {
  std::string check;  // {interval,switch}-{state,unforced,error}
  int k = 0;
  double t = 0.0;
  double margin = 0.0;  // amount by which the bound is exceeded
};

struct LyapunovReport {
  bool passed = true;
  double beta = 0.0;
  double worst_interval_margin = 0.0;  // max of V(t)/bound - 1 over the checked functions
  double worst_switch_increase = 0.0;  // max of V_{k+1} - V_k at switches
  /// Same ratio for V_state along the forced state. Informational: the
  /// estimation error drives x, so this bound is not implied by the design.
  double forced_interval_margin = 0.0;
  std::vector<MonitorViolation> violations;
};

/// Interval bound V(t) <= V(t_k) exp(-2 beta (t - t_k)) (1 + 1e-6) for
/// V_unforced and V_err; nonincrease within 1e-8 at switches for V_state,
/// V_unforced and V_err.
LyapunovReport monitor_lyapunov(const SimulationTrace& trace, const std::vector<GainScheduleEntry>& schedule,
                                double beta);

struct Theorem2Violation {
  int k = 0;
  double t = 0.0;
  std::string id;  // 7a ... 7f
  double residual = 0.0;
};

struct Theorem2Report {
  bool passed = true;
  double tolerance = 1e-6;
  int samples_per_interval = 0;
  double max_residual_7a = -std::numeric_limits<double>::infinity();
  double max_residual_7b = -std::numeric_limits<double>::infinity();
  double max_residual_7c = -std::numeric_limits<double>::infinity();
  double max_residual_7d = -std::numeric_limits<double>::infinity();
  double max_residual_7e = -std::numeric_limits<double>::infinity();
  double max_residual_7f = -std::numeric_limits<double>::infinity();
  std::vector<Theorem2Violation> violations;

  double max_residual() const;
};

/// Re-evaluates the decrease conditions with P_k = Z_k^-1, Phat_k and the
/// recovered gains at `samples` uniform times on each closed interval
/// [t_k, t_k + T_k], and the positivity and monotonicity conditions once per
/// interval. Residuals are signed extreme eigenvalues (<= 0 holds).
Theorem2Report verify_theorem2(const TimeVaryingNetworkedPlant& plant, const std::vector<GainScheduleEntry>& schedule,
                               const DesignConfig& config, int samples = 100, double tolerance = 1e-6);

}  // namespace ncs
