#pragma once

// Linear time-varying networked plant, design configuration, gain schedule
// records, and the coupled inverted-pendulum benchmark.

#include <compare>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ncs/linalg.hpp"

namespace ncs {

/// Raised when a plant definition or an evaluated plant matrix is
/// inconsistent with the declared dimensions.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Waveform { kConstant, kCosine, kSine };

/// Scalar time function a0, a0 + a1*cos(omega*t) or a0 + a1*sin(omega*t).
struct ParametricScalar {
  Waveform kind = Waveform::kConstant;
  double a0 = 0.0;
  double a1 = 0.0;
  double omega = 0.0;

  static ParametricScalar constant(double v) { return {Waveform::kConstant, v, 0.0, 0.0}; }
  static ParametricScalar cosine(double a0, double a1, double omega) { return {Waveform::kCosine, a0, a1, omega}; }
  static ParametricScalar sine(double a0, double a1, double omega) { return {Waveform::kSine, a0, a1, omega}; }

  double value(double t) const;
  double derivative(double t) const;
  bool is_zero() const;
  ParametricScalar scaled(double s) const { return {kind, a0 * s, a1 * s, omega}; }
  bool operator==(const ParametricScalar&) const = default;
};

/// Matrix whose entries are independent ParametricScalar functions.
class ParametricMatrix {
 public:
  ParametricMatrix() = default;
  ParametricMatrix(int rows, int cols);
  static ParametricMatrix constant(const MatrixXd& m);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  const ParametricScalar& at(int i, int j) const { return entries_[i * cols_ + j]; }
  ParametricScalar& at(int i, int j) { return entries_[i * cols_ + j]; }

  MatrixXd value(double t) const;
  MatrixXd derivative(double t) const;
  bool is_zero() const;
  ParametricMatrix scaled(double s) const;

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<ParametricScalar> entries_;
};

/// A matrix-valued function of time with a declared shape. Either backed by a
/// ParametricMatrix (serializable) or by an arbitrary pure callable.
class MatrixFunction {
 public:
  using Callable = std::function<MatrixXd(double)>;

  MatrixFunction() = default;
  MatrixFunction(ParametricMatrix p);  // NOLINT(google-explicit-constructor)
  MatrixFunction(int rows, int cols, Callable f);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  /// Evaluates and checks the shape; throws ModelError on mismatch.
  MatrixXd operator()(double t) const;
  const ParametricMatrix* parametric() const { return parametric_ ? &*parametric_ : nullptr; }

 private:
  int rows_ = 0, cols_ = 0;
  std::optional<ParametricMatrix> parametric_;
  Callable fn_;
};

struct SubsystemDims {
  int n = 0;  // states
  int m = 0;  // inputs
  int r = 0;  // outputs
};

/// Directed coupling i <- j (subsystem i's dynamics read x_j). 0-based.
struct Link {
  int i = 0;
  int j = 0;
  auto operator<=>(const Link&) const = default;
};

using LinkSet = std::vector<Link>;  // sorted lexicographically, no duplicates

struct Subsystem {
  SubsystemDims dims;
  MatrixFunction A, B, C;
};

struct Coupling {
  Link link;
  MatrixFunction H;
};

/// Bounds on ||dA/dt||, ||dB/dt||, ||dC/dt||, ||dH/dt|| of the aggregated
/// matrices.
struct LipschitzBounds {
  double a = 0.0, b = 0.0, c = 0.0, h = 0.0;
};

class TimeVaryingNetworkedPlant {
 public:
  TimeVaryingNetworkedPlant() = default;
  /// Validates dimensions, rejects self-loops and duplicate couplings, and
  /// sorts couplings lexicographically by (i, j).
  TimeVaryingNetworkedPlant(std::vector<Subsystem> subsystems, std::vector<Coupling> couplings,
                            LipschitzBounds lipschitz);

  int size() const { return static_cast<int>(subsystems_.size()); }
  const SubsystemDims& dims(int i) const { return subsystems_.at(i).dims; }
  const std::vector<Subsystem>& subsystems() const { return subsystems_; }
  const std::vector<Coupling>& couplings() const { return couplings_; }
  const LipschitzBounds& lipschitz() const { return lipschitz_; }

  /// Plant adjacency: every (i, j) with a coupling H_ij, sorted.
  const LinkSet& adjacency() const { return adjacency_; }
  bool has_link(Link l) const;

  std::vector<int> state_dims() const;
  std::vector<int> input_dims() const;
  std::vector<int> output_dims() const;
  int total_states() const;
  int total_inputs() const;
  int total_outputs() const;

 private:
  std::vector<Subsystem> subsystems_;
  std::vector<Coupling> couplings_;
  LipschitzBounds lipschitz_;
  LinkSet adjacency_;
};

/// Aggregated plant matrices at one instant. A, B, C are block diagonal and
/// H carries only off-diagonal blocks.
struct PlantSnapshot {
  double t = 0.0;
  BlockMatrix A, B, C, H;
  MatrixXd A_dense, B_dense, C_dense, H_dense;
};

PlantSnapshot aggregate(const TimeVaryingNetworkedPlant& plant, double t);

/// Norm bounds, margins and numerical settings for the design.
struct DesignConfig {
  std::vector<double> kappa;    // ||K_i|| bounds
  std::vector<double> mu;       // ||M_i|| bounds
  MatrixXd iota;                // ||L_ij|| bounds (N x N, diagonal unused)
  MatrixXd omega;               // ||O_ij|| bounds (N x N, diagonal unused)
  std::vector<double> beta;     // decay rates
  std::vector<double> epsilon;  // Lyapunov lower bounds
  double gamma = 0.2;
  double solver_tol = 1e-7;
  int max_solver_iters = 400;
  double t_max = 2.0;     // cap on T_k when the interval bound does not bind
  double ode_step = 0.0;  // 0 selects min_k T_k / 20

  /// Throws InvalidInputError if a field is missing, non-positive or out of
  /// range for a plant with `n` subsystems.
  void validate(int n) const;

  double min_beta() const;
  double min_epsilon() const;
};

/// Gains and certificate for one hold interval [t_k, t_k + T_k).
struct GainScheduleEntry {
  int k = 0;
  double t = 0.0;  // t_k
  double T = 0.0;  // T_k
  LinkSet alpha;   // active control-network links

  BlockMatrix K, L, M, O;           // recovered gains
  SymMatrix Z, Phat;                // block-diagonal certificates
  BlockMatrix W, Y, What, Yhat;     // change-of-variables unknowns
  double slack = 0.0;               // phase-I margin of the accepted solve
  int solve_count = 0;

  int link_count() const { return static_cast<int>(alpha.size()); }
  bool has_link(Link l) const;
  /// Z_k^{-1}.
  MatrixXd P() const;
};

struct ClosedLoopMatrices {
  MatrixXd state;     // A + H + B(K + L)
  MatrixXd coupling;  // B(K + L)
  MatrixXd error;     // A + H + (M + O)C
};

ClosedLoopMatrices closed_loop_matrices(const PlantSnapshot& snapshot, const GainScheduleEntry& entry);

struct LipschitzCheck {
  double max_dA = 0.0, max_dB = 0.0, max_dC = 0.0, max_dH = 0.0;  // sampled derivative norms
  double max_ratio_A = 0.0, max_ratio_B = 0.0, max_ratio_C = 0.0, max_ratio_H = 0.0;  // ||X(t)-X(t')||/|t-t'|
  bool within(const LipschitzBounds& b, double slack = 1e-6) const;
};

/// Samples derivative norms (central differences) at `samples` random times in
/// [t0, t1] and difference quotients on as many random pairs.
LipschitzCheck sample_lipschitz(const TimeVaryingNetworkedPlant& plant, double t0, double t1, int samples,
                                unsigned seed);

struct PendulumExample {
  TimeVaryingNetworkedPlant plant;
  DesignConfig config;
};

/// Three inverted pendulums on carts coupled by springs and dampers,
/// linearized about the upright equilibrium.
PendulumExample build_pendulum_example();

}  // namespace ncs
