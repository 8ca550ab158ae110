#pragma once

// Block-structured linear matrix inequalities and a log-det barrier
// interior-point solver for their feasibility and linear-objective problems.

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ncs/linalg.hpp"

namespace ncs {

enum class VarKind { kSymmetricBlockDiagonal, kRectangularBlock, kScalar };

/// Matrix unknown. Symmetric block-diagonal variables have square blocks
/// given by `row_dims`; rectangular variables carry a block sparsity mask
/// (absent blocks are structurally zero). Scalars are 1x1.
struct VarSpec {
  std::string name;
  VarKind kind = VarKind::kScalar;
  std::vector<int> row_dims;
  std::vector<int> col_dims;
  std::vector<std::vector<bool>> mask;  // [block row][block col], rectangular only

  static VarSpec symmetric(std::string name, std::vector<int> dims);
  static VarSpec rectangular(std::string name, std::vector<int> row_dims, std::vector<int> col_dims,
                             std::vector<std::vector<bool>> mask);
  static VarSpec scalar(std::string name);

  int rows() const;
  int cols() const;
  /// Number of free real parameters.
  int scalar_count() const;
  bool block_allowed(int i, int j) const;
};

using VarId = int;

enum class Sense { kNegativeSemidefinite, kPositiveSemidefinite };

/// One linear contribution to a constraint matrix.
///  kProduct: left * (weights o V) * right, plus its transpose if `add_transpose`.
///            `weights` (optional) scales block (i, j) of V by weights(i, j).
///  kScaled:  v * coef for a scalar variable v and a symmetric `coef`.
struct Term {
  enum class Kind { kProduct, kScaled };
  Kind kind = Kind::kProduct;
  VarId var = -1;
  MatrixXd left, right;
  MatrixXd weights;
  bool add_transpose = false;
  MatrixXd coef;

  static Term product(VarId var, MatrixXd left, MatrixXd right, bool add_transpose = false);
  static Term weighted(VarId var, MatrixXd left, MatrixXd weights, MatrixXd right, bool add_transpose = false);
  static Term scaled(VarId var, MatrixXd coef);
};

/// constant + sum(terms) {<=, >=} 0 in the PSD order.
struct AffineConstraint {
  std::string id;
  Sense sense = Sense::kNegativeSemidefinite;
  SymMatrix constant;
  std::vector<Term> terms;
  /// Whether the phase-I slack enters this constraint. Unslacked constraints
  /// must be kept strictly satisfied throughout the solve.
  bool slacked = true;

  int order() const { return constant.order(); }
};

/// One dense matrix per variable, indexed by VarId.
using Assignment = std::vector<MatrixXd>;

/// Linear objective sum_v <coef_v, V_v> (trace inner product).
using LinearObjective = std::vector<std::pair<VarId, MatrixXd>>;

class LmiProblem {
 public:
  /// Compiled affine map of one constraint over the global parameter vector,
  /// normalized so that the constraint reads G0 + sum_k x_k G_k <= 0.
  struct Compiled {
    MatrixXd G0;
    std::vector<int> index;
    std::vector<MatrixXd> G;
  };

  VarId add_variable(VarSpec spec);
  /// Validates shapes and that the constraint matrix is symmetric for every
  /// assignment; throws InvalidInputError otherwise.
  void add_constraint(AffineConstraint c);
  /// Sets the starting value of a variable (default zero). Structurally zero
  /// blocks and asymmetric parts are discarded.
  void set_start(VarId var, const MatrixXd& value);

  int variable_count() const { return static_cast<int>(vars_.size()); }
  const VarSpec& variable(VarId id) const { return vars_.at(id); }
  const std::vector<VarSpec>& variables() const { return vars_; }
  const std::vector<AffineConstraint>& constraints() const { return constraints_; }
  std::optional<VarId> find_variable(const std::string& name) const;
  int scalar_count() const { return total_scalars_; }
  int scalar_offset(VarId id) const { return offsets_.at(id); }

  Assignment zero_assignment() const;
  const Assignment& start() const { return start_; }

  /// Parameter vector <-> assignment.
  VectorXd pack(const Assignment& a) const;
  Assignment unpack(const VectorXd& x) const;

  const std::vector<Compiled>& compiled() const { return compiled_; }

  /// Debug dump of variables and constraint terms.
  std::string to_json() const;

 private:
  Compiled compile(const AffineConstraint& c) const;
  /// Calls fn(param, row, col, value) for every nonzero entry of every basis
  /// matrix of `var`; params are local to the variable.
  void for_each_basis(VarId var, const std::function<void(int, int, int, double)>& fn) const;

  std::vector<VarSpec> vars_;
  std::vector<int> offsets_;
  int total_scalars_ = 0;
  std::vector<AffineConstraint> constraints_;
  std::vector<Compiled> compiled_;
  Assignment start_;
};

enum class LmiStatus { kFeasible, kInfeasible, kMaxIters };

const char* to_string(LmiStatus s);

struct ConstraintResidual {
  std::string id;
  double residual = 0.0;  // signed extreme eigenvalue; <= 0 means satisfied
};

struct LmiSolution {
  LmiStatus status = LmiStatus::kMaxIters;
  Assignment values;
  /// Maximized phase-I slack t*. Negative means no point satisfies every
  /// slacked constraint with margin 0.
  double slack = 0.0;
  double max_residual = 0.0;
  std::vector<ConstraintResidual> residuals;
  int iterations = 0;
  double objective = 0.0;  // minimize() only

  bool feasible() const { return status == LmiStatus::kFeasible; }
};

struct SolverOptions {
  double tol = 1e-7;
  int max_iters = 400;          // total Newton steps
  double ball_radius = 1e4;     // bound on the parameter norm of each independent block of variables
  double barrier_growth = 20.0;
  double gap_rel = 1e-2;        // phase I stops once m/eta <= gap_abs + gap_rel*|t|
  double gap_abs = -1.0;        // negative selects tol / 10
  double objective_gap = 1e-9;  // minimize(): absolute duality-gap target
};

/// Phase-I slack maximization from the problem's start point.
LmiSolution solve_feasibility(const LmiProblem& problem, const SolverOptions& options = {});

/// Minimizes a linear objective over the feasible set (phase I, then a
/// barrier path from the phase-I point).
LmiSolution minimize(const LmiProblem& problem, const LinearObjective& objective, const SolverOptions& options = {});

/// Assembles a constraint matrix directly from its terms.
SymMatrix assemble(const LmiProblem& problem, const AffineConstraint& c, const Assignment& a);

/// Signed residual per constraint: lambda_max for "<= 0", -lambda_min for ">= 0".
std::vector<ConstraintResidual> check_solution(const LmiProblem& problem, const Assignment& a);

}  // namespace ncs
