#pragma once

// Random small LMI problems with known feasibility status, and an
// independent evaluator for constraint matrices.

#include <Eigen/Eigenvalues>
#include <random>
#include <vector>

#include "ncs/lmi.hpp"

namespace ncs::testing {

struct RandomLmi {
  LmiProblem problem;
  bool feasible = false;
  Assignment witness;  // strictly feasible point, when feasible
};

inline MatrixXd gaussian(std::mt19937_64& rng, int r, int c, double scale = 1.0) {
  std::normal_distribution<double> N(0.0, scale);
  MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = N(rng);
  }
  return m;
}

/// Expands block weights to an entrywise mask for a variable.
inline MatrixXd expand_weights(const VarSpec& v, const MatrixXd& w) {
  MatrixXd out(v.rows(), v.cols());
  int ro = 0;
  for (size_t i = 0; i < v.row_dims.size(); ++i) {
    int co = 0;
    const auto& cols = v.kind == VarKind::kSymmetricBlockDiagonal ? v.row_dims : v.col_dims;
    for (size_t j = 0; j < cols.size(); ++j) {
      out.block(ro, co, v.row_dims[i], cols[j]).setConstant(w(i, j));
      co += cols[j];
    }
    ro += v.row_dims[i];
  }
  return out;
}

/// constant + sum of terms, evaluated directly with dense products.
inline MatrixXd evaluate_constraint(const LmiProblem& p, const AffineConstraint& c, const Assignment& a) {
  MatrixXd G = c.constant.matrix();
  for (const auto& t : c.terms) {
    if (t.kind == Term::Kind::kScaled) {
      G += a[t.var](0, 0) * t.coef;
      continue;
    }
    MatrixXd V = a[t.var];
    if (t.weights.size() > 0) V = V.cwiseProduct(expand_weights(p.variable(t.var), t.weights));
    const MatrixXd prod = t.left * V * t.right;
    G += prod;
    if (t.add_transpose) G += prod.transpose();
  }
  return G;
}

/// Signed extreme eigenvalue via Eigen's own symmetric solver.
inline double oracle_residual(const LmiProblem& p, const AffineConstraint& c, const Assignment& a) {
  const MatrixXd G = evaluate_constraint(p, c, a);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (G + G.transpose()), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return c.sense == Sense::kNegativeSemidefinite ? ev(ev.size() - 1) : -ev(0);
}

inline Assignment random_assignment(const LmiProblem& p, std::mt19937_64& rng, double scale = 1.0) {
  Assignment a;
  for (const auto& v : p.variables()) {
    MatrixXd m = gaussian(rng, v.rows(), v.cols(), scale);
    if (v.kind == VarKind::kSymmetricBlockDiagonal) {
      m = 0.5 * (m + m.transpose()).eval();
      m = m.cwiseProduct(expand_weights(v, MatrixXd::Identity(v.row_dims.size(), v.row_dims.size())));
    } else if (v.kind == VarKind::kRectangularBlock) {
      MatrixXd mask(v.row_dims.size(), v.col_dims.size());
      for (size_t i = 0; i < v.row_dims.size(); ++i) {
        for (size_t j = 0; j < v.col_dims.size(); ++j) mask(i, j) = v.block_allowed(i, j) ? 1.0 : 0.0;
      }
      m = m.cwiseProduct(expand_weights(v, mask));
    }
    a.push_back(m);
  }
  return a;
}

/// Up to three constraints of order 1..6 over a symmetric block variable, a
/// rectangular block variable and one or two scalars. Feasible instances are
/// built around a random point with margin in [0.05, 1]; infeasible ones
/// carry a rank-one certificate v v^T annihilating every term.
inline RandomLmi random_lmi(std::mt19937_64& rng, bool feasible) {
  std::uniform_int_distribution<int> dim(1, 3), order(1, 6), ncons(1, 3), nscal(1, 2), coin(0, 1);
  std::uniform_real_distribution<double> U(0.05, 1.0);
  RandomLmi out;
  out.feasible = feasible;
  LmiProblem& p = out.problem;

  std::vector<int> sdims{dim(rng)};
  if (coin(rng)) sdims.push_back(dim(rng));
  const VarId X = p.add_variable(VarSpec::symmetric("X", sdims));
  const std::vector<int> rrows{dim(rng), dim(rng)}, rcols{dim(rng), dim(rng)};
  const VarId R = p.add_variable(VarSpec::rectangular("R", rrows, rcols, {{true, false}, {coin(rng) == 1, true}}));
  std::vector<VarId> S;
  const int ns = nscal(rng);
  for (int i = 0; i < ns; ++i) S.push_back(p.add_variable(VarSpec::scalar("s" + std::to_string(i))));

  const Assignment point = random_assignment(p, rng);
  const int nc = ncons(rng);
  std::uniform_int_distribution<int> pick(0, nc - 1);
  const int certified = feasible ? -1 : pick(rng);

  for (int j = 0; j < nc; ++j) {
    AffineConstraint c;
    c.id = "c" + std::to_string(j);
    c.sense = coin(rng) ? Sense::kNegativeSemidefinite : Sense::kPositiveSemidefinite;
    const int q = order(rng);
    const bool cert = j == certified;
    VectorXd v = gaussian(rng, q, 1).normalized();
    const MatrixXd vvT = v * v.transpose();
    // Right factors with R v = 0 make v^T (L V R + R^T V^T L^T) v vanish.
    auto right = [&](int cols) {
      MatrixXd r = gaussian(rng, cols, q);
      if (cert) r -= (r * v) * v.transpose();
      return r;
    };
    const int nx = p.variable(X).rows();
    if (coin(rng)) {
      c.terms.push_back(Term::product(X, gaussian(rng, q, nx), right(nx), true));
    } else {
      const MatrixXd w = gaussian(rng, sdims.size(), sdims.size());
      c.terms.push_back(Term::weighted(X, gaussian(rng, q, nx), w, right(nx), true));
    }
    if (coin(rng) || cert) {
      c.terms.push_back(Term::product(R, gaussian(rng, q, p.variable(R).rows()), right(p.variable(R).cols()), true));
    }
    for (VarId s : S) {
      MatrixXd coef = gaussian(rng, q, q);
      coef = 0.5 * (coef + coef.transpose()).eval();
      if (cert) coef -= v.dot(coef * v) * vvT;
      c.terms.push_back(Term::scaled(s, coef));
    }

    c.constant = SymMatrix(q);
    const MatrixXd at_point = evaluate_constraint(p, c, point);
    const double sign = c.sense == Sense::kNegativeSemidefinite ? 1.0 : -1.0;
    MatrixXd constant;
    if (cert) {
      MatrixXd g = gaussian(rng, q, q);
      g = 0.5 * (g + g.transpose()).eval();
      g -= v.dot(g * v) * vvT;
      constant = g + sign * U(rng) * vvT;
    } else if (feasible) {
      constant = -at_point - sign * U(rng) * MatrixXd::Identity(q, q);
    } else {
      MatrixXd g = gaussian(rng, q, q);
      constant = 0.5 * (g + g.transpose());
    }
    c.constant = SymMatrix::symmetrized(constant);
    p.add_constraint(std::move(c));
  }
  if (feasible) out.witness = point;
  return out;
}

}  // namespace ncs::testing
