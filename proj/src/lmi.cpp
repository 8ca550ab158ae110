#include "ncs/lmi.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>
#include <spdlog/spdlog.h>

namespace ncs {

namespace {

std::vector<int> offsets_of(const std::vector<int>& dims) {
  std::vector<int> off(dims.size() + 1, 0);
  for (size_t i = 0; i < dims.size(); ++i) off[i + 1] = off[i] + dims[i];
  return off;
}

int block_of(const std::vector<int>& off, int index) {
  return static_cast<int>(std::upper_bound(off.begin(), off.end(), index) - off.begin()) - 1;
}

void require_dims(const std::vector<int>& dims, const std::string& what) {
  if (dims.empty()) throw InvalidInputError(what + ": no blocks");
  for (int d : dims) {
    if (d < 1) throw InvalidInputError(what + ": block dimensions must be positive");
  }
}

}  // namespace

VarSpec VarSpec::symmetric(std::string name, std::vector<int> dims) {
  VarSpec v;
  v.name = std::move(name);
  v.kind = VarKind::kSymmetricBlockDiagonal;
  v.row_dims = dims;
  v.col_dims = std::move(dims);
  return v;
}

VarSpec VarSpec::rectangular(std::string name, std::vector<int> row_dims, std::vector<int> col_dims,
                             std::vector<std::vector<bool>> mask) {
  VarSpec v;
  v.name = std::move(name);
  v.kind = VarKind::kRectangularBlock;
  v.row_dims = std::move(row_dims);
  v.col_dims = std::move(col_dims);
  v.mask = std::move(mask);
  return v;
}

VarSpec VarSpec::scalar(std::string name) {
  VarSpec v;
  v.name = std::move(name);
  v.kind = VarKind::kScalar;
  v.row_dims = {1};
  v.col_dims = {1};
  return v;
}

int VarSpec::rows() const { return std::accumulate(row_dims.begin(), row_dims.end(), 0); }
int VarSpec::cols() const { return std::accumulate(col_dims.begin(), col_dims.end(), 0); }

bool VarSpec::block_allowed(int i, int j) const {
  switch (kind) {
    case VarKind::kScalar:
      return true;
    case VarKind::kSymmetricBlockDiagonal:
      return i == j;
    case VarKind::kRectangularBlock:
      return mask.at(i).at(j);
  }
  return false;
}

int VarSpec::scalar_count() const {
  int count = 0;
  switch (kind) {
    case VarKind::kScalar:
      return 1;
    case VarKind::kSymmetricBlockDiagonal:
      for (int d : row_dims) count += d * (d + 1) / 2;
      return count;
    case VarKind::kRectangularBlock:
      for (size_t i = 0; i < row_dims.size(); ++i) {
        for (size_t j = 0; j < col_dims.size(); ++j) {
          if (mask[i][j]) count += row_dims[i] * col_dims[j];
        }
      }
      return count;
  }
  return count;
}

Term Term::product(VarId var, MatrixXd left, MatrixXd right, bool add_transpose) {
  Term t;
  t.kind = Kind::kProduct;
  t.var = var;
  t.left = std::move(left);
  t.right = std::move(right);
  t.add_transpose = add_transpose;
  return t;
}

Term Term::weighted(VarId var, MatrixXd left, MatrixXd weights, MatrixXd right, bool add_transpose) {
  Term t = product(var, std::move(left), std::move(right), add_transpose);
  t.weights = std::move(weights);
  return t;
}

Term Term::scaled(VarId var, MatrixXd coef) {
  Term t;
  t.kind = Kind::kScaled;
  t.var = var;
  t.coef = std::move(coef);
  return t;
}

VarId LmiProblem::add_variable(VarSpec spec) {
  if (spec.name.empty()) throw InvalidInputError("variable name must not be empty");
  if (find_variable(spec.name)) throw InvalidInputError("duplicate variable '" + spec.name + "'");
  require_dims(spec.row_dims, spec.name);
  require_dims(spec.col_dims, spec.name);
  if (spec.kind == VarKind::kSymmetricBlockDiagonal && spec.row_dims != spec.col_dims) {
    throw InvalidInputError(spec.name + ": symmetric variable needs square blocks");
  }
  if (spec.kind == VarKind::kRectangularBlock) {
    if (spec.mask.size() != spec.row_dims.size()) throw InvalidInputError(spec.name + ": mask row count");
    for (const auto& row : spec.mask) {
      if (row.size() != spec.col_dims.size()) throw InvalidInputError(spec.name + ": mask column count");
    }
  }
  if (spec.kind == VarKind::kScalar && (spec.rows() != 1 || spec.cols() != 1)) {
    throw InvalidInputError(spec.name + ": scalar variable must be 1x1");
  }
  const VarId id = static_cast<VarId>(vars_.size());
  offsets_.push_back(total_scalars_);
  total_scalars_ += spec.scalar_count();
  start_.push_back(MatrixXd::Zero(spec.rows(), spec.cols()));
  vars_.push_back(std::move(spec));
  return id;
}

std::optional<VarId> LmiProblem::find_variable(const std::string& name) const {
  for (size_t i = 0; i < vars_.size(); ++i) {
    if (vars_[i].name == name) return static_cast<VarId>(i);
  }
  return std::nullopt;
}

void LmiProblem::for_each_basis(VarId var, const std::function<void(int, int, int, double)>& fn) const {
  const VarSpec& v = vars_.at(var);
  const auto ro = offsets_of(v.row_dims);
  const auto co = offsets_of(v.col_dims);
  int k = 0;
  switch (v.kind) {
    case VarKind::kScalar:
      fn(0, 0, 0, 1.0);
      break;
    case VarKind::kSymmetricBlockDiagonal:
      for (size_t b = 0; b < v.row_dims.size(); ++b) {
        const int o = ro[b];
        for (int a = 0; a < v.row_dims[b]; ++a) {
          for (int c = a; c < v.row_dims[b]; ++c) {
            fn(k, o + a, o + c, 1.0);
            if (a != c) fn(k, o + c, o + a, 1.0);
            ++k;
          }
        }
      }
      break;
    case VarKind::kRectangularBlock:
      for (size_t bi = 0; bi < v.row_dims.size(); ++bi) {
        for (size_t bj = 0; bj < v.col_dims.size(); ++bj) {
          if (!v.mask[bi][bj]) continue;
          for (int a = 0; a < v.row_dims[bi]; ++a) {
            for (int c = 0; c < v.col_dims[bj]; ++c) fn(k++, ro[bi] + a, co[bj] + c, 1.0);
          }
        }
      }
      break;
  }
}

LmiProblem::Compiled LmiProblem::compile(const AffineConstraint& c) const {
  const int p = c.order();
  const double sign = c.sense == Sense::kNegativeSemidefinite ? 1.0 : -1.0;
  Compiled out;
  out.G0 = sign * c.constant.matrix();
  std::map<int, MatrixXd> acc;
  for (const Term& t : c.terms) {
    const VarSpec& v = vars_.at(t.var);
    const int base = offsets_[t.var];
    if (t.kind == Term::Kind::kScaled) {
      auto it = acc.try_emplace(base, MatrixXd::Zero(p, p)).first;
      it->second += sign * t.coef;
      continue;
    }
    const auto ro = offsets_of(v.row_dims);
    const auto co = offsets_of(v.col_dims);
    for_each_basis(t.var, [&](int k, int r, int col, double val) {
      double w = val;
      if (t.weights.size() > 0) w *= t.weights(block_of(ro, r), block_of(co, col));
      if (w == 0.0) return;
      auto it = acc.try_emplace(base + k, MatrixXd::Zero(p, p)).first;
      MatrixXd outer = (sign * w) * t.left.col(r) * t.right.row(col);
      it->second += outer;
      if (t.add_transpose) it->second += outer.transpose();
    });
  }
  for (auto& [k, G] : acc) {
    if (G.isZero(0.0)) continue;
    out.index.push_back(k);
    out.G.push_back(std::move(G));
  }
  return out;
}

void LmiProblem::add_constraint(AffineConstraint c) {
  const int p = c.order();
  const std::string& id = c.id;
  if (p < 1) throw InvalidInputError("constraint '" + id + "': empty constant term");
  require_finite(c.constant.matrix(), "constraint '" + id + "' constant");
  for (const Term& t : c.terms) {
    if (t.var < 0 || t.var >= variable_count()) throw InvalidInputError("constraint '" + id + "': unknown variable");
    const VarSpec& v = vars_[t.var];
    if (t.kind == Term::Kind::kScaled) {
      if (v.kind != VarKind::kScalar) {
        throw InvalidInputError("constraint '" + id + "': scaled term needs a scalar variable");
      }
      if (t.coef.rows() != p || t.coef.cols() != p) {
        throw InvalidInputError("constraint '" + id + "': scaled term coefficient has the wrong shape");
      }
      require_finite(t.coef, "constraint '" + id + "' coefficient");
      continue;
    }
    if (t.left.rows() != p || t.left.cols() != v.rows() || t.right.rows() != v.cols() || t.right.cols() != p) {
      throw InvalidInputError("constraint '" + id + "': term on '" + v.name + "' has inconsistent multipliers");
    }
    if (t.weights.size() > 0 &&
        (t.weights.rows() != static_cast<int>(v.row_dims.size()) ||
         t.weights.cols() != static_cast<int>(v.col_dims.size()))) {
      throw InvalidInputError("constraint '" + id + "': block weights have the wrong shape");
    }
    require_finite(t.left, "constraint '" + id + "' left multiplier");
    require_finite(t.right, "constraint '" + id + "' right multiplier");
  }
  if ((c.constant.matrix() - c.constant.matrix().transpose()).norm() != 0.0) {
    throw InvalidInputError("constraint '" + id + "': constant is not symmetric");
  }
  Compiled comp = compile(c);
  for (const MatrixXd& G : comp.G) {
    const double scale = std::max(1.0, G.norm());
    if ((G - G.transpose()).norm() > 1e-12 * scale) {
      throw InvalidInputError("constraint '" + id + "' is not symmetric for every assignment");
    }
  }
  for (MatrixXd& G : comp.G) G = 0.5 * (G + G.transpose()).eval();
  constraints_.push_back(std::move(c));
  compiled_.push_back(std::move(comp));
}

void LmiProblem::set_start(VarId var, const MatrixXd& value) {
  const VarSpec& v = vars_.at(var);
  if (value.rows() != v.rows() || value.cols() != v.cols()) {
    throw InvalidInputError("start value for '" + v.name + "' has the wrong shape");
  }
  require_finite(value, "start value for '" + v.name + "'");
  Assignment a = start_;
  a[var] = value;
  if (v.kind == VarKind::kSymmetricBlockDiagonal) a[var] = 0.5 * (value + value.transpose());
  // Round trip through the parameterization drops structurally zero entries.
  const Assignment clean = unpack(pack(a));
  start_[var] = clean[var];
}

Assignment LmiProblem::zero_assignment() const {
  Assignment a;
  for (const auto& v : vars_) a.push_back(MatrixXd::Zero(v.rows(), v.cols()));
  return a;
}

VectorXd LmiProblem::pack(const Assignment& a) const {
  if (static_cast<int>(a.size()) != variable_count()) throw InvalidInputError("assignment has the wrong variable count");
  VectorXd x(total_scalars_);
  for (VarId id = 0; id < variable_count(); ++id) {
    const VarSpec& v = vars_[id];
    if (a[id].rows() != v.rows() || a[id].cols() != v.cols()) {
      throw InvalidInputError("assignment for '" + v.name + "' has the wrong shape");
    }
    int last = -1;
    for_each_basis(id, [&](int k, int r, int c, double) {
      if (k == last) return;
      last = k;
      x(offsets_[id] + k) = a[id](r, c);
    });
  }
  return x;
}

Assignment LmiProblem::unpack(const VectorXd& x) const {
  if (x.size() != total_scalars_) throw InvalidInputError("parameter vector has the wrong length");
  Assignment a = zero_assignment();
  for (VarId id = 0; id < variable_count(); ++id) {
    for_each_basis(id, [&](int k, int r, int c, double val) { a[id](r, c) = val * x(offsets_[id] + k); });
  }
  return a;
}

std::string LmiProblem::to_json() const {
  using nlohmann::json;
  auto mat = [](const MatrixXd& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(row);
    }
    return rows;
  };
  static const char* kKinds[] = {"symmetric-block-diagonal", "rectangular-block", "scalar"};
  json doc;
  doc["variables"] = json::array();
  for (const auto& v : vars_) {
    json jv{{"name", v.name}, {"kind", kKinds[static_cast<int>(v.kind)]}, {"rowDims", v.row_dims},
            {"colDims", v.col_dims}};
    if (v.kind == VarKind::kRectangularBlock) jv["mask"] = v.mask;
    doc["variables"].push_back(jv);
  }
  doc["constraints"] = json::array();
  for (const auto& c : constraints_) {
    json jc{{"id", c.id},
            {"sense", c.sense == Sense::kNegativeSemidefinite ? "<=0" : ">=0"},
            {"slacked", c.slacked},
            {"constant", mat(c.constant.matrix())}};
    jc["terms"] = json::array();
    for (const auto& t : c.terms) {
      json jt{{"var", vars_[t.var].name}};
      if (t.kind == Term::Kind::kScaled) {
        jt["coef"] = mat(t.coef);
      } else {
        jt["left"] = mat(t.left);
        jt["right"] = mat(t.right);
        jt["transpose"] = t.add_transpose;
        if (t.weights.size() > 0) jt["weights"] = mat(t.weights);
      }
      jc["terms"].push_back(jt);
    }
    doc["constraints"].push_back(jc);
  }
  return doc.dump(2);
}

const char* to_string(LmiStatus s) {
  switch (s) {
    case LmiStatus::kFeasible:
      return "feasible";
    case LmiStatus::kInfeasible:
      return "infeasible";
    case LmiStatus::kMaxIters:
      return "max-iters";
  }
  return "unknown";
}

SymMatrix assemble(const LmiProblem& problem, const AffineConstraint& c, const Assignment& a) {
  if (static_cast<int>(a.size()) != problem.variable_count()) {
    throw InvalidInputError("assignment has the wrong variable count");
  }
  MatrixXd G = c.constant.matrix();
  for (const Term& t : c.terms) {
    const VarSpec& v = problem.variable(t.var);
    const MatrixXd& V = a[t.var];
    if (V.rows() != v.rows() || V.cols() != v.cols()) {
      throw InvalidInputError("assignment for '" + v.name + "' has the wrong shape");
    }
    if (t.kind == Term::Kind::kScaled) {
      G += V(0, 0) * t.coef;
      continue;
    }
    MatrixXd Vw = V;
    if (t.weights.size() > 0) {
      const auto ro = offsets_of(v.row_dims);
      const auto co = offsets_of(v.col_dims);
      for (size_t i = 0; i < v.row_dims.size(); ++i) {
        for (size_t j = 0; j < v.col_dims.size(); ++j) {
          Vw.block(ro[i], co[j], v.row_dims[i], v.col_dims[j]) *= t.weights(i, j);
        }
      }
    }
    const MatrixXd P = t.left * Vw * t.right;
    G += P;
    if (t.add_transpose) G += P.transpose();
  }
  return SymMatrix::symmetrized(G);
}

std::vector<ConstraintResidual> check_solution(const LmiProblem& problem, const Assignment& a) {
  std::vector<ConstraintResidual> out;
  for (const auto& c : problem.constraints()) {
    const SymMatrix G = assemble(problem, c, a);
    const double r = c.sense == Sense::kNegativeSemidefinite ? max_eig(G) : -min_eig(G);
    out.push_back({c.id, r});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Barrier solver.

namespace {

struct Entry {
  int r, c;
  double v;
};

struct Block {
  MatrixXd G0;
  std::vector<int> idx;  // local parameter indices
  std::vector<MatrixXd> G;
  std::vector<std::vector<Entry>> nz;  // nonzeros of each G, row-sorted
  std::vector<std::vector<int>> rows;  // distinct nonzero rows of each G

  void index_entries() {
    nz.assign(G.size(), {});
    rows.assign(G.size(), {});
    for (size_t k = 0; k < G.size(); ++k) {
      for (int r = 0; r < G[k].rows(); ++r) {
        bool any = false;
        for (int c = 0; c < G[k].cols(); ++c) {
          if (G[k](r, c) == 0.0) continue;
          nz[k].push_back({r, c, G[k](r, c)});
          any = true;
        }
        if (any) rows[k].push_back(r);
      }
    }
  }
};

/// minimize eta*c'y - sum log det(-G_j(y)) - log(R^2 - |y_ball|^2)
struct Barrier {
  int n = 0;
  std::vector<Block> blocks;
  std::vector<int> ball;
  double R2 = 1e8;
  VectorXd c;

  int degree() const {
    int m = ball.empty() ? 0 : 1;
    for (const auto& b : blocks) m += static_cast<int>(b.G0.rows());
    return m;
  }

  MatrixXd slack_matrix(const Block& b, const VectorXd& y) const {
    MatrixXd S = -b.G0;
    for (size_t k = 0; k < b.idx.size(); ++k) S.noalias() -= y(b.idx[k]) * b.G[k];
    return S;
  }

  /// Barrier value without the objective; +inf outside the domain.
  double value(const VectorXd& y) const {
    double f = 0.0;
    for (const auto& b : blocks) {
      Eigen::LLT<MatrixXd> llt(slack_matrix(b, y));
      if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
      const auto& L = llt.matrixLLT();
      for (int i = 0; i < L.rows(); ++i) {
        if (!(L(i, i) > 0.0)) return std::numeric_limits<double>::infinity();
        f -= 2.0 * std::log(L(i, i));
      }
    }
    if (!ball.empty()) {
      double q = R2;
      for (int i : ball) q -= y(i) * y(i);
      if (!(q > 0.0)) return std::numeric_limits<double>::infinity();
      f -= std::log(q);
    }
    return f;
  }

  void derivatives(const VectorXd& y, VectorXd& g, MatrixXd& H) const {
    g = VectorXd::Zero(n);
    H = MatrixXd::Zero(n, n);
    constexpr double kSqrt2 = 1.4142135623730951;
    MatrixXd X, T, Hb;
    for (const auto& b : blocks) {
      const int p = static_cast<int>(b.G0.rows());
      const int nk = static_cast<int>(b.idx.size());
      if (nk == 0) continue;
      Eigen::LLT<MatrixXd> llt(slack_matrix(b, y));
      const MatrixXd Linv = llt.matrixL().solve(MatrixXd::Identity(p, p));
      // Rows of Tm hold the upper triangle of T_k = L^-1 G_k L^-T, with the
      // off-diagonal entries scaled so that Tm^T Tm gives tr(T_a T_b).
      MatrixXd Tm(p * (p + 1) / 2, nk);
      for (int k = 0; k < nk; ++k) {
        // Sparse G_k: X = G_k L^-T, then the upper triangle of L^-1 X.
        X.setZero(p, p);
        for (const Entry& e : b.nz[k]) {
          for (int j = e.c; j < p; ++j) X(e.r, j) += e.v * Linv(j, e.c);
        }
        T.setZero(p, p);
        for (int r : b.rows[k]) {
          for (int j = r; j < p; ++j) {
            const double xv = X(r, j);
            if (xv == 0.0) continue;
            for (int i = r; i <= j; ++i) T(i, j) += Linv(i, r) * xv;
          }
        }
        int row = 0;
        for (int c2 = 0; c2 < p; ++c2) {
          for (int r2 = 0; r2 < c2; ++r2) Tm(row++, k) = kSqrt2 * T(r2, c2);
          Tm(row++, k) = T(c2, c2);
        }
        g(b.idx[k]) += T.trace();
      }
      Hb = MatrixXd::Zero(nk, nk);
      Hb.selfadjointView<Eigen::Lower>().rankUpdate(Tm.transpose());
      for (int a = 0; a < nk; ++a) {
        for (int c2 = 0; c2 <= a; ++c2) {
          const double v = Hb(a, c2);
          H(b.idx[a], b.idx[c2]) += v;
          if (c2 != a) H(b.idx[c2], b.idx[a]) += v;
        }
      }
    }
    if (!ball.empty()) {
      double q = R2;
      for (int i : ball) q -= y(i) * y(i);
      for (int i : ball) {
        g(i) += 2.0 * y(i) / q;
        H(i, i) += 2.0 / q;
        for (int j : ball) H(i, j) += 4.0 * y(i) * y(j) / (q * q);
      }
    }
  }
};

enum class CenterResult { kCentered, kStalled, kBudget };

/// Exact minimization of eta*c'(y + t d) + barrier(y + t d) over t > 0. The
/// barrier restricted to the line is -sum log(1 - t mu_i) over the
/// eigenvalues mu_i of L^-1 D L^-T per block, plus the ball term.
double line_search(const Barrier& bar, double eta, const VectorXd& y, const VectorXd& d, double dec) {
  std::vector<double> mu;
  for (const auto& b : bar.blocks) {
    if (b.idx.empty()) continue;
    const int p = static_cast<int>(b.G0.rows());
    MatrixXd D = MatrixXd::Zero(p, p);
    bool any = false;
    for (size_t k = 0; k < b.idx.size(); ++k) {
      const double dk = d(b.idx[k]);
      if (dk == 0.0) continue;
      D.noalias() += dk * b.G[k];
      any = true;
    }
    if (!any) continue;
    Eigen::LLT<MatrixXd> llt(bar.slack_matrix(b, y));
    if (llt.info() != Eigen::Success) return 0.0;
    const auto L = llt.matrixL();
    const MatrixXd X = L.solve(D);
    const MatrixXd M = L.solve(X.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    for (int i = 0; i < p; ++i) mu.push_back(es.eigenvalues()(i));
  }
  double tmax = 1e12;
  for (double m : mu) {
    if (m > 0.0) tmax = std::min(tmax, 1.0 / m);
  }
  double q0 = bar.R2, a = 0.0, bb = 0.0;
  for (int i : bar.ball) {
    q0 -= y(i) * y(i);
    a += y(i) * d(i);
    bb += d(i) * d(i);
  }
  const bool has_ball = !bar.ball.empty();
  if (has_ball && bb > 0.0) tmax = std::min(tmax, (-a + std::sqrt(a * a + bb * q0)) / bb);
  const double slope = eta * bar.c.dot(d);
  auto derivs = [&](double t, double& f1, double& f2) {
    f1 = slope;
    f2 = 0.0;
    for (double m : mu) {
      const double u = 1.0 - t * m;
      f1 += m / u;
      f2 += (m / u) * (m / u);
    }
    if (has_ball) {
      const double q = q0 - 2.0 * t * a - t * t * bb;
      const double dq = 2.0 * a + 2.0 * t * bb;
      f1 += dq / q;
      f2 += (2.0 * bb * q + dq * dq) / (q * q);
    }
  };
  double lo = 0.0, hi = tmax, t = std::min(1.0, 0.5 * tmax);
  for (int it = 0; it < 100; ++it) {
    double f1, f2;
    derivs(t, f1, f2);
    if (!std::isfinite(f1)) {
      hi = t;
      t = 0.5 * (lo + hi);
      continue;
    }
    if (std::abs(f1) <= 1e-4 * dec) break;
    if (f1 > 0.0) {
      hi = t;
    } else {
      lo = t;
    }
    double tn = t - f1 / f2;
    if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
    if (hi - lo <= 1e-14 * hi) break;
    t = tn;
  }
  return t;
}

/// Newton centering at barrier weight eta with exact line search. Counts
/// steps into `iters`.
CenterResult center(const Barrier& bar, double eta, VectorXd& y, int& iters, int max_iters) {
  VectorXd g;
  MatrixXd H;
  for (int inner = 0; inner < 100; ++inner) {
    if (iters >= max_iters) return CenterResult::kBudget;
    bar.derivatives(y, g, H);
    g += eta * bar.c;
    if (inner == 0 && !bar.ball.empty()) {
      // Radial search first: homogeneous constraint families make the
      // barrier nearly logarithmic in the overall scale, where Newton alone
      // only doubles the scale per step.
      VectorXd dr = VectorXd::Zero(bar.n);
      for (int i : bar.ball) dr(i) = y(i);
      const double slope = g.dot(dr);
      if (slope < 0.0) {
        const double t = line_search(bar, eta, y, dr, -slope);
        VectorXd trial = y + t * dr;
        if (t > 0.0 && std::isfinite(bar.value(trial))) {
          y = std::move(trial);
          bar.derivatives(y, g, H);
          g += eta * bar.c;
        }
      }
    }
    VectorXd d;
    Eigen::LLT<MatrixXd> llt(H);
    if (llt.info() == Eigen::Success) {
      d = -llt.solve(g);
    } else {
      const double reg = 1e-12 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff());
      d = -(H + reg * MatrixXd::Identity(bar.n, bar.n)).ldlt().solve(g);
    }
    const double dec = -g.dot(d);
    ++iters;
    if (!std::isfinite(dec)) return CenterResult::kStalled;
    if (dec * 0.5 <= 1e-6) return CenterResult::kCentered;
    const double t = line_search(bar, eta, y, d, dec);
    VectorXd trial = y + t * d;
    if (!(t > 0.0) || !std::isfinite(bar.value(trial))) return CenterResult::kStalled;
    y = std::move(trial);
  }
  return CenterResult::kStalled;
}

/// Barrier weight whose central-path optimality residual at y is smallest
/// in the local Hessian norm.
double initial_weight(const Barrier& bar, const VectorXd& y) {
  VectorXd g;
  MatrixXd H;
  bar.derivatives(y, g, H);
  Eigen::LDLT<MatrixXd> ldlt(H + 1e-12 * std::max(1.0, H.diagonal().maxCoeff()) * MatrixXd::Identity(bar.n, bar.n));
  const VectorXd Hc = ldlt.solve(bar.c);
  const double den = bar.c.dot(Hc);
  const double eta = -g.dot(Hc) / den;
  if (std::isfinite(eta) && eta > 0.0) return eta;
  return 1.0;
}

struct Component {
  std::vector<int> params;       // global parameter indices
  std::vector<int> constraints;  // indices into problem.compiled()
};

std::vector<Component> decompose(const LmiProblem& problem, std::vector<int>& constant_only) {
  const int n = problem.scalar_count();
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  const auto& comp = problem.compiled();
  for (const auto& c : comp) {
    for (size_t k = 1; k < c.index.size(); ++k) {
      const int a = find(c.index[0]), b = find(c.index[k]);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::map<int, Component> groups;
  for (size_t j = 0; j < comp.size(); ++j) {
    if (comp[j].index.empty()) {
      constant_only.push_back(static_cast<int>(j));
      continue;
    }
    groups[find(comp[j].index[0])].constraints.push_back(static_cast<int>(j));
  }
  for (int i = 0; i < n; ++i) {
    auto it = groups.find(find(i));
    if (it != groups.end()) it->second.params.push_back(i);
  }
  std::vector<Component> out;
  for (auto& [root, g] : groups) out.push_back(std::move(g));
  return out;
}

double max_eig_dense(const MatrixXd& G) { return max_eig(SymMatrix::symmetrized(G)); }

struct ComponentResult {
  LmiStatus status = LmiStatus::kMaxIters;
  double slack = 0.0;
  int iterations = 0;
};

/// Builds the local barrier over the component's constraints. When
/// `with_slack` is set, the last local variable is the phase-I slack t,
/// entering constraint j as weight[j]*t*I.
Barrier local_barrier(const LmiProblem& problem, const Component& comp, const std::vector<int>& local_of,
                      const std::vector<double>& weight, bool with_slack, double shift, double radius) {
  Barrier bar;
  const int nx = static_cast<int>(comp.params.size());
  bar.n = nx + (with_slack ? 1 : 0);
  for (size_t jj = 0; jj < comp.constraints.size(); ++jj) {
    if (weight[jj] < 0.0) continue;  // excluded
    const auto& c = problem.compiled()[comp.constraints[jj]];
    const int p = static_cast<int>(c.G0.rows());
    Block b;
    b.G0 = c.G0;
    if (!with_slack && weight[jj] > 0.0) b.G0 += shift * MatrixXd::Identity(p, p);
    for (size_t k = 0; k < c.index.size(); ++k) {
      b.idx.push_back(local_of[c.index[k]]);
      b.G.push_back(c.G[k]);
    }
    if (with_slack && weight[jj] > 0.0) {
      b.idx.push_back(nx);
      b.G.push_back(weight[jj] * MatrixXd::Identity(p, p));
    }
    b.index_entries();
    bar.blocks.push_back(std::move(b));
  }
  bar.ball.resize(nx);
  std::iota(bar.ball.begin(), bar.ball.end(), 0);
  bar.R2 = radius * radius;
  bar.c = VectorXd::Zero(bar.n);
  return bar;
}

/// Maximizes t over the constraints with weight >= 0 (weight 1: slacked,
/// weight 0: must stay strict). With `stop_positive` it returns as soon as
/// t > 0, and it returns feasible once t reaches `stop_at`. x is the local parameter vector, updated in place.
ComponentResult phase_one(const LmiProblem& problem, const Component& comp, const std::vector<int>& local_of,
                          const std::vector<double>& weight, VectorXd& x, const SolverOptions& opt,
                          bool stop_positive, double stop_at = std::numeric_limits<double>::infinity()) {
  ComponentResult res;
  const int nx = static_cast<int>(x.size());
  Barrier bar = local_barrier(problem, comp, local_of, weight, true, 0.0, opt.ball_radius);
  double worst = -std::numeric_limits<double>::infinity();
  for (size_t jj = 0; jj < comp.constraints.size(); ++jj) {
    if (weight[jj] <= 0.0) continue;
    const auto& c = problem.compiled()[comp.constraints[jj]];
    MatrixXd G = c.G0;
    for (size_t k = 0; k < c.index.size(); ++k) G += x(local_of[c.index[k]]) * c.G[k];
    worst = std::max(worst, max_eig_dense(G));
  }
  VectorXd y(bar.n);
  y.head(nx) = x;
  y(nx) = -worst - std::max(1.0, 0.1 * std::abs(worst));
  if (!std::isfinite(bar.value(y))) {
    res.status = LmiStatus::kInfeasible;
    res.slack = -std::numeric_limits<double>::infinity();
    return res;
  }
  // Lower bound on t keeps the early, weakly weighted centerings from
  // trading the slack for distance to the constraints.
  {
    Block lb;
    lb.G0 = MatrixXd::Constant(1, 1, y(nx) - std::max(1.0, std::abs(y(nx))));
    lb.idx = {nx};
    lb.G = {MatrixXd::Constant(1, 1, -1.0)};
    lb.index_entries();
    bar.blocks.push_back(std::move(lb));
  }
  bar.c(nx) = -1.0;
  const double m = bar.degree();
  const double gap_abs = opt.gap_abs > 0.0 ? opt.gap_abs : opt.tol / 10.0;
  double eta = initial_weight(bar, y);
  while (true) {
    const CenterResult cr = center(bar, eta, y, res.iterations, opt.max_iters);
    const double t = y(nx);
    const double gap = m / eta;
    if ((stop_positive && t > 0.0) || (t >= stop_at && t >= opt.tol)) {
      res.status = LmiStatus::kFeasible;
      break;
    }
    if (cr == CenterResult::kBudget) {
      res.status = t >= -opt.tol ? LmiStatus::kFeasible : LmiStatus::kMaxIters;
      break;
    }
    if (cr == CenterResult::kCentered && t + gap < -opt.tol) {
      res.status = LmiStatus::kInfeasible;
      break;
    }
    if (gap <= gap_abs + opt.gap_rel * std::abs(t) || cr == CenterResult::kStalled) {
      if (cr == CenterResult::kStalled) spdlog::debug("lmi: centering stalled at t = {:.4e}", t);
      if (stop_positive) {
        res.status = LmiStatus::kInfeasible;
      } else {
        res.status = t >= -opt.tol ? LmiStatus::kFeasible : LmiStatus::kInfeasible;
      }
      break;
    }
    eta *= opt.barrier_growth;
  }
  x = y.head(nx);
  res.slack = y(nx);
  return res;
}

/// Solves one connected component for feasibility, updating the local x.
ComponentResult solve_component(const LmiProblem& problem, const Component& comp, const std::vector<int>& local_of,
                                VectorXd& x, const SolverOptions& opt, double stop_at) {
  const auto& cons = problem.constraints();
  const size_t nc = comp.constraints.size();
  std::vector<double> weight(nc);
  bool any_slacked = false;
  bool strict_ok = true;
  for (size_t jj = 0; jj < nc; ++jj) {
    const int j = comp.constraints[jj];
    weight[jj] = cons[j].slacked ? 1.0 : 0.0;
    any_slacked |= cons[j].slacked;
    if (!cons[j].slacked) {
      const auto& c = problem.compiled()[j];
      MatrixXd G = c.G0;
      for (size_t k = 0; k < c.index.size(); ++k) G += x(local_of[c.index[k]]) * c.G[k];
      if (Eigen::LLT<MatrixXd>(-G).info() != Eigen::Success) strict_ok = false;
    }
  }
  int iters = 0;
  if (!strict_ok) {
    // Find a point strictly inside the unslacked constraints first.
    std::vector<double> w(nc);
    for (size_t jj = 0; jj < nc; ++jj) w[jj] = cons[comp.constraints[jj]].slacked ? -1.0 : 1.0;
    ComponentResult pre = phase_one(problem, comp, local_of, w, x, opt, true);
    iters += pre.iterations;
    if (pre.status != LmiStatus::kFeasible || !(pre.slack > 0.0)) {
      pre.status = pre.status == LmiStatus::kMaxIters ? LmiStatus::kMaxIters : LmiStatus::kInfeasible;
      pre.iterations = iters;
      return pre;
    }
  }
  if (!any_slacked) {
    ComponentResult r;
    r.status = LmiStatus::kFeasible;
    r.slack = std::numeric_limits<double>::infinity();
    r.iterations = iters;
    return r;
  }
  SolverOptions rest = opt;
  rest.max_iters = std::max(1, opt.max_iters - iters);
  ComponentResult r = phase_one(problem, comp, local_of, weight, x, rest, false, stop_at);
  r.iterations += iters;
  return r;
}

struct Prepared {
  std::vector<Component> comps;
  std::vector<int> constant_only;
  std::vector<int> local_of;
};

Prepared prepare(const LmiProblem& problem) {
  Prepared p;
  p.comps = decompose(problem, p.constant_only);
  p.local_of.assign(problem.scalar_count(), -1);
  for (const auto& c : p.comps) {
    for (size_t k = 0; k < c.params.size(); ++k) p.local_of[c.params[k]] = static_cast<int>(k);
  }
  return p;
}

void finalize(const LmiProblem& problem, const VectorXd& x, const SolverOptions& opt, LmiSolution& sol) {
  sol.values = problem.unpack(x);
  sol.residuals = check_solution(problem, sol.values);
  sol.max_residual = 0.0;
  bool first = true;
  for (const auto& r : sol.residuals) {
    sol.max_residual = first ? r.residual : std::max(sol.max_residual, r.residual);
    first = false;
  }
  if (sol.status == LmiStatus::kFeasible && sol.max_residual > opt.tol) sol.status = LmiStatus::kMaxIters;
}

LmiSolution feasibility_impl(const LmiProblem& problem, const SolverOptions& opt, const Prepared& prep,
                             VectorXd& x, std::vector<double>& comp_slack) {
  if (!(opt.tol > 0.0)) throw InvalidInputError("solver tolerance must be positive");
  if (opt.max_iters < 1) throw InvalidInputError("solver iteration limit must be positive");
  LmiSolution sol;
  sol.status = LmiStatus::kFeasible;
  sol.slack = std::numeric_limits<double>::infinity();
  for (int j : prep.constant_only) {
    const double r = max_eig_dense(problem.compiled()[j].G0);
    sol.slack = std::min(sol.slack, -r);
    if (r > opt.tol) sol.status = LmiStatus::kInfeasible;
  }
  for (const auto& comp : prep.comps) {
    VectorXd xl(comp.params.size());
    for (size_t k = 0; k < comp.params.size(); ++k) xl(k) = x(comp.params[k]);
    if (xl.norm() >= opt.ball_radius) throw InvalidInputError("start point lies outside the solver ball");
    // The overall slack is the minimum over components, so a component need
    // not exceed the smallest slack found so far.
    const ComponentResult r = solve_component(problem, comp, prep.local_of, xl, opt, sol.slack);
    spdlog::debug("lmi component: {} parameters, {} constraints -> {} (t = {:.4e}, {} steps)", comp.params.size(),
                  comp.constraints.size(), to_string(r.status), r.slack, r.iterations);
    for (size_t k = 0; k < comp.params.size(); ++k) x(comp.params[k]) = xl(k);
    sol.iterations += r.iterations;
    sol.slack = std::min(sol.slack, r.slack);
    comp_slack.push_back(r.slack);
    if (r.status == LmiStatus::kInfeasible) {
      sol.status = LmiStatus::kInfeasible;
    } else if (r.status == LmiStatus::kMaxIters && sol.status == LmiStatus::kFeasible) {
      sol.status = LmiStatus::kMaxIters;
    }
  }
  return sol;
}

}  // namespace

LmiSolution solve_feasibility(const LmiProblem& problem, const SolverOptions& options) {
  const Prepared prep = prepare(problem);
  VectorXd x = problem.pack(problem.start());
  std::vector<double> comp_slack;
  LmiSolution sol = feasibility_impl(problem, options, prep, x, comp_slack);
  finalize(problem, x, options, sol);
  spdlog::debug("lmi: {} constraints, {} parameters, {} components -> {} (t* = {:.3e}, {} Newton steps)",
                problem.constraints().size(), problem.scalar_count(), prep.comps.size(), to_string(sol.status),
                sol.slack, sol.iterations);
  return sol;
}

LmiSolution minimize(const LmiProblem& problem, const LinearObjective& objective, const SolverOptions& options) {
  const Prepared prep = prepare(problem);
  VectorXd c = VectorXd::Zero(problem.scalar_count());
  for (const auto& [var, coef] : objective) {
    const VarSpec& v = problem.variable(var);
    if (coef.rows() != v.rows() || coef.cols() != v.cols()) {
      throw InvalidInputError("objective coefficient for '" + v.name + "' has the wrong shape");
    }
    Assignment unit = problem.zero_assignment();
    const int base = problem.scalar_offset(var);
    for (int k = 0; k < v.scalar_count(); ++k) {
      VectorXd e = VectorXd::Zero(problem.scalar_count());
      e(base + k) = 1.0;
      c(base + k) += (problem.unpack(e)[var].array() * coef.array()).sum();
    }
  }
  VectorXd x = problem.pack(problem.start());
  std::vector<double> comp_slack;
  LmiSolution sol = feasibility_impl(problem, options, prep, x, comp_slack);
  if (sol.status != LmiStatus::kFeasible) {
    finalize(problem, x, options, sol);
    sol.objective = c.dot(x);
    return sol;
  }
  const auto& cons = problem.constraints();
  for (size_t ci = 0; ci < prep.comps.size(); ++ci) {
    const Component& comp = prep.comps[ci];
    const int nx = static_cast<int>(comp.params.size());
    VectorXd cl(nx), xl(nx);
    for (int k = 0; k < nx; ++k) {
      cl(k) = c(comp.params[k]);
      xl(k) = x(comp.params[k]);
    }
    if (cl.isZero(0.0)) continue;
    std::vector<double> weight(comp.constraints.size());
    for (size_t jj = 0; jj < weight.size(); ++jj) weight[jj] = cons[comp.constraints[jj]].slacked ? 1.0 : 0.0;
    // Relax slacked constraints by at most tol when the phase-I point sits on
    // their boundary, so the barrier path starts strictly inside.
    const double t = comp_slack[ci];
    const double shift = t > 0.0 ? 0.0 : t - options.tol / 2.0;
    Barrier bar = local_barrier(problem, comp, prep.local_of, weight, false, shift, options.ball_radius);
    bar.c = cl;
    if (!std::isfinite(bar.value(xl))) continue;
    const double m = bar.degree();
    double eta = 1.0;
    int iters = 0;
    while (true) {
      const CenterResult cr = center(bar, eta, xl, iters, options.max_iters);
      if (cr != CenterResult::kCentered || m / eta <= options.objective_gap) {
        if (cr == CenterResult::kBudget) sol.status = LmiStatus::kMaxIters;
        break;
      }
      eta *= options.barrier_growth;
    }
    sol.iterations += iters;
    for (int k = 0; k < nx; ++k) x(comp.params[k]) = xl(k);
  }
  finalize(problem, x, options, sol);
  sol.objective = c.dot(x);
  return sol;
}

}  // namespace ncs
