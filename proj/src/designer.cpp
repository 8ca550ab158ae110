#include "ncs/designer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include <spdlog/spdlog.h>

namespace ncs {

namespace {

constexpr double kRelaxedZero = 1e-6;
constexpr int kExhaustiveLimit = 12;

std::vector<int> offsets(const std::vector<int>& dims) {
  std::vector<int> off(dims.size() + 1, 0);
  for (size_t i = 0; i < dims.size(); ++i) off[i + 1] = off[i] + dims[i];
  return off;
}

/// Rows [off, off+size) of the identity of order `total`.
MatrixXd selector(int off, int size, int total) {
  MatrixXd E = MatrixXd::Zero(size, total);
  for (int a = 0; a < size; ++a) E(a, off + a) = 1.0;
  return E;
}

std::string link_name(Link l) { return std::to_string(l.i + 1) + "." + std::to_string(l.j + 1); }

MatrixXd beta_weights(const DesignConfig& config) {
  const int N = static_cast<int>(config.beta.size());
  MatrixXd w = MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) w(i, i) = config.beta[i];
  return w;
}

/// Block-diagonal beta o X for a block-diagonal X.
MatrixXd beta_scaled(const MatrixXd& X, const std::vector<int>& dims, const DesignConfig& config) {
  const auto off = offsets(dims);
  MatrixXd out = MatrixXd::Zero(X.rows(), X.cols());
  for (size_t i = 0; i < dims.size(); ++i) {
    out.block(off[i], off[i], dims[i], dims[i]) = config.beta[i] * X.block(off[i], off[i], dims[i], dims[i]);
  }
  return out;
}

MatrixXd sym2(const MatrixXd& F) { return F + F.transpose(); }

SymMatrix block_diag_part(const SymMatrix& S, const std::vector<int>& dims) {
  std::vector<SymMatrix> blocks;
  const auto off = offsets(dims);
  for (size_t i = 0; i < dims.size(); ++i) blocks.push_back(S.block(off[i], dims[i]));
  return SymMatrix::block_diagonal(blocks);
}

MatrixXd inverse_spd(const MatrixXd& S) {
  Eigen::LLT<MatrixXd> llt(S);
  if (llt.info() != Eigen::Success) throw CertificateError("certificate block is not positive definite");
  return llt.solve(MatrixXd::Identity(S.rows(), S.cols()));
}

LinkSet restrict_to(const LinkSet& links, const std::vector<bool>& keep) {
  LinkSet out;
  for (size_t l = 0; l < links.size(); ++l) {
    if (keep[l]) out.push_back(links[l]);
  }
  return out;
}

}  // namespace

const char* to_string(SparsifyVariant v) {
  switch (v) {
    case SparsifyVariant::kLinearSearch:
      return "linear-search";
    case SparsifyVariant::kThreshold:
      return "threshold";
    case SparsifyVariant::kExhaustive:
      return "exhaustive";
  }
  return "unknown";
}

SparsifyVariant parse_variant(const std::string& s) {
  if (s == "linear-search") return SparsifyVariant::kLinearSearch;
  if (s == "threshold") return SparsifyVariant::kThreshold;
  if (s == "exhaustive") return SparsifyVariant::kExhaustive;
  throw InvalidInputError("unknown variant '" + s + "' (expected linear-search, threshold or exhaustive)");
}

SolverOptions solver_options(const DesignConfig& config) {
  SolverOptions o;
  o.tol = config.solver_tol;
  o.max_iters = config.max_solver_iters;
  return o;
}

Theorem3Problem assemble_theorem3(const DesignIterationInput& input, const DesignConfig& config,
                                  bool hold_certificate) {
  const PlantSnapshot& s = input.snapshot;
  Theorem3Problem out;
  out.n = s.A.row_dims();
  out.m = s.B.col_dims();
  out.r = s.C.row_dims();
  out.alpha = input.alpha;
  const auto& n = out.n;
  const auto& m = out.m;
  const auto& r = out.r;
  const int N = static_cast<int>(n.size());
  config.validate(N);
  for (int i = 0; i < N; ++i) {
    if (m[i] < 1 || r[i] < 1) throw InvalidInputError("every subsystem needs at least one input and one output");
  }
  std::sort(out.alpha.begin(), out.alpha.end());
  for (const Link& l : out.alpha) {
    if (l.i == l.j || l.i < 0 || l.j < 0 || l.i >= N || l.j >= N) throw DesignError("invalid link in alpha");
  }
  if (input.prev) {
    const int nt = std::accumulate(n.begin(), n.end(), 0);
    if (input.prev->Z.order() != nt || input.prev->Phat.order() != nt) {
      throw DesignError("previous certificate has the wrong order");
    }
  }

  const auto no = offsets(n), mo = offsets(m), ro = offsets(r);
  const int nt = no[N], mt = mo[N], rt = ro[N];
  const MatrixXd AH = s.A_dense + s.H_dense;
  const MatrixXd& B = s.B_dense;
  const MatrixXd& C = s.C_dense;
  const MatrixXd In = MatrixXd::Identity(nt, nt);

  const bool hold = hold_certificate && input.prev.has_value();
  out.held = hold;
  if (hold) {
    out.Z_fixed = block_diag_part(input.prev->Z, n);
    out.Phat_fixed = block_diag_part(input.prev->Phat, n);
  }
  const MatrixXd& Zh = out.Z_fixed.matrix();
  const MatrixXd& Ph = out.Phat_fixed.matrix();

  LmiProblem& P = out.problem;
  std::vector<std::vector<bool>> diag(N, std::vector<bool>(N, false));
  for (int i = 0; i < N; ++i) diag[i][i] = true;
  if (!hold) {
    out.Z = P.add_variable(VarSpec::symmetric("Z", n));
    out.Phat = P.add_variable(VarSpec::symmetric("Phat", n));
  }
  out.W = P.add_variable(VarSpec::rectangular("W", m, n, diag));
  out.What = P.add_variable(VarSpec::rectangular("What", n, r, diag));
  if (!out.alpha.empty()) {
    std::vector<std::vector<bool>> mask(N, std::vector<bool>(N, false));
    for (const Link& l : out.alpha) mask[l.i][l.j] = true;
    out.Y = P.add_variable(VarSpec::rectangular("Y", m, n, mask));
    out.Yhat = P.add_variable(VarSpec::rectangular("Yhat", n, r, mask));
  }
  std::vector<VarId> sK(N), sM(N), sL(N, -1), sO(N, -1);
  for (int i = 0; i < N; ++i) sK[i] = P.add_variable(VarSpec::scalar("sK." + std::to_string(i + 1)));
  for (int i = 0; i < N; ++i) sM[i] = P.add_variable(VarSpec::scalar("sM." + std::to_string(i + 1)));
  for (const Link& l : out.alpha) {
    if (sL[l.j] < 0) sL[l.j] = P.add_variable(VarSpec::scalar("sL." + std::to_string(l.j + 1)));
  }
  for (const Link& l : out.alpha) {
    if (sO[l.i] < 0) sO[l.i] = P.add_variable(VarSpec::scalar("sO." + std::to_string(l.i + 1)));
  }

  const MatrixXd bw = beta_weights(config);
  {
    AffineConstraint c;
    c.id = "39a";
    c.constant = SymMatrix::identity(nt) * config.gamma;
    if (hold) {
      c.constant = c.constant + SymMatrix::symmetrized(sym2(AH * Zh + beta_scaled(Zh, n, config)));
    } else {
      c.terms.push_back(Term::product(out.Z, AH, In, true));
      c.terms.push_back(Term::weighted(out.Z, In, bw, In, true));
    }
    c.terms.push_back(Term::product(out.W, B, In, true));
    if (out.Y >= 0) c.terms.push_back(Term::product(out.Y, B, In, true));
    P.add_constraint(std::move(c));
  }
  {
    AffineConstraint c;
    c.id = "39b";
    c.constant = SymMatrix::identity(nt) * config.gamma;
    if (hold) {
      c.constant = c.constant + SymMatrix::symmetrized(sym2(Ph * AH + beta_scaled(Ph, n, config)));
    } else {
      c.terms.push_back(Term::product(out.Phat, In, AH, true));
      c.terms.push_back(Term::weighted(out.Phat, In, bw, In, true));
    }
    c.terms.push_back(Term::product(out.What, In, C, true));
    if (out.Yhat >= 0) c.terms.push_back(Term::product(out.Yhat, In, C, true));
    P.add_constraint(std::move(c));
  }

  auto diag_block = [&](VarId var, int i) { return Term::product(var, selector(no[i], n[i], nt), selector(no[i], n[i], nt).transpose()); };
  // Adds block i of Z (or Phat), as a variable term or as a held constant.
  auto add_cert_block = [&](AffineConstraint& c, bool observer, int i) {
    if (hold) {
      c.constant = c.constant + (observer ? out.Phat_fixed : out.Z_fixed).block(no[i], n[i]);
    } else {
      c.terms.push_back(diag_block(observer ? out.Phat : out.Z, i));
    }
  };
  auto scaled_identity = [](VarId var, int order, double v) {
    return Term::scaled(var, v * MatrixXd::Identity(order, order));
  };
  // [[w s I_a, X],[X^T, w s I_b]] >= 0 for the (bi, bj) block X of `var`.
  auto norm_block = [&](const std::string& id, VarId var, VarId svar, double w, int row_off, int a, int row_total,
                        int col_off, int b, int col_total) {
    AffineConstraint c;
    c.id = id;
    c.sense = Sense::kPositiveSemidefinite;
    c.constant = SymMatrix(a + b);
    MatrixXd left = MatrixXd::Zero(a + b, row_total);
    left.topRows(a) = selector(row_off, a, row_total);
    MatrixXd right = MatrixXd::Zero(col_total, a + b);
    right.rightCols(b) = selector(col_off, b, col_total).transpose();
    c.terms.push_back(Term::scaled(svar, w * MatrixXd::Identity(a + b, a + b)));
    c.terms.push_back(Term::product(var, left, right, true));
    c.slacked = false;
    P.add_constraint(std::move(c));
  };

  for (int i = 0; i < N; ++i) {
    const std::string si = std::to_string(i + 1);
    // A held certificate already satisfies the box and monotonicity
    // constraints (with equality for the latter), so they are omitted.
    if (!hold) {
      {
        AffineConstraint c;
        c.id = "39c.upper." + si;
        c.constant = SymMatrix::identity(n[i]) * (-1.0 / config.epsilon[i]);
        c.terms.push_back(diag_block(out.Z, i));
        P.add_constraint(std::move(c));
      }
      {
        AffineConstraint c;
        c.id = "39c.lower." + si;
        c.sense = Sense::kPositiveSemidefinite;
        c.constant = SymMatrix(n[i]);
        c.terms.push_back(diag_block(out.Z, i));
        P.add_constraint(std::move(c));
      }
      {
        AffineConstraint c;
        c.id = "39d." + si;
        c.sense = Sense::kPositiveSemidefinite;
        c.constant = SymMatrix::identity(n[i]) * (-config.epsilon[i]);
        c.terms.push_back(diag_block(out.Phat, i));
        P.add_constraint(std::move(c));
      }
      if (input.prev) {
        AffineConstraint ce;
        ce.id = "39e." + si;
        ce.sense = Sense::kPositiveSemidefinite;
        ce.constant = input.prev->Z.block(no[i], n[i]) * -1.0;
        ce.terms.push_back(diag_block(out.Z, i));
        ce.slacked = false;
        P.add_constraint(std::move(ce));
        AffineConstraint cf;
        cf.id = "39f." + si;
        cf.sense = Sense::kNegativeSemidefinite;
        cf.constant = input.prev->Phat.block(no[i], n[i]) * -1.0;
        cf.terms.push_back(diag_block(out.Phat, i));
        cf.slacked = false;
        P.add_constraint(std::move(cf));
      }
    }
    {
      AffineConstraint c;
      c.id = "39g.lam." + si;
      c.sense = Sense::kPositiveSemidefinite;
      c.constant = SymMatrix(n[i]);
      add_cert_block(c, false, i);
      c.terms.push_back(scaled_identity(sK[i], n[i], -1.0));
      c.slacked = false;
      P.add_constraint(std::move(c));
      norm_block("39g.norm." + si, out.W, sK[i], config.kappa[i], mo[i], m[i], mt, no[i], n[i], nt);
    }
    {
      AffineConstraint c;
      c.id = "39i.lam." + si;
      c.sense = Sense::kPositiveSemidefinite;
      c.constant = SymMatrix(n[i]);
      add_cert_block(c, true, i);
      c.terms.push_back(scaled_identity(sM[i], n[i], -1.0));
      c.slacked = false;
      P.add_constraint(std::move(c));
      norm_block("39i.norm." + si, out.What, sM[i], config.mu[i], no[i], n[i], nt, ro[i], r[i], rt);
    }
  }
  for (int j = 0; j < N; ++j) {
    if (sL[j] < 0) continue;
    AffineConstraint c;
    c.id = "39h.lam." + std::to_string(j + 1);
    c.sense = Sense::kPositiveSemidefinite;
    c.constant = SymMatrix(n[j]);
    add_cert_block(c, false, j);
    c.terms.push_back(scaled_identity(sL[j], n[j], -1.0));
    c.slacked = false;
    P.add_constraint(std::move(c));
  }
  for (const Link& l : out.alpha) {
    norm_block("39h.norm." + link_name(l), out.Y, sL[l.j], config.iota(l.i, l.j), mo[l.i], m[l.i], mt, no[l.j],
               n[l.j], nt);
  }
  for (int i = 0; i < N; ++i) {
    if (sO[i] < 0) continue;
    AffineConstraint c;
    c.id = "39j.lam." + std::to_string(i + 1);
    c.sense = Sense::kPositiveSemidefinite;
    c.constant = SymMatrix(n[i]);
    add_cert_block(c, true, i);
    c.terms.push_back(scaled_identity(sO[i], n[i], -1.0));
    c.slacked = false;
    P.add_constraint(std::move(c));
  }
  for (const Link& l : out.alpha) {
    norm_block("39j.norm." + link_name(l), out.Yhat, sO[l.i], config.omega(l.i, l.j), no[l.i], n[l.i], nt, ro[l.j],
               r[l.j], rt);
  }

  // Start point: the neutral interior guess (or the warm certificate), moved
  // strictly inside the monotonicity constraints when a previous certificate
  // exists.
  const double zstart = 0.5 / *std::min_element(config.epsilon.begin(), config.epsilon.end());
  const Certificate* warm = input.warm ? &*input.warm : nullptr;
  if (warm && (warm->Z.order() != nt || warm->Phat.order() != nt)) warm = nullptr;
  MatrixXd Z0 = warm ? warm->Z.matrix() : MatrixXd(zstart * In);
  MatrixXd P0 = warm ? warm->Phat.matrix() : MatrixXd(In);
  if (hold) {
    Z0 = Zh;
    P0 = Ph;
  } else if (input.prev) {
    const MatrixXd& Zp = input.prev->Z.matrix();
    const MatrixXd& Pp = input.prev->Phat.matrix();
    if (!warm) {
      Z0 = Zp;
      P0 = Pp;
    }
    Z0 += 1e-4 * std::max(1.0, Zp.norm()) * In;
    P0 *= 1.0 - 1e-4;
  }
  if (!hold) {
    P.set_start(out.Z, Z0);
    P.set_start(out.Phat, P0);
  }
  std::vector<double> zmin(N), pmin(N);
  for (int i = 0; i < N; ++i) {
    zmin[i] = min_eig(SymMatrix::symmetrized(Z0.block(no[i], no[i], n[i], n[i])));
    pmin[i] = min_eig(SymMatrix::symmetrized(P0.block(no[i], no[i], n[i], n[i])));
  }
  // Aux scalar strictly between the scaled norm bound and the eigenvalue
  // bound when possible.
  auto between = [](double lo, double hi) { return lo < hi ? 0.5 * (lo + hi) : 0.5 * hi; };
  std::vector<double> kz(N, 0.0), mz(N, 0.0), lz(N, 0.0), oz(N, 0.0);
  if (warm) {
    P.set_start(out.W, warm->W.to_dense());
    P.set_start(out.What, warm->What.to_dense());
    BlockMatrix Y0(m, n), Yh0(n, r);
    for (const Link& l : out.alpha) {
      if (warm->Y.has_block(l.i, l.j)) {
        Y0.set_block(l.i, l.j, warm->Y.block(l.i, l.j));
        lz[l.j] = std::max(lz[l.j], max_singular_value(warm->Y.block(l.i, l.j)) / config.iota(l.i, l.j));
      }
      if (warm->Yhat.has_block(l.i, l.j)) {
        Yh0.set_block(l.i, l.j, warm->Yhat.block(l.i, l.j));
        oz[l.i] = std::max(oz[l.i], max_singular_value(warm->Yhat.block(l.i, l.j)) / config.omega(l.i, l.j));
      }
    }
    if (out.Y >= 0) {
      P.set_start(out.Y, Y0.to_dense());
      P.set_start(out.Yhat, Yh0.to_dense());
    }
    for (int i = 0; i < N; ++i) {
      kz[i] = max_singular_value(warm->W.block(i, i)) / config.kappa[i];
      mz[i] = max_singular_value(warm->What.block(i, i)) / config.mu[i];
    }
  }
  for (int i = 0; i < N; ++i) {
    P.set_start(sK[i], MatrixXd::Constant(1, 1, warm ? between(kz[i], zmin[i]) : 1e-3));
    P.set_start(sM[i], MatrixXd::Constant(1, 1, warm ? between(mz[i], pmin[i]) : 1e-3));
    if (sL[i] >= 0) P.set_start(sL[i], MatrixXd::Constant(1, 1, warm ? between(lz[i], zmin[i]) : 1e-3));
    if (sO[i] >= 0) P.set_start(sO[i], MatrixXd::Constant(1, 1, warm ? between(oz[i], pmin[i]) : 1e-3));
  }
  // A warm point near the solver ball would leave no room to move; start cold.
  if (warm && P.pack(P.start()).norm() >= 0.9 * solver_options(config).ball_radius) {
    DesignIterationInput cold = input;
    cold.warm.reset();
    return assemble_theorem3(cold, config, hold);
  }
  return out;
}

Certificate extract_certificate(const Theorem3Problem& p, const LmiSolution& solution) {
  Certificate c;
  const auto& v = solution.values;
  c.Z = p.held ? p.Z_fixed : block_diag_part(SymMatrix::symmetrized(v[p.Z]), p.n);
  c.Phat = p.held ? p.Phat_fixed : block_diag_part(SymMatrix::symmetrized(v[p.Phat]), p.n);
  c.W = BlockMatrix::from_dense(v[p.W], p.m, p.n);
  c.What = BlockMatrix::from_dense(v[p.What], p.n, p.r);
  c.Y = p.Y >= 0 ? BlockMatrix::from_dense(v[p.Y], p.m, p.n) : BlockMatrix(p.m, p.n);
  c.Yhat = p.Yhat >= 0 ? BlockMatrix::from_dense(v[p.Yhat], p.n, p.r) : BlockMatrix(p.n, p.r);
  c.slack = solution.slack;
  c.iterations = solution.iterations;
  return c;
}

namespace {

/// The warm certificate itself, if it solves the held problem with at least
/// the phase-I margin it was found with.
std::optional<Certificate> keep_warm(const Theorem3Problem& p, const Certificate& warm) {
  LmiSolution sol;
  sol.values = p.problem.start();
  sol.residuals = check_solution(p.problem, sol.values);
  double worst_slacked = -std::numeric_limits<double>::infinity();
  for (size_t j = 0; j < sol.residuals.size(); ++j) {
    const double r = sol.residuals[j].residual;
    if (p.problem.constraints()[j].slacked) {
      worst_slacked = std::max(worst_slacked, r);
    } else if (!(r < 0.0)) {
      return std::nullopt;
    }
  }
  sol.slack = -worst_slacked;
  if (!(sol.slack >= warm.slack) || !(sol.slack > 0.0)) return std::nullopt;
  sol.status = LmiStatus::kFeasible;
  return extract_certificate(p, sol);
}

}  // namespace

std::optional<Certificate> solve_theorem3(const DesignIterationInput& input, const DesignConfig& config,
                                          double* slack) {
  // Keeping the previous Z and Phat leaves the monotonicity chains untouched;
  // the full problem is solved only when the held certificate fails.
  for (const bool hold : {true, false}) {
    if (hold && !input.prev) continue;
    const Theorem3Problem p = assemble_theorem3(input, config, hold);
    if (hold && input.warm) {
      if (auto kept = keep_warm(p, *input.warm)) {
        if (slack) *slack = kept->slack;
        spdlog::debug("k={} t={:.6f} links={} -> previous certificate kept (t={:.4e})", input.k, input.t,
                      input.alpha.size(), kept->slack);
        return kept;
      }
    }
    const LmiSolution sol = solve_feasibility(p.problem, solver_options(config));
    if (slack) *slack = sol.slack;
    spdlog::debug("k={} t={:.6f} links={}{} -> {} (t*={:.4e}, {} steps)", input.k, input.t, input.alpha.size(),
                  hold ? " (held certificate)" : "", to_string(sol.status), sol.slack, sol.iterations);
    if (sol.feasible()) return extract_certificate(p, sol);
  }
  return std::nullopt;
}

Gains recover_gains(const Certificate& cert, const DesignConfig& config) {
  const auto& n = cert.W.col_dims();
  const auto& m = cert.W.row_dims();
  const auto& r = cert.What.col_dims();
  const int N = static_cast<int>(n.size());
  const auto no = offsets(n);
  std::vector<MatrixXd> Zinv(N), Pinv(N);
  for (int i = 0; i < N; ++i) {
    const SymMatrix Zi = cert.Z.block(no[i], n[i]);
    const SymMatrix Pi = cert.Phat.block(no[i], n[i]);
    if (!(min_eig(Zi) > 0.0)) throw CertificateError("Z block " + std::to_string(i + 1) + " is not positive definite");
    const double eps = i < static_cast<int>(config.epsilon.size()) ? config.epsilon[i] : 0.0;
    if (!(min_eig(Pi) >= 0.5 * eps) || !(min_eig(Pi) > 0.0)) {
      throw CertificateError("Phat block " + std::to_string(i + 1) + " is below epsilon/2");
    }
    Zinv[i] = inverse_spd(Zi.matrix());
    Pinv[i] = inverse_spd(Pi.matrix());
  }
  Gains g;
  g.K = BlockMatrix(m, n);
  g.L = BlockMatrix(m, n);
  g.M = BlockMatrix(n, r);
  g.O = BlockMatrix(n, r);
  for (int i = 0; i < N; ++i) {
    g.K.set_block(i, i, cert.W.block(i, i) * Zinv[i]);
    g.M.set_block(i, i, Pinv[i] * cert.What.block(i, i));
  }
  for (const auto& [ij, Y] : cert.Y.blocks()) g.L.set_block(ij.first, ij.second, Y * Zinv[ij.second]);
  for (const auto& [ij, Yh] : cert.Yhat.blocks()) g.O.set_block(ij.first, ij.second, Pinv[ij.first] * Yh);
  return g;
}

MatrixXd controller_form(const Certificate& cert, const PlantSnapshot& s, const DesignConfig& config) {
  const MatrixXd& Z = cert.Z.matrix();
  return (s.A_dense + s.H_dense) * Z + s.B_dense * (cert.W.to_dense() + cert.Y.to_dense()) +
         beta_scaled(Z, cert.W.col_dims(), config);
}

MatrixXd observer_form(const Certificate& cert, const PlantSnapshot& s, const DesignConfig& config) {
  const MatrixXd& P = cert.Phat.matrix();
  return P * (s.A_dense + s.H_dense) + (cert.What.to_dense() + cert.Yhat.to_dense()) * s.C_dense +
         beta_scaled(P, cert.W.col_dims(), config);
}

SwitchingTime switching_time(const Certificate& cert, const PlantSnapshot& snapshot, const DesignConfig& config,
                             const LipschitzBounds& lip, double t_max) {
  if (!(t_max > 0.0)) throw InvalidInputError("T_max must be positive");
  const double num_c = -max_eig(SymMatrix::symmetrized(sym2(controller_form(cert, snapshot, config))));
  const double num_o = -max_eig(SymMatrix::symmetrized(sym2(observer_form(cert, snapshot, config))));
  if (!(num_c > 0.0) || !(num_o > 0.0)) {
    throw CertificateError("certificate has a nonpositive stability margin");
  }
  const double den_c = (lip.a + lip.h) * max_singular_value(cert.Z.matrix()) +
                       lip.b * max_singular_value(cert.W.to_dense() + cert.Y.to_dense());
  const double den_o = (lip.a + lip.h) * max_singular_value(cert.Phat.matrix()) +
                       lip.c * max_singular_value(cert.What.to_dense() + cert.Yhat.to_dense());
  SwitchingTime st;
  st.controller_branch = den_c > 0.0 ? 0.5 * num_c / den_c : t_max;
  st.observer_branch = den_o > 0.0 ? 0.5 * num_o / den_o : t_max;
  st.T = std::clamp(std::min(st.controller_branch, st.observer_branch), 0.0, t_max);
  return st;
}

double tmin_lower_bound(const DesignConfig& config, const LipschitzBounds& lip, const SymMatrix& Phat0,
                        const TimeVaryingNetworkedPlant& plant) {
  const int N = plant.size();
  config.validate(N);
  double kappa = 0.0, mu = 0.0, iota = 0.0, omega = 0.0;
  for (int i = 0; i < N; ++i) {
    const auto& d = plant.dims(i);
    kappa += std::sqrt(static_cast<double>(std::min(d.m, d.n))) * config.kappa[i];
    mu += std::sqrt(static_cast<double>(std::min(d.n, d.r))) * config.mu[i];
  }
  for (const Link& l : plant.adjacency()) {
    iota += std::sqrt(static_cast<double>(std::min(plant.dims(l.i).m, plant.dims(l.j).n))) * config.iota(l.i, l.j);
    omega += std::sqrt(static_cast<double>(std::min(plant.dims(l.i).n, plant.dims(l.j).r))) * config.omega(l.i, l.j);
  }
  const double eps = config.min_epsilon();
  const double inf = std::numeric_limits<double>::infinity();
  const double den1 = lip.a + lip.h + lip.b * (kappa + iota);
  const double den2 = max_singular_value(Phat0.matrix()) * (lip.a + lip.h + lip.c * (mu + omega));
  const double b1 = den1 > 0.0 ? eps * config.gamma / den1 : inf;
  const double b2 = den2 > 0.0 ? config.gamma / den2 : inf;
  return 0.5 * std::min(b1, b2);
}

namespace {

/// Constant parts and per-link coefficients of the two stability forms with
/// every matrix fixed, so that each reads C0 + sum_l a_l Q_l <= 0.
struct FixedForms {
  MatrixXd Cc, Co;
  std::vector<MatrixXd> Qc, Qo;
};

FixedForms fixed_forms(const DesignIterationInput& input, const Certificate& cert, const DesignConfig& config) {
  const PlantSnapshot& s = input.snapshot;
  const int nt = cert.Z.order();
  const auto& n = cert.W.col_dims();
  FixedForms f;
  const MatrixXd AH = s.A_dense + s.H_dense;
  const MatrixXd& Z = cert.Z.matrix();
  const MatrixXd& P = cert.Phat.matrix();
  const MatrixXd gI = config.gamma * MatrixXd::Identity(nt, nt);
  f.Cc = sym2(AH * Z + s.B_dense * cert.W.to_dense() + beta_scaled(Z, n, config)) + gI;
  f.Co = sym2(P * AH + cert.What.to_dense() * s.C_dense + beta_scaled(P, n, config)) + gI;
  for (const Link& l : input.alpha) {
    BlockMatrix Yl(cert.Y.row_dims(), cert.Y.col_dims());
    Yl.set_block(l.i, l.j, cert.Y.block(l.i, l.j));
    BlockMatrix Yhl(cert.Yhat.row_dims(), cert.Yhat.col_dims());
    Yhl.set_block(l.i, l.j, cert.Yhat.block(l.i, l.j));
    f.Qc.push_back(sym2(s.B_dense * Yl.to_dense()));
    f.Qo.push_back(sym2(Yhl.to_dense() * s.C_dense));
  }
  return f;
}

bool fixed_check(const FixedForms& f, const std::vector<bool>& keep) {
  MatrixXd Gc = f.Cc, Go = f.Co;
  for (size_t l = 0; l < keep.size(); ++l) {
    if (!keep[l]) continue;
    Gc += f.Qc[l];
    Go += f.Qo[l];
  }
  return max_eig(SymMatrix::symmetrized(Gc)) <= 0.0 && max_eig(SymMatrix::symmetrized(Go)) <= 0.0;
}

Certificate certificate_of(const GainScheduleEntry& e) {
  Certificate c;
  c.Z = e.Z;
  c.Phat = e.Phat;
  c.W = e.W;
  c.Y = e.Y;
  c.What = e.What;
  c.Yhat = e.Yhat;
  c.slack = e.slack;
  return c;
}

DesignIterationInput with_alpha(const DesignIterationInput& input, LinkSet alpha) {
  DesignIterationInput out = input;
  out.alpha = std::move(alpha);
  return out;
}

std::string describe(const DesignIterationInput& input) {
  return "interval k=" + std::to_string(input.k) + " (t=" + std::to_string(input.t) + ")";
}

}  // namespace

std::vector<RelaxedLink> relax_links(const DesignIterationInput& input, const Certificate& cert,
                                     const DesignConfig& config) {
  if (input.alpha.empty()) return {};
  const FixedForms f = fixed_forms(input, cert, config);
  LmiProblem P;
  std::vector<VarId> a;
  for (const Link& l : input.alpha) {
    a.push_back(P.add_variable(VarSpec::scalar("alpha." + link_name(l))));
    P.set_start(a.back(), MatrixXd::Constant(1, 1, 0.5));
  }
  auto stability = [&](const std::string& id, const MatrixXd& C0, const std::vector<MatrixXd>& Q) {
    AffineConstraint c;
    c.id = id;
    c.constant = SymMatrix::symmetrized(C0);
    for (size_t l = 0; l < a.size(); ++l) c.terms.push_back(Term::scaled(a[l], 0.5 * (Q[l] + Q[l].transpose())));
    P.add_constraint(std::move(c));
  };
  stability("39a", f.Cc, f.Qc);
  stability("39b", f.Co, f.Qo);
  const MatrixXd one = MatrixXd::Ones(1, 1);
  LinearObjective obj;
  for (size_t l = 0; l < a.size(); ++l) {
    AffineConstraint lo;
    lo.id = "alpha.lower." + link_name(input.alpha[l]);
    lo.sense = Sense::kPositiveSemidefinite;
    lo.constant = SymMatrix(1);
    lo.terms.push_back(Term::scaled(a[l], one));
    P.add_constraint(std::move(lo));
    AffineConstraint up;
    up.id = "alpha.upper." + link_name(input.alpha[l]);
    up.constant = SymMatrix::identity(1) * -1.0;
    up.terms.push_back(Term::scaled(a[l], one));
    P.add_constraint(std::move(up));
    obj.emplace_back(a[l], one);
  }
  const LmiSolution sol = minimize(P, obj, solver_options(config));
  std::vector<RelaxedLink> out;
  for (size_t l = 0; l < a.size(); ++l) {
    // An infeasible relaxation keeps every link (alpha = 1 is feasible up to
    // solver accuracy because the certificate came from a feasible solve).
    const double v = sol.feasible() ? std::clamp(sol.values[a[l]](0, 0), 0.0, 1.0) : 1.0;
    out.push_back({input.alpha[l], v});
  }
  return out;
}

SparsifyResult sparsify_linear_search(const DesignIterationInput& input, const DesignConfig& config) {
  SparsifyResult res;
  res.report.variant = SparsifyVariant::kLinearSearch;
  LinkSet alpha = input.alpha;
  std::sort(alpha.begin(), alpha.end());
  std::optional<Certificate> best;
  LinkSet best_alpha;
  bool first_relaxation = true;
  while (true) {
    double slack = 0.0;
    DesignIterationInput cur = with_alpha(input, alpha);
    if (best) cur.warm = *best;
    auto cert = solve_theorem3(cur, config, &slack);
    ++res.report.solve_count;
    if (!cert) {
      if (!best) throw DesignInfeasibleError(describe(input) + ": infeasible with every candidate link active", slack);
      break;
    }
    best = std::move(cert);
    best_alpha = alpha;
    if (alpha.empty()) break;
    const auto relaxed = relax_links(with_alpha(input, alpha), *best, config);
    if (first_relaxation) {
      res.report.relaxed_alpha = relaxed;
      first_relaxation = false;
    }
    int drop = -1;
    for (size_t l = 0; l < relaxed.size(); ++l) {
      if (relaxed[l].value <= kRelaxedZero) continue;
      if (drop < 0 || relaxed[l].value < relaxed[drop].value) drop = static_cast<int>(l);
    }
    if (drop < 0) {
      alpha.clear();
    } else {
      alpha.erase(alpha.begin() + drop);
    }
  }
  res.report.alpha_dagger = best_alpha;
  res.report.link_count = static_cast<int>(best_alpha.size());
  res.certificate = std::move(*best);
  return res;
}

SparsifyResult sparsify_threshold(const DesignIterationInput& input, const DesignConfig& config) {
  SparsifyResult res;
  res.report.variant = SparsifyVariant::kThreshold;
  LinkSet full = input.alpha;
  std::sort(full.begin(), full.end());
  double slack = 0.0;
  auto cert = solve_theorem3(with_alpha(input, full), config, &slack);
  ++res.report.solve_count;
  if (!cert) throw DesignInfeasibleError(describe(input) + ": infeasible with every candidate link active", slack);
  res.report.alpha_dagger = full;
  res.certificate = *cert;
  if (!full.empty()) {
    const auto relaxed = relax_links(with_alpha(input, full), *cert, config);
    res.report.relaxed_alpha = relaxed;
    std::vector<double> cands;
    for (const auto& rl : relaxed) {
      if (rl.value > kRelaxedZero) cands.push_back(rl.value);
    }
    std::sort(cands.begin(), cands.end());
    cands.erase(std::unique(cands.begin(), cands.end()), cands.end());
    auto keep_for = [&](double tau) {
      std::vector<bool> keep(relaxed.size());
      for (size_t l = 0; l < relaxed.size(); ++l) keep[l] = relaxed[l].value > kRelaxedZero && relaxed[l].value >= tau;
      return keep;
    };
    std::optional<std::vector<bool>> chosen;
    if (cands.empty()) {
      chosen = std::vector<bool>(relaxed.size(), false);
    } else {
      const FixedForms f = fixed_forms(with_alpha(input, full), *cert, config);
      if (fixed_check(f, keep_for(cands.front()))) {
        size_t lo = 0, hi = cands.size() - 1;  // lo feasible
        while (lo < hi) {
          const size_t mid = (lo + hi + 1) / 2;
          if (fixed_check(f, keep_for(cands[mid]))) {
            lo = mid;
          } else {
            hi = mid - 1;
          }
        }
        chosen = keep_for(cands[lo]);
      }
    }
    if (chosen) {
      const LinkSet alpha = restrict_to(full, *chosen);
      if (alpha != full) {
        auto c2 = solve_theorem3(with_alpha(input, alpha), config);
        ++res.report.solve_count;
        if (c2) {
          res.report.alpha_dagger = alpha;
          res.certificate = std::move(*c2);
        }
      }
    }
  }
  res.report.link_count = static_cast<int>(res.report.alpha_dagger.size());
  return res;
}

SparsifyResult sparsify_exhaustive(const DesignIterationInput& input, const DesignConfig& config, int jobs) {
  LinkSet full = input.alpha;
  std::sort(full.begin(), full.end());
  const int L = static_cast<int>(full.size());
  if (L > kExhaustiveLimit) {
    throw DesignError("exhaustive search refused: " + std::to_string(L) + " candidate links exceed the limit of " +
                      std::to_string(kExhaustiveLimit));
  }
  jobs = std::max(1, jobs);
  SparsifyResult res;
  res.report.variant = SparsifyVariant::kExhaustive;
  double last_slack = -std::numeric_limits<double>::infinity();
  for (int size = 0; size <= L; ++size) {
    // Subsets of this size in lexicographic order of link indices.
    std::vector<std::vector<bool>> subsets;
    std::vector<bool> sel(L, false);
    std::fill(sel.begin(), sel.begin() + size, true);
    do {
      subsets.push_back(sel);
    } while (std::prev_permutation(sel.begin(), sel.end()));
    for (size_t start = 0; start < subsets.size(); start += jobs) {
      const size_t stop = std::min(subsets.size(), start + static_cast<size_t>(jobs));
      std::vector<std::optional<Certificate>> out(stop - start);
      std::vector<double> slacks(stop - start, 0.0);
      auto work = [&](size_t idx) {
        out[idx - start] = solve_theorem3(with_alpha(input, restrict_to(full, subsets[idx])), config,
                                          &slacks[idx - start]);
      };
      if (stop - start == 1) {
        work(start);
      } else {
        std::vector<std::thread> threads;
        for (size_t idx = start; idx < stop; ++idx) threads.emplace_back(work, idx);
        for (auto& t : threads) t.join();
      }
      for (size_t idx = start; idx < stop; ++idx) {
        ++res.report.solve_count;
        last_slack = slacks[idx - start];
        if (out[idx - start]) {
          res.report.alpha_dagger = restrict_to(full, subsets[idx]);
          res.report.link_count = size;
          res.certificate = std::move(*out[idx - start]);
          return res;
        }
      }
    }
  }
  throw DesignInfeasibleError(describe(input) + ": no subset of the candidate links is feasible", last_slack);
}

SparsifyResult sparsify(SparsifyVariant variant, const DesignIterationInput& input, const DesignConfig& config,
                        int jobs) {
  switch (variant) {
    case SparsifyVariant::kLinearSearch:
      return sparsify_linear_search(input, config);
    case SparsifyVariant::kThreshold:
      return sparsify_threshold(input, config);
    case SparsifyVariant::kExhaustive:
      return sparsify_exhaustive(input, config, jobs);
  }
  throw InvalidInputError("unknown variant");
}

GainScheduleEntry make_entry(const DesignIterationInput& input, const SparsifyResult& result,
                             const DesignConfig& config, const LipschitzBounds& lipschitz) {
  const Certificate& c = result.certificate;
  const Gains g = recover_gains(c, config);
  GainScheduleEntry e;
  e.k = input.k;
  e.t = input.t;
  e.T = switching_time(c, input.snapshot, config, lipschitz, config.t_max).T;
  e.alpha = result.report.alpha_dagger;
  e.K = g.K;
  e.L = g.L;
  e.M = g.M;
  e.O = g.O;
  e.Z = c.Z;
  e.Phat = c.Phat;
  e.W = c.W;
  e.Y = c.Y;
  e.What = c.What;
  e.Yhat = c.Yhat;
  e.slack = c.slack;
  e.solve_count = result.report.solve_count;
  return e;
}

DesignRun run_design(const TimeVaryingNetworkedPlant& plant, const DesignConfig& config, double t_end,
                     SparsifyVariant variant, int jobs) {
  if (!(t_end > 0.0) || !std::isfinite(t_end)) throw InvalidInputError("t_end must be positive and finite");
  config.validate(plant.size());
  DesignRun run;
  double t = 0.0;
  for (int k = 0; t < t_end; ++k) {
    DesignIterationInput in;
    in.k = k;
    in.t = t;
    in.snapshot = aggregate(plant, t);
    in.alpha = plant.adjacency();
    if (k > 0) {
      in.prev = PreviousCertificate{run.entries.back().Z, run.entries.back().Phat};
      in.warm = certificate_of(run.entries.back());
    }
    try {
      const SparsifyResult res = plant.size() == 1 || in.alpha.empty()
                                     ? sparsify_exhaustive(in, config, 1)
                                     : sparsify(variant, in, config, jobs);
      GainScheduleEntry e = make_entry(in, res, config, plant.lipschitz());
      SparsifyReport rep = res.report;
      rep.variant = variant;
      if (!(e.T > 0.0)) throw CertificateError(describe(in) + ": zero switching time");
      if (k == 0) run.tmin_bound = tmin_lower_bound(config, plant.lipschitz(), e.Phat, plant);
      spdlog::info("k={} t={:.6f} T={:.6f} links={} solves={}", k, t, e.T, e.link_count(), rep.solve_count);
      t += e.T;
      run.entries.push_back(std::move(e));
      run.reports.push_back(std::move(rep));
    } catch (const DesignInfeasibleError& err) {
      run.diagnostic = std::string(err.what()) + " (phase-I slack " + std::to_string(err.slack()) + ")";
      spdlog::error("{}", run.diagnostic);
      return run;
    }
  }
  run.complete = true;
  return run;
}

std::vector<LinkComparisonRow> compare_with_exhaustive(const TimeVaryingNetworkedPlant& plant,
                                                       const DesignConfig& config, const DesignRun& heuristic,
                                                       int jobs) {
  if (static_cast<int>(plant.adjacency().size()) > kExhaustiveLimit) {
    throw DesignError("exhaustive comparison refused: plant adjacency has " +
                      std::to_string(plant.adjacency().size()) + " links (limit " +
                      std::to_string(kExhaustiveLimit) + ")");
  }
  std::vector<LinkComparisonRow> rows;
  for (size_t k = 0; k < heuristic.entries.size(); ++k) {
    const auto& e = heuristic.entries[k];
    DesignIterationInput in;
    in.k = e.k;
    in.t = e.t;
    in.snapshot = aggregate(plant, e.t);
    in.alpha = plant.adjacency();
    if (k > 0) {
      in.prev = PreviousCertificate{heuristic.entries[k - 1].Z, heuristic.entries[k - 1].Phat};
      in.warm = certificate_of(heuristic.entries[k - 1]);
    }
    const SparsifyResult opt = sparsify_exhaustive(in, config, jobs);
    rows.push_back({e.k, e.t, e.link_count(), opt.report.link_count});
  }
  return rows;
}

}  // namespace ncs
