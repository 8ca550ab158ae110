#include "ncs/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

namespace ncs {

double ParametricScalar::value(double t) const {
  switch (kind) {
    case Waveform::kConstant:
      return a0;
    case Waveform::kCosine:
      return a0 + a1 * std::cos(omega * t);
    case Waveform::kSine:
      return a0 + a1 * std::sin(omega * t);
  }
  return a0;
}

double ParametricScalar::derivative(double t) const {
  switch (kind) {
    case Waveform::kConstant:
      return 0.0;
    case Waveform::kCosine:
      return -a1 * omega * std::sin(omega * t);
    case Waveform::kSine:
      return a1 * omega * std::cos(omega * t);
  }
  return 0.0;
}

bool ParametricScalar::is_zero() const { return a0 == 0.0 && (kind == Waveform::kConstant || a1 == 0.0); }

ParametricMatrix::ParametricMatrix(int rows, int cols) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw ModelError("ParametricMatrix: negative dimension");
  entries_.assign(static_cast<size_t>(rows) * cols, ParametricScalar{});
}

ParametricMatrix ParametricMatrix::constant(const MatrixXd& m) {
  ParametricMatrix p(static_cast<int>(m.rows()), static_cast<int>(m.cols()));
  for (int i = 0; i < p.rows_; ++i) {
    for (int j = 0; j < p.cols_; ++j) p.at(i, j) = ParametricScalar::constant(m(i, j));
  }
  return p;
}

MatrixXd ParametricMatrix::value(double t) const {
  MatrixXd out(rows_, cols_);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) out(i, j) = at(i, j).value(t);
  }
  return out;
}

MatrixXd ParametricMatrix::derivative(double t) const {
  MatrixXd out(rows_, cols_);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < cols_; ++j) out(i, j) = at(i, j).derivative(t);
  }
  return out;
}

bool ParametricMatrix::is_zero() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const ParametricScalar& s) { return s.is_zero(); });
}

ParametricMatrix ParametricMatrix::scaled(double s) const {
  ParametricMatrix out = *this;
  for (auto& e : out.entries_) e = e.scaled(s);
  return out;
}

MatrixFunction::MatrixFunction(ParametricMatrix p)
    : rows_(p.rows()), cols_(p.cols()), parametric_(std::move(p)) {}

MatrixFunction::MatrixFunction(int rows, int cols, Callable f) : rows_(rows), cols_(cols), fn_(std::move(f)) {
  if (rows < 0 || cols < 0) throw ModelError("MatrixFunction: negative dimension");
  if (!fn_) throw ModelError("MatrixFunction: empty callable");
}

MatrixXd MatrixFunction::operator()(double t) const {
  if (parametric_) return parametric_->value(t);
  if (!fn_) return MatrixXd::Zero(rows_, cols_);
  MatrixXd v = fn_(t);
  if (v.rows() != rows_ || v.cols() != cols_) {
    std::ostringstream os;
    os << "matrix function returned " << v.rows() << "x" << v.cols() << ", declared " << rows_ << "x" << cols_;
    throw ModelError(os.str());
  }
  return v;
}

TimeVaryingNetworkedPlant::TimeVaryingNetworkedPlant(std::vector<Subsystem> subsystems,
                                                     std::vector<Coupling> couplings, LipschitzBounds lipschitz)
    : subsystems_(std::move(subsystems)), couplings_(std::move(couplings)), lipschitz_(lipschitz) {
  if (subsystems_.empty()) throw ModelError("plant has no subsystems");
  const int n = size();
  for (int i = 0; i < n; ++i) {
    const auto& s = subsystems_[i];
    const auto& d = s.dims;
    if (d.n < 1 || d.m < 0 || d.r < 0) throw ModelError("subsystem " + std::to_string(i + 1) + ": invalid dimensions");
    auto check = [&](const MatrixFunction& f, int r, int c, const char* name) {
      if (f.rows() != r || f.cols() != c) {
        std::ostringstream os;
        os << "subsystem " << i + 1 << ": " << name << " declared " << f.rows() << "x" << f.cols() << ", expected "
           << r << "x" << c;
        throw ModelError(os.str());
      }
    };
    check(s.A, d.n, d.n, "A");
    check(s.B, d.n, d.m, "B");
    check(s.C, d.r, d.n, "C");
  }
  std::set<Link> seen;
  for (const auto& c : couplings_) {
    const Link l = c.link;
    if (l.i < 0 || l.j < 0 || l.i >= n || l.j >= n) throw ModelError("coupling index out of range");
    if (l.i == l.j) throw ModelError("coupling (" + std::to_string(l.i + 1) + "," + std::to_string(l.j + 1) + ") is a self-loop");
    if (!seen.insert(l).second) throw ModelError("duplicate coupling");
    if (c.H.rows() != subsystems_[l.i].dims.n || c.H.cols() != subsystems_[l.j].dims.n) {
      throw ModelError("coupling H_" + std::to_string(l.i + 1) + std::to_string(l.j + 1) + " has the wrong shape");
    }
  }
  std::sort(couplings_.begin(), couplings_.end(), [](const Coupling& a, const Coupling& b) { return a.link < b.link; });
  for (const auto& c : couplings_) adjacency_.push_back(c.link);
  if (lipschitz_.a < 0 || lipschitz_.b < 0 || lipschitz_.c < 0 || lipschitz_.h < 0) {
    throw ModelError("Lipschitz bounds must be nonnegative");
  }
}

bool TimeVaryingNetworkedPlant::has_link(Link l) const {
  return std::binary_search(adjacency_.begin(), adjacency_.end(), l);
}

std::vector<int> TimeVaryingNetworkedPlant::state_dims() const {
  std::vector<int> out;
  for (const auto& s : subsystems_) out.push_back(s.dims.n);
  return out;
}

std::vector<int> TimeVaryingNetworkedPlant::input_dims() const {
  std::vector<int> out;
  for (const auto& s : subsystems_) out.push_back(s.dims.m);
  return out;
}

std::vector<int> TimeVaryingNetworkedPlant::output_dims() const {
  std::vector<int> out;
  for (const auto& s : subsystems_) out.push_back(s.dims.r);
  return out;
}

int TimeVaryingNetworkedPlant::total_states() const {
  int t = 0;
  for (const auto& s : subsystems_) t += s.dims.n;
  return t;
}

int TimeVaryingNetworkedPlant::total_inputs() const {
  int t = 0;
  for (const auto& s : subsystems_) t += s.dims.m;
  return t;
}

int TimeVaryingNetworkedPlant::total_outputs() const {
  int t = 0;
  for (const auto& s : subsystems_) t += s.dims.r;
  return t;
}

PlantSnapshot aggregate(const TimeVaryingNetworkedPlant& plant, double t) {
  if (!(t >= 0.0)) throw ModelError("aggregate: time must be nonnegative");
  const auto nd = plant.state_dims();
  const auto md = plant.input_dims();
  const auto rd = plant.output_dims();
  PlantSnapshot s;
  s.t = t;
  s.A = BlockMatrix(nd, nd);
  s.B = BlockMatrix(nd, md);
  s.C = BlockMatrix(rd, nd);
  s.H = BlockMatrix(nd, nd);
  try {
    for (int i = 0; i < plant.size(); ++i) {
      const auto& sub = plant.subsystems()[i];
      s.A.set_block(i, i, sub.A(t));
      s.B.set_block(i, i, sub.B(t));
      s.C.set_block(i, i, sub.C(t));
    }
    for (const auto& c : plant.couplings()) s.H.set_block(c.link.i, c.link.j, c.H(t));
  } catch (const InvalidInputError& e) {
    throw ModelError(std::string("aggregate: ") + e.what());
  }
  s.A_dense = s.A.to_dense();
  s.B_dense = s.B.to_dense();
  s.C_dense = s.C.to_dense();
  s.H_dense = s.H.to_dense();
  return s;
}

void DesignConfig::validate(int n) const {
  auto check_vec = [n](const std::vector<double>& v, const char* name) {
    if (static_cast<int>(v.size()) != n) {
      throw InvalidInputError(std::string("config.") + name + ": expected " + std::to_string(n) + " entries");
    }
    for (double x : v) {
      if (!(x > 0.0) || !std::isfinite(x)) throw InvalidInputError(std::string("config.") + name + ": entries must be positive");
    }
  };
  check_vec(kappa, "kappa");
  check_vec(mu, "mu");
  check_vec(beta, "beta");
  check_vec(epsilon, "epsilon");
  auto check_mat = [n](const MatrixXd& m, const char* name) {
    if (m.rows() != n || m.cols() != n) {
      throw InvalidInputError(std::string("config.") + name + ": expected an " + std::to_string(n) + "x" +
                              std::to_string(n) + " matrix");
    }
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i != j && (!(m(i, j) > 0.0) || !std::isfinite(m(i, j)))) {
          throw InvalidInputError(std::string("config.") + name + ": off-diagonal entries must be positive");
        }
      }
    }
  };
  check_mat(iota, "iota");
  check_mat(omega, "omega");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidInputError("config.gamma must be positive");
  if (!(solver_tol > 0.0) || solver_tol > 1e-3) throw InvalidInputError("config.solverTol must lie in (0, 1e-3]");
  if (max_solver_iters < 1) throw InvalidInputError("config.maxSolverIters must be positive");
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw InvalidInputError("config.T_max must be positive");
  if (!(ode_step >= 0.0) || !std::isfinite(ode_step)) throw InvalidInputError("config.odeStep must be nonnegative");
}

double DesignConfig::min_beta() const { return *std::min_element(beta.begin(), beta.end()); }
double DesignConfig::min_epsilon() const { return *std::min_element(epsilon.begin(), epsilon.end()); }

bool GainScheduleEntry::has_link(Link l) const { return std::binary_search(alpha.begin(), alpha.end(), l); }

MatrixXd GainScheduleEntry::P() const { return Z.matrix().llt().solve(MatrixXd::Identity(Z.order(), Z.order())); }

ClosedLoopMatrices closed_loop_matrices(const PlantSnapshot& snapshot, const GainScheduleEntry& entry) {
  const MatrixXd& A = snapshot.A_dense;
  const MatrixXd& B = snapshot.B_dense;
  const MatrixXd& C = snapshot.C_dense;
  for (const BlockMatrix* g : {&entry.K, &entry.L}) {
    if (g->rows() != B.cols() || g->cols() != A.rows()) {
      throw ModelError("closed_loop_matrices: controller gain dimensions do not match the plant");
    }
  }
  for (const BlockMatrix* g : {&entry.M, &entry.O}) {
    if (g->rows() != A.rows() || g->cols() != C.rows()) {
      throw ModelError("closed_loop_matrices: observer gain dimensions do not match the plant");
    }
  }
  const MatrixXd K = entry.K.to_dense() + entry.L.to_dense();
  const MatrixXd MO = entry.M.to_dense() + entry.O.to_dense();
  ClosedLoopMatrices out;
  out.coupling = B * K;
  out.state = A + snapshot.H_dense + out.coupling;
  out.error = A + snapshot.H_dense + MO * C;
  return out;
}

bool LipschitzCheck::within(const LipschitzBounds& b, double slack) const {
  return max_dA <= b.a + slack && max_dB <= b.b + slack && max_dC <= b.c + slack && max_dH <= b.h + slack &&
         max_ratio_A <= b.a + slack && max_ratio_B <= b.b + slack && max_ratio_C <= b.c + slack &&
         max_ratio_H <= b.h + slack;
}

LipschitzCheck sample_lipschitz(const TimeVaryingNetworkedPlant& plant, double t0, double t1, int samples,
                                unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(t0, t1);
  LipschitzCheck out;
  constexpr double kStep = 1e-5;
  for (int s = 0; s < samples; ++s) {
    const double t = std::max(U(rng), kStep);
    const auto hi = aggregate(plant, t + kStep);
    const auto lo = aggregate(plant, t - kStep);
    const double inv = 1.0 / (2.0 * kStep);
    out.max_dA = std::max(out.max_dA, max_singular_value((hi.A_dense - lo.A_dense) * inv));
    out.max_dB = std::max(out.max_dB, max_singular_value((hi.B_dense - lo.B_dense) * inv));
    out.max_dC = std::max(out.max_dC, max_singular_value((hi.C_dense - lo.C_dense) * inv));
    out.max_dH = std::max(out.max_dH, max_singular_value((hi.H_dense - lo.H_dense) * inv));

    const double ta = U(rng), tb = U(rng);
    if (ta == tb) continue;
    const auto sa = aggregate(plant, ta);
    const auto sb = aggregate(plant, tb);
    const double dt = std::abs(ta - tb);
    out.max_ratio_A = std::max(out.max_ratio_A, max_singular_value(sa.A_dense - sb.A_dense) / dt);
    out.max_ratio_B = std::max(out.max_ratio_B, max_singular_value(sa.B_dense - sb.B_dense) / dt);
    out.max_ratio_C = std::max(out.max_ratio_C, max_singular_value(sa.C_dense - sb.C_dense) / dt);
    out.max_ratio_H = std::max(out.max_ratio_H, max_singular_value(sa.H_dense - sb.H_dense) / dt);
  }
  return out;
}

PendulumExample build_pendulum_example() {
  constexpr int kN = 3;
  const double cart_mass[kN] = {5.0, 3.0, 7.0};
  const double friction[kN] = {4.0, 2.0, 1.0};
  constexpr double m = 1.0, g = 10.0, l = 1.0;
  // k_ij(t) = 1 + 0.5 cos t (springs), b_ij(t) = 1 + 0.5 sin t (dampers).
  const LinkSet links = {{0, 1}, {1, 0}, {1, 2}, {2, 1}};

  std::vector<Subsystem> subs;
  for (int i = 0; i < kN; ++i) {
    const double M = cart_mass[i];
    int neighbours = 0;
    for (const auto& lk : links) neighbours += (lk.i == i);
    const double nb = neighbours;

    ParametricMatrix A(4, 4);
    A.at(0, 1) = ParametricScalar::constant(1.0);
    A.at(1, 0) = ParametricScalar::constant((M + m) * g / (M * l));
    A.at(1, 2) = ParametricScalar::cosine(nb / (M * l), 0.5 * nb / (M * l), 1.0);
    A.at(1, 3) = ParametricScalar::sine((friction[i] + nb) / (M * l), 0.5 * nb / (M * l), 1.0);
    A.at(2, 3) = ParametricScalar::constant(1.0);
    A.at(3, 0) = ParametricScalar::constant(-m * g / M);
    A.at(3, 2) = ParametricScalar::cosine(-nb / M, -0.5 * nb / M, 1.0);
    A.at(3, 3) = ParametricScalar::sine(-(friction[i] + nb) / M, -0.5 * nb / M, 1.0);

    MatrixXd B = MatrixXd::Zero(4, 1);
    B(1, 0) = -1.0 / (M * l);
    B(3, 0) = 1.0 / M;
    MatrixXd C = MatrixXd::Zero(2, 4);
    C(0, 0) = 1.0;
    C(1, 2) = 1.0;
    subs.push_back({{4, 1, 2}, A, ParametricMatrix::constant(B), ParametricMatrix::constant(C)});
  }

  std::vector<Coupling> couplings;
  for (const auto& lk : links) {
    const double M = cart_mass[lk.i];
    ParametricMatrix H(4, 4);
    H.at(1, 2) = ParametricScalar::cosine(-1.0 / (M * l), -0.5 / (M * l), 1.0);
    H.at(1, 3) = ParametricScalar::sine(-1.0 / (M * l), -0.5 / (M * l), 1.0);
    H.at(3, 2) = ParametricScalar::cosine(1.0 / M, 0.5 / M, 1.0);
    H.at(3, 3) = ParametricScalar::sine(1.0 / M, 0.5 / M, 1.0);
    couplings.push_back({lk, H});
  }

  PendulumExample ex;
  ex.plant = TimeVaryingNetworkedPlant(std::move(subs), std::move(couplings), {0.48, 0.0, 0.0, 0.34});
  auto& c = ex.config;
  c.kappa = {280.0, 280.0, 480.0};
  c.mu = {40.0, 40.0, 40.0};
  c.iota = MatrixXd::Constant(kN, kN, 20.0);
  c.omega = MatrixXd::Constant(kN, kN, 10.0);
  c.iota.diagonal().setZero();
  c.omega.diagonal().setZero();
  c.beta = {0.01, 0.01, 0.01};
  c.epsilon = {0.05, 0.05, 0.05};
  c.gamma = 0.2;
  return ex;
}

}  // namespace ncs
