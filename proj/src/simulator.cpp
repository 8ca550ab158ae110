#include "ncs/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace ncs {
namespace {

constexpr double kIntervalRelTol = 1e-6;
constexpr double kSwitchAbsTol = 1e-8;

void check_schedule(const TimeVaryingNetworkedPlant& plant, const std::vector<GainScheduleEntry>& schedule) {
  if (schedule.empty()) throw SimulationError("schedule is empty");
  if (schedule.front().t != 0.0) throw SimulationError(fmt::format("schedule starts at t = {}, not 0", schedule.front().t));
  const int nx = plant.total_states();
  const int nu = plant.total_inputs();
  const int ny = plant.total_outputs();
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const auto& g = schedule[k];
    if (!(g.T > 0.0) || !std::isfinite(g.T)) throw SimulationError(fmt::format("interval {} has T = {}", k, g.T));
    if (g.K.rows() != nu || g.K.cols() != nx || g.L.rows() != nu || g.L.cols() != nx || g.M.rows() != nx ||
        g.M.cols() != ny || g.O.rows() != nx || g.O.cols() != ny || g.Z.order() != nx || g.Phat.order() != nx) {
      throw SimulationError(fmt::format("interval {} does not match the plant dimensions", k));
    }
    if (k + 1 < schedule.size()) {
      const double end = g.t + g.T;
      const double next = schedule[k + 1].t;
      if (std::abs(end - next) > 1e-9 * std::max(1.0, std::abs(next))) {
        throw SimulationError(fmt::format("schedule gap between t = {} and t = {}", end, next));
      }
    }
  }
}

struct HeldGains {
  MatrixXd KL, MO, P, Phat;
};

HeldGains held_gains(const GainScheduleEntry& g) {
  return {g.K.to_dense() + g.L.to_dense(), g.M.to_dense() + g.O.to_dense(), g.P(), g.Phat.matrix()};
}

struct Rates {
  MatrixXd state, coupling, error;
};

Rates rates_at(const TimeVaryingNetworkedPlant& plant, const HeldGains& g, double t) {
  const PlantSnapshot s = aggregate(plant, t);
  Rates r;
  const MatrixXd AH = s.A_dense + s.H_dense;
  r.coupling = s.B_dense * g.KL;
  r.state = AH + r.coupling;
  r.error = AH + g.MO * s.C_dense;
  return r;
}

double quad(const MatrixXd& P, const VectorXd& v) { return v.dot(P * v); }

}  // namespace

double default_ode_step(const std::vector<GainScheduleEntry>& schedule) {
  double tmin = std::numeric_limits<double>::infinity();
  for (const auto& g : schedule) tmin = std::min(tmin, g.T);
  return tmin / 20.0;
}

SimulationTrace simulate(const TimeVaryingNetworkedPlant& plant, const std::vector<GainScheduleEntry>& schedule,
                         const VectorXd& x0, const VectorXd& e0, double ode_step) {
  check_schedule(plant, schedule);
  const int nx = plant.total_states();
  if (x0.size() != nx || e0.size() != nx) {
    throw InvalidInputError(fmt::format("initial conditions must have {} entries", nx));
  }
  require_finite(x0, "x0");
  require_finite(e0, "e0");
  const double hmax = default_ode_step(schedule);
  if (ode_step <= 0.0) ode_step = hmax;
  if (ode_step > hmax * (1.0 + 1e-12)) {
    throw InvalidInputError(fmt::format("ODE step {} exceeds min_k T_k / 20 = {}", ode_step, hmax));
  }

  SimulationTrace tr;
  auto push = [&](double t, int k, const VectorXd& x, const VectorXd& e, const VectorXd& xu, const HeldGains& g,
                  bool sw) {
    tr.times.push_back(t);
    tr.interval.push_back(k);
    tr.x.push_back(x);
    tr.e.push_back(e);
    tr.xu.push_back(xu);
    tr.V_state.push_back(quad(g.P, x));
    tr.V_err.push_back(quad(g.Phat, e));
    tr.V_unforced.push_back(quad(g.P, xu));
    tr.is_switch.push_back(sw ? 1 : 0);
    if (sw) tr.switch_markers.push_back(tr.size() - 1);
  };

  VectorXd x = x0, e = e0, xu = x0;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const auto& entry = schedule[k];
    const HeldGains g = held_gains(entry);
    const double t0 = entry.t;
    const double t1 = k + 1 < schedule.size() ? schedule[k + 1].t : entry.t + entry.T;
    const int steps = std::max(1, static_cast<int>(std::ceil((t1 - t0) / ode_step - 1e-9)));
    const double h = (t1 - t0) / steps;
    push(t0, static_cast<int>(k), x, e, xu, g, k > 0);

    Rates r0 = rates_at(plant, g, t0);
    for (int s = 0; s < steps; ++s) {
      const double ta = t0 + s * h;
      const double tb = s + 1 == steps ? t1 : t0 + (s + 1) * h;
      const Rates rm = rates_at(plant, g, 0.5 * (ta + tb));
      const Rates r1 = rates_at(plant, g, tb);
      // The error stages never read x, so e is independent of x0.
      const VectorXd ke1 = r0.error * e;
      const VectorXd e2 = e + 0.5 * h * ke1;
      const VectorXd ke2 = rm.error * e2;
      const VectorXd e3 = e + 0.5 * h * ke2;
      const VectorXd ke3 = rm.error * e3;
      const VectorXd e4 = e + h * ke3;
      const VectorXd ke4 = r1.error * e4;

      const VectorXd kx1 = r0.state * x + r0.coupling * e;
      const VectorXd kx2 = rm.state * (x + 0.5 * h * kx1) + rm.coupling * e2;
      const VectorXd kx3 = rm.state * (x + 0.5 * h * kx2) + rm.coupling * e3;
      const VectorXd kx4 = r1.state * (x + h * kx3) + r1.coupling * e4;

      const VectorXd ku1 = r0.state * xu;
      const VectorXd ku2 = rm.state * (xu + 0.5 * h * ku1);
      const VectorXd ku3 = rm.state * (xu + 0.5 * h * ku2);
      const VectorXd ku4 = r1.state * (xu + h * ku3);

      x += (h / 6.0) * (kx1 + 2.0 * kx2 + 2.0 * kx3 + kx4);
      xu += (h / 6.0) * (ku1 + 2.0 * ku2 + 2.0 * ku3 + ku4);
      e += (h / 6.0) * (ke1 + 2.0 * ke2 + 2.0 * ke3 + ke4);
      if (!x.allFinite() || !e.allFinite() || !xu.allFinite() || x.norm() > kDivergenceThreshold ||
          e.norm() > kDivergenceThreshold || xu.norm() > kDivergenceThreshold) {
        throw DivergenceError(fmt::format("trajectory diverged at t = {:.6g} (interval {})", tb, k), tb);
      }
      push(tb, static_cast<int>(k), x, e, xu, g, false);
      r0 = r1;
    }
  }
  return tr;
}

LyapunovReport monitor_lyapunov(const SimulationTrace& trace, const std::vector<GainScheduleEntry>& schedule,
                                double beta) {
  LyapunovReport rep;
  rep.beta = beta;
  if (trace.size() == 0) return rep;
  auto violate = [&](std::string check, int k, double t, double margin) {
    rep.passed = false;
    rep.violations.push_back({std::move(check), k, t, margin});
  };
  struct Series {
    const char* name;
    const std::vector<double>* V;
    bool interval;
  };
  const Series series[] = {{"state", &trace.V_state, false},
                           {"unforced", &trace.V_unforced, true},
                           {"error", &trace.V_err, true}};

  std::size_t start = 0;
  for (std::size_t row = 0; row < trace.size(); ++row) {
    const int k = trace.interval[row];
    if (k < 0 || static_cast<std::size_t>(k) >= schedule.size()) {
      throw SimulationError(fmt::format("trace row {} refers to interval {} outside the schedule", row, k));
    }
    const double t = trace.times[row];
    if (row > 0 && k != trace.interval[row - 1]) {
      start = row;
      for (const auto& s : series) {
        const double d = (*s.V)[row] - (*s.V)[row - 1];
        rep.worst_switch_increase = std::max(rep.worst_switch_increase, d);
        if (d > kSwitchAbsTol) violate(fmt::format("switch-{}", s.name), k, t, d - kSwitchAbsTol);
      }
      continue;
    }
    const double decay = std::exp(-2.0 * beta * (t - trace.times[start]));
    for (const auto& s : series) {
      const double v = (*s.V)[row];
      const double bound = (*s.V)[start] * decay;
      double& worst = s.interval ? rep.worst_interval_margin : rep.forced_interval_margin;
      if (bound > 0.0) worst = std::max(worst, v / bound - 1.0);
      if (s.interval && v > bound * (1.0 + kIntervalRelTol)) {
        violate(fmt::format("interval-{}", s.name), k, t, v - bound * (1.0 + kIntervalRelTol));
      }
    }
  }
  if (!rep.passed) {
    const auto& v = rep.violations.front();
    spdlog::warn("Lyapunov monitor: {} violations, first {} in interval {} at t = {:.6g} by {:.3g}",
                 rep.violations.size(), v.check, v.k, v.t, v.margin);
  }
  return rep;
}

double Theorem2Report::max_residual() const {
  return std::max({max_residual_7a, max_residual_7b, max_residual_7c, max_residual_7d, max_residual_7e,
                   max_residual_7f});
}

Theorem2Report verify_theorem2(const TimeVaryingNetworkedPlant& plant, const std::vector<GainScheduleEntry>& schedule,
                               const DesignConfig& config, int samples, double tolerance) {
  if (samples < 1) throw InvalidInputError("samples per interval must be positive");
  check_schedule(plant, schedule);
  config.validate(plant.size());
  const auto dims = plant.state_dims();
  const int nx = plant.total_states();
  VectorXd bvec(nx), evec(nx);
  for (int i = 0, off = 0; i < plant.size(); off += dims[i], ++i) {
    bvec.segment(off, dims[i]).setConstant(config.beta[i]);
    evec.segment(off, dims[i]).setConstant(config.epsilon[i]);
  }
  const SymMatrix eps = SymMatrix::diagonal(evec);

  Theorem2Report rep;
  rep.tolerance = tolerance;
  rep.samples_per_interval = samples;
  auto record = [&](double& worst, int k, double t, const char* id, double res) {
    worst = std::max(worst, res);
    if (!(res <= tolerance)) {
      rep.passed = false;
      rep.violations.push_back({k, t, id, res});
    }
  };

  MatrixXd P_prev, Phat_prev;
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const auto& entry = schedule[k];
    const HeldGains g = held_gains(entry);
    // beta o P for block-diagonal P with blockwise constant beta.
    const MatrixXd bP = bvec.asDiagonal() * g.P;
    const MatrixXd bPhat = bvec.asDiagonal() * g.Phat;
    for (int s = 0; s < samples; ++s) {
      const double t = samples == 1 ? entry.t : entry.t + entry.T * s / (samples - 1);
      const Rates r = rates_at(plant, g, t);
      const MatrixXd a = r.state.transpose() * g.P + g.P * r.state + bP + bP.transpose();
      const MatrixXd b = r.error.transpose() * g.Phat + g.Phat * r.error + bPhat + bPhat.transpose();
      const int kk = static_cast<int>(k);
      record(rep.max_residual_7a, kk, t, "7a", max_eig(SymMatrix::symmetrized(a)));
      record(rep.max_residual_7b, kk, t, "7b", max_eig(SymMatrix::symmetrized(b)));
    }
    const int kk = static_cast<int>(k);
    record(rep.max_residual_7c, kk, entry.t, "7c", 0.0 - min_eig(SymMatrix::symmetrized(g.P) - eps));
    record(rep.max_residual_7d, kk, entry.t, "7d", 0.0 - min_eig(SymMatrix::symmetrized(g.Phat) - eps));
    if (k > 0) {
      record(rep.max_residual_7e, kk, entry.t, "7e", 0.0 - min_eig(SymMatrix::symmetrized(P_prev - g.P)));
      record(rep.max_residual_7f, kk, entry.t, "7f", 0.0 - min_eig(SymMatrix::symmetrized(Phat_prev - g.Phat)));
    }
    P_prev = g.P;
    Phat_prev = g.Phat;
  }
  if (schedule.size() < 2) rep.max_residual_7e = rep.max_residual_7f = 0.0;
  if (!rep.passed) {
    const auto& v = rep.violations.front();
    spdlog::warn("decrease conditions: {} violations, first {} in interval {} at t = {:.6g} (residual {:.3g})",
                 rep.violations.size(), v.id, v.k, v.t, v.residual);
  }
  return rep;
}

}  // namespace ncs
