#pragma once

// Compares the auxiliary-scalar norm encoding against the direct
// inequality bound * lambda_min(S) - sigma_max(X) >= 0 on random points.

#include <map>
#include <random>
#include <string>

#include "ncs/designer.hpp"
#include "random_lmi.hpp"

namespace ncs::testing {

struct EncodingTally {
  int comparisons = 0;
  int mismatches = 0;
  int direct_true = 0;
  int direct_false = 0;
};

inline SymMatrix random_spd(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> ev(0.1, 10.0);
  const MatrixXd g = gaussian(rng, n, n);
  const MatrixXd q = Eigen::HouseholderQR<MatrixXd>(g).householderQ();
  VectorXd d(n);
  for (int i = 0; i < n; ++i) d(i) = ev(rng);
  return SymMatrix::symmetrized(q * d.asDiagonal() * q.transpose());
}

/// Random block scaled so that sigma_max equals ratio * bound * lam.
inline MatrixXd scaled_block(std::mt19937_64& rng, int r, int c, double ratio, double bound, double lam) {
  const MatrixXd g = gaussian(rng, r, c);
  return g * (ratio * bound * lam / max_singular_value(g));
}

/// Runs `samples` random points through the full-link k = 0 problem of
/// `plant`. Each point sets every encoded block with a ratio
/// sigma / (bound * lambda_min) drawn away from 1 on either side, and each
/// auxiliary scalar to its most favourable value lambda_min; a few smaller
/// scalar values are tried as well, which may never rescue a violated bound.
inline EncodingTally encoding_equivalence(const TimeVaryingNetworkedPlant& plant, const DesignConfig& config,
                                          int samples, unsigned seed, double slack = 1e-8) {
  DesignIterationInput in;
  in.snapshot = aggregate(plant, 0.0);
  in.alpha = plant.adjacency();
  const Theorem3Problem tp = assemble_theorem3(in, config);
  const LmiProblem& P = tp.problem;
  const int N = plant.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> below(0.2, 0.999), above(1.001, 3.0), frac(0.0, 1.0);
  std::bernoulli_distribution side(0.5);
  EncodingTally tally;

  for (int s = 0; s < samples; ++s) {
    std::vector<SymMatrix> Zb, Pb;
    std::vector<double> zmin, pmin;
    for (int i = 0; i < N; ++i) {
      Zb.push_back(random_spd(rng, tp.n[i]));
      Pb.push_back(random_spd(rng, tp.n[i]));
      zmin.push_back(min_eig(Zb.back()));
      pmin.push_back(min_eig(Pb.back()));
    }
    auto ratio = [&] { return side(rng) ? below(rng) : above(rng); };
    BlockMatrix W(tp.m, tp.n), What(tp.n, tp.r), Y(tp.m, tp.n), Yhat(tp.n, tp.r);
    for (int i = 0; i < N; ++i) {
      W.set_block(i, i, scaled_block(rng, tp.m[i], tp.n[i], ratio(), config.kappa[i], zmin[i]));
      What.set_block(i, i, scaled_block(rng, tp.n[i], tp.r[i], ratio(), config.mu[i], pmin[i]));
    }
    for (const Link& l : tp.alpha) {
      Y.set_block(l.i, l.j, scaled_block(rng, tp.m[l.i], tp.n[l.j], ratio(), config.iota(l.i, l.j), zmin[l.j]));
      Yhat.set_block(l.i, l.j,
                     scaled_block(rng, tp.n[l.i], tp.r[l.j], ratio(), config.omega(l.i, l.j), pmin[l.i]));
    }

    // Direct margins keyed by the norm constraint id, with the id of the
    // matching eigenvalue constraint and auxiliary scalar.
    struct Item {
      double margin;
      std::string lam_id, scalar;
      double lam;
    };
    std::map<std::string, Item> items;
    for (int i = 0; i < N; ++i) {
      const std::string si = std::to_string(i + 1);
      items["39g.norm." + si] = {config.kappa[i] * zmin[i] - max_singular_value(W.block(i, i)), "39g.lam." + si,
                                 "sK." + si, zmin[i]};
      items["39i.norm." + si] = {config.mu[i] * pmin[i] - max_singular_value(What.block(i, i)), "39i.lam." + si,
                                 "sM." + si, pmin[i]};
    }
    for (const Link& l : tp.alpha) {
      const std::string ij = std::to_string(l.i + 1) + "." + std::to_string(l.j + 1);
      items["39h.norm." + ij] = {config.iota(l.i, l.j) * zmin[l.j] - max_singular_value(Y.block(l.i, l.j)),
                                 "39h.lam." + std::to_string(l.j + 1), "sL." + std::to_string(l.j + 1), zmin[l.j]};
      items["39j.norm." + ij] = {config.omega(l.i, l.j) * pmin[l.i] - max_singular_value(Yhat.block(l.i, l.j)),
                                 "39j.lam." + std::to_string(l.i + 1), "sO." + std::to_string(l.i + 1), pmin[l.i]};
    }

    Assignment a = P.zero_assignment();
    a[tp.Z] = SymMatrix::block_diagonal(Zb).matrix();
    a[tp.Phat] = SymMatrix::block_diagonal(Pb).matrix();
    a[tp.W] = W.to_dense();
    a[tp.What] = What.to_dense();
    if (tp.Y >= 0) a[tp.Y] = Y.to_dense();
    if (tp.Yhat >= 0) a[tp.Yhat] = Yhat.to_dense();

    // Scalar scale 1 is the optimal choice; smaller ones only tighten the
    // norm block, so a violated bound must stay violated.
    for (const double scale : {1.0, frac(rng), frac(rng)}) {
      for (const auto& [id, it] : items) {
        a[*P.find_variable(it.scalar)](0, 0) = scale * it.lam;
      }
      std::map<std::string, double> res;
      for (const auto& r : check_solution(P, a)) res[r.id] = r.residual;
      for (const auto& [id, it] : items) {
        const bool direct = it.margin >= -slack;
        const bool encoded = res.at(id) <= slack && res.at(it.lam_id) <= slack;
        ++tally.comparisons;
        if (scale == 1.0) {
          (direct ? tally.direct_true : tally.direct_false) += 1;
          if (direct != encoded) ++tally.mismatches;
        } else if (!direct && encoded) {
          ++tally.mismatches;
        }
      }
    }
  }
  return tally;
}

}  // namespace ncs::testing
