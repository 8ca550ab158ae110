#include <doctest.h>

#include <cmath>
#include <random>

#include "ncs/model.hpp"

using namespace ncs;

namespace {

Subsystem constant_subsystem(const MatrixXd& A, const MatrixXd& B, const MatrixXd& C) {
  return {{static_cast<int>(A.rows()), static_cast<int>(B.cols()), static_cast<int>(C.rows())},
          ParametricMatrix::constant(A), ParametricMatrix::constant(B), ParametricMatrix::constant(C)};
}

MatrixXd scalar(double v) { return MatrixXd::Constant(1, 1, v); }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("parametric scalars") {
    const auto c = ParametricScalar::cosine(1.0, 0.5, 2.0);
    CHECK(c.value(0.0) == doctest::Approx(1.5));
    CHECK(c.derivative(0.25) == doctest::Approx(-0.5 * 2.0 * std::sin(0.5)));
    const auto s = ParametricScalar::sine(1.0, 0.5, 1.0);
    CHECK(s.value(0.0) == doctest::Approx(1.0));
    CHECK(s.derivative(0.0) == doctest::Approx(0.5));
    CHECK(ParametricScalar::constant(3.0).derivative(1.0) == 0.0);
    CHECK(ParametricScalar::constant(0.0).is_zero());
    CHECK_FALSE(ParametricScalar::sine(0.0, 1.0, 1.0).is_zero());
  }

  TEST_CASE("matrix functions check their shape") {
    const MatrixFunction bad(2, 2, [](double) { return MatrixXd::Zero(3, 2); });
    CHECK_THROWS_AS(bad(0.0), ModelError);
    const MatrixFunction good(2, 2, [](double t) { return MatrixXd::Identity(2, 2) * t; });
    CHECK(good(2.0)(1, 1) == 2.0);
  }

  TEST_CASE("plant construction is validated") {
    const auto s = constant_subsystem(scalar(-1), scalar(1), scalar(1));
    CHECK_THROWS_AS(TimeVaryingNetworkedPlant({}, {}, {}), ModelError);
    CHECK_THROWS_AS(TimeVaryingNetworkedPlant({s, s}, {{{0, 0}, ParametricMatrix::constant(scalar(1))}}, {}),
                    ModelError);
    CHECK_THROWS_AS(TimeVaryingNetworkedPlant({s, s},
                                              {{{0, 1}, ParametricMatrix::constant(scalar(1))},
                                               {{0, 1}, ParametricMatrix::constant(scalar(2))}},
                                              {}),
                    ModelError);
    CHECK_THROWS_AS(TimeVaryingNetworkedPlant({s, s}, {{{0, 1}, ParametricMatrix::constant(MatrixXd::Zero(2, 1))}}, {}),
                    ModelError);
    Subsystem wrong = s;
    wrong.B = ParametricMatrix::constant(MatrixXd::Zero(2, 1));
    CHECK_THROWS_AS(TimeVaryingNetworkedPlant({wrong}, {}, {}), ModelError);
    CHECK_THROWS_AS(TimeVaryingNetworkedPlant({s}, {}, {-1.0, 0.0, 0.0, 0.0}), ModelError);
  }

  TEST_CASE("single subsystem has no coupling") {
    const TimeVaryingNetworkedPlant p({constant_subsystem(MatrixXd::Identity(3, 3), MatrixXd::Ones(3, 1),
                                                          MatrixXd::Ones(1, 3))},
                                      {}, {});
    const auto s = aggregate(p, 0.0);
    CHECK(s.H_dense.rows() == 3);
    CHECK(s.H_dense.cols() == 3);
    CHECK(s.H_dense.isZero());
    CHECK(s.H.blocks().empty());
  }

  TEST_CASE("decoupled plant has zero H everywhere") {
    const auto s = constant_subsystem(scalar(-1), scalar(1), scalar(1));
    const TimeVaryingNetworkedPlant p({s, s}, {}, {});
    CHECK(p.adjacency().empty());
    for (double t : {0.0, 0.7, 3.0, 11.0}) CHECK(aggregate(p, t).H_dense.isZero());
  }

  TEST_CASE("pendulum example matches the stated parameters") {
    const auto ex = build_pendulum_example();
    const auto& p = ex.plant;
    CHECK(p.size() == 3);
    CHECK(p.total_states() == 12);
    CHECK(p.total_inputs() == 3);
    CHECK(p.total_outputs() == 6);
    const LinkSet expected = {{0, 1}, {1, 0}, {1, 2}, {2, 1}};
    CHECK(p.adjacency() == expected);
    for (const auto& l : p.adjacency()) CHECK(p.has_link({l.j, l.i}));

    const auto s = aggregate(p, 0.0);
    CHECK(s.A.block(0, 0)(1, 0) == doctest::Approx(12.0));
    CHECK(s.H.blocks().size() == 4);
    for (const auto& l : expected) CHECK(s.H.has_block(l.i, l.j));
    for (int i = 0; i < 3; ++i) CHECK_FALSE(s.H.has_block(i, i));
    // Spring and damper terms of H_12 at t = 0: k(0)/M_1 and b(0)/M_1.
    CHECK(s.H.block(0, 1)(3, 2) == doctest::Approx(1.5 / 5.0));
    CHECK(s.H.block(0, 1)(3, 3) == doctest::Approx(1.0 / 5.0));
    CHECK(s.H.block(1, 0)(3, 2) == doctest::Approx(1.5 / 3.0));

    const auto& c = ex.config;
    CHECK(c.kappa == std::vector<double>{280, 280, 480});
    CHECK(c.mu == std::vector<double>{40, 40, 40});
    CHECK(c.iota(0, 1) == 20.0);
    CHECK(c.omega(2, 1) == 10.0);
    CHECK(c.gamma == 0.2);
    CHECK(c.beta == std::vector<double>{0.01, 0.01, 0.01});
    CHECK(c.epsilon == std::vector<double>{0.05, 0.05, 0.05});
    CHECK(p.lipschitz().a == 0.48);
    CHECK(p.lipschitz().h == 0.34);
    CHECK_NOTHROW(c.validate(3));
  }

  TEST_CASE("pendulum Lipschitz bounds hold under sampling") {
    const auto ex = build_pendulum_example();
    const auto chk = sample_lipschitz(ex.plant, 0.0, 10.0 * M_PI, 1000, 11);
    CHECK(chk.max_dH <= 0.34 + 1e-6);
    CHECK(chk.max_ratio_H <= 0.34 + 1e-6);
    CHECK(chk.max_dA <= 0.48 + 1e-6);
    CHECK(chk.max_ratio_A <= 0.48 + 1e-6);
    CHECK(chk.within(ex.plant.lipschitz()));
  }

  TEST_CASE("aggregation is blockwise linear") {
    const auto ex = build_pendulum_example();
    std::vector<Subsystem> subs = ex.plant.subsystems();
    const auto base = aggregate(ex.plant, 1.3);
    const ParametricMatrix* a1 = subs[1].A.parametric();
    REQUIRE(a1 != nullptr);
    subs[1].A = a1->scaled(2.0);
    std::vector<Coupling> cpl = ex.plant.couplings();
    const TimeVaryingNetworkedPlant scaled(subs, cpl, ex.plant.lipschitz());
    const auto s = aggregate(scaled, 1.3);
    const MatrixXd diff = s.A_dense - base.A_dense;
    CHECK((diff.block(4, 4, 4, 4) - base.A_dense.block(4, 4, 4, 4)).norm() <= 1e-14);
    CHECK(diff.block(0, 0, 4, 4).isZero());
    CHECK(diff.block(8, 8, 4, 4).isZero());
  }

  TEST_CASE("closed-loop matrices") {
    const TimeVaryingNetworkedPlant p({constant_subsystem(scalar(-1), scalar(1), scalar(1))}, {}, {});
    const auto s = aggregate(p, 0.0);
    GainScheduleEntry g;
    g.K = BlockMatrix::block_diagonal({scalar(-2)});
    g.L = BlockMatrix({1}, {1});
    g.M = BlockMatrix::block_diagonal({scalar(-1)});
    g.O = BlockMatrix({1}, {1});
    const auto cl = closed_loop_matrices(s, g);
    CHECK(cl.state(0, 0) == doctest::Approx(-3.0));
    CHECK(cl.coupling(0, 0) == doctest::Approx(-2.0));
    CHECK(cl.error(0, 0) == doctest::Approx(-2.0));

    GainScheduleEntry zero;
    zero.K = BlockMatrix({1}, {1});
    zero.L = BlockMatrix({1}, {1});
    zero.M = BlockMatrix({1}, {1});
    zero.O = BlockMatrix({1}, {1});
    CHECK(closed_loop_matrices(s, zero).state(0, 0) == doctest::Approx(-1.0));

    GainScheduleEntry bad = zero;
    bad.K = BlockMatrix({2}, {1});
    CHECK_THROWS_AS(closed_loop_matrices(s, bad), ModelError);
  }

  TEST_CASE("config validation") {
    auto c = build_pendulum_example().config;
    CHECK_THROWS_AS(c.validate(2), InvalidInputError);
    auto bad = c;
    bad.beta[0] = 0.0;
    CHECK_THROWS_AS(bad.validate(3), InvalidInputError);
    bad = c;
    bad.solver_tol = 1e-2;
    CHECK_THROWS_AS(bad.validate(3), InvalidInputError);
    bad = c;
    bad.iota(0, 1) = -1.0;
    CHECK_THROWS_AS(bad.validate(3), InvalidInputError);
    CHECK(c.min_beta() == 0.01);
    CHECK(c.min_epsilon() == 0.05);
  }
}
