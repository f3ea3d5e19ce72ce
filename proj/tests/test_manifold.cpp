#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "novlab/manifold.hpp"

using namespace novlab;

TEST_CASE("exact T2 critical points: positions and indices") {
  auto m = ModelManifold::t2_exact();
  auto cps = find_zeros(m, 16);
  REQUIRE(cps.size() == 4);
  // lexicographic order: (0,0), (0,pi), (pi,0), (pi,pi)
  CHECK(cps[0].position.isApprox(Eigen::Vector2d(0, 0), 1e-9));
  CHECK(cps[0].index == 2);
  CHECK(torus_dist(cps[1].position, Eigen::Vector2d(0, kPi)) < 1e-9);
  CHECK(cps[1].index == 1);
  CHECK(torus_dist(cps[2].position, Eigen::Vector2d(kPi, 0)) < 1e-9);
  CHECK(cps[2].index == 1);
  CHECK(torus_dist(cps[3].position, Eigen::Vector2d(kPi, kPi)) < 1e-9);
  CHECK(cps[3].index == 0);
  for (const auto& cp : cps) {
    CHECK(m.omega(cp.position).norm() < 1e-10);
    CHECK(cp.local_scale == doctest::Approx(0.5));
  }
}

TEST_CASE("form without zeros yields empty list") {
  Eigen::VectorXd k(2);
  k << 1.0, std::sqrt(2.0);
  ModelManifold m(2, k, {});
  CHECK(find_zeros(m, 12).empty());
  // drifted variant: kappa dominates the perturbation
  CHECK(find_zeros(ModelManifold::t2_novikov(0.3, 0.1), 16).empty());
}

TEST_CASE("tilted T2 model: zeros solve sin(theta1) = kappa/amplitude") {
  auto m = ModelManifold::t2_novikov(0.5, 1.0);
  auto cps = find_zeros(m, 16);
  REQUIRE(cps.size() == 4);
  double a = std::asin(0.5);
  std::vector<double> th1;
  for (const auto& cp : cps) th1.push_back(cp.position[0]);
  CHECK(((std::abs(th1[0] - a) < 1e-9) || (std::abs(th1[0] - (kPi - a)) < 1e-9)));
  for (const auto& cp : cps) {
    bool near_a = std::abs(cp.position[0] - a) < 1e-9;
    bool near_pi_a = std::abs(cp.position[0] - (kPi - a)) < 1e-9;
    CHECK((near_a || near_pi_a));
    bool near0 = std::abs(cp.position[1]) < 1e-9;
    bool nearpi = std::abs(cp.position[1] - kPi) < 1e-9;
    CHECK((near0 || nearpi));
  }
  int counts[3] = {0, 0, 0};
  for (const auto& cp : cps) counts[cp.index]++;
  CHECK(counts[0] == 1);
  CHECK(counts[1] == 2);
  CHECK(counts[2] == 1);
}

TEST_CASE("hessian_index examples and degenerate detection") {
  auto m = ModelManifold::t2_exact();
  auto [i0, h0] = hessian_index(m, Eigen::Vector2d(0, 0));
  CHECK(i0 == 2);
  CHECK(h0.isApprox(-Eigen::Matrix2d::Identity(), 1e-12));
  auto [i1, h1] = hessian_index(m, Eigen::Vector2d(kPi, kPi));
  CHECK(i1 == 0);
  CHECK(h1.isApprox(Eigen::Matrix2d::Identity(), 1e-12));
  CHECK_THROWS_AS(hessian_index(m, Eigen::Vector2d(0.5, 0.5)), Error);

  // F = cos(theta1) on T^2: zero eigenvalue in theta2
  Eigen::VectorXd k = Eigen::VectorXd::Zero(2);
  ModelManifold mdeg(2, k, {TrigTerm{{1, 0}, 1.0, 0.0}});
  CHECK_THROWS_AS(hessian_index(mdeg, Eigen::Vector2d(0, 0)), Error);
  CHECK_THROWS_AS(find_zeros(mdeg, 8), Error);
}

TEST_CASE("h_lift values and deck translation identity") {
  Eigen::VectorXd k(2);
  k << 1.0, std::sqrt(2.0);
  ModelManifold m(2, k, {});
  Eigen::Vector2d zero(0, 0);
  CHECK(m.h_lift(Eigen::Vector2d(kTwoPi, 0)) - m.h_lift(zero) == doctest::Approx(kTwoPi));
  CHECK(m.h_lift(Eigen::Vector2d(kTwoPi, kTwoPi)) - m.h_lift(zero) ==
        doctest::Approx(kTwoPi * (1.0 + std::sqrt(2.0))));

  auto me = ModelManifold::t2_exact();
  CHECK(me.h_lift(Eigen::Vector2d(0, 0)) - me.h_lift(Eigen::Vector2d(kPi, kPi)) ==
        doctest::Approx(4.0));

  // h(x + 2 pi e_i) - h(x) = 2 pi kappa_i at random points, all models
  std::uint64_t rng = 314;
  for (const auto& mm : {ModelManifold::t2_novikov(0.3, 0.1), ModelManifold::t2_novikov(0.1, 0.3),
                         ModelManifold(2, k, {TrigTerm{{1, 1}, 0.7, 0.3}})}) {
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::VectorXd x(2);
      x << 30.0 * (rand_u01(rng) - 0.5), 30.0 * (rand_u01(rng) - 0.5);
      for (int i = 0; i < 2; ++i) {
        Eigen::VectorXd y = x;
        y[i] += kTwoPi;
        CHECK(mm.h_lift(y) - mm.h_lift(x) ==
              doctest::Approx(kTwoPi * mm.kappa()[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("finite-difference gradient of h matches the form") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  std::uint64_t rng = 2718;
  double eps = 1e-6;
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::VectorXd x(2);
    x << kTwoPi * rand_u01(rng), kTwoPi * rand_u01(rng);
    Eigen::VectorXd w = m.omega(x);
    for (int i = 0; i < 2; ++i) {
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += eps;
      xm[i] -= eps;
      double fd = (m.h_lift(xp) - m.h_lift(xm)) / (2 * eps);
      CHECK(std::abs(fd - w[i]) < 1e-6);
    }
  }
}

TEST_CASE("index counts satisfy Euler characteristic zero") {
  auto euler = [](const std::vector<CriticalPoint>& cps, int n) {
    int chi = 0;
    for (const auto& cp : cps) chi += (cp.index % 2 == 0) ? 1 : -1;
    (void)n;
    return chi;
  };
  CHECK(euler(find_zeros(ModelManifold::t1_exact(), 32), 1) == 0);
  CHECK(euler(find_zeros(ModelManifold::t2_exact(), 16), 2) == 0);
  CHECK(euler(find_zeros(ModelManifold::t2_novikov(0.1, 0.3), 16), 2) == 0);
  auto t4 = find_zeros(ModelManifold::t4_product(), 8);
  CHECK(t4.size() == 16);
  int by_index[5] = {0, 0, 0, 0, 0};
  for (const auto& cp : t4) by_index[cp.index]++;
  CHECK(by_index[0] == 1);
  CHECK(by_index[1] == 4);
  CHECK(by_index[2] == 6);
  CHECK(by_index[3] == 4);
  CHECK(by_index[4] == 1);
}

TEST_CASE("novikov section lift lands in the fundamental interval") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  double period = m.lattice().periods[0];
  auto cps = find_zeros(m, 16);
  REQUIRE(cps.size() == 4);
  for (const auto& cp : cps) {
    CHECK(cp.h_section >= 0.0);
    CHECK(cp.h_section < period);
    CHECK(cp.h_section == doctest::Approx(m.h_lift(cp.section_lift)));
    Eigen::VectorXd expect = cp.position;
    for (int i = 0; i < 2; ++i) expect[i] += kTwoPi * cp.section_deck[i];
    CHECK(cp.section_lift.isApprox(expect, 1e-12));
  }
}

TEST_CASE("deck projection carries the action and flips with kappa sign") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  CHECK(m.lattice().rank == 1);
  CHECK(m.lattice().periods[0] == doctest::Approx(kTwoPi * 0.1));
  IVec w = {2, 5};
  CHECK(m.deck_project(w) == IVec{2});
  CHECK(m.deck_action(w) == doctest::Approx(m.lattice().action(m.deck_project(w))));

  Eigen::VectorXd kneg(1);
  kneg << -0.5;
  ModelManifold mn(1, kneg, {});
  IVec w1 = {3};
  CHECK(mn.deck_project(w1) == IVec{-3});
  CHECK(mn.deck_action(w1) == doctest::Approx(-3.0 * kPi));
  CHECK(mn.lattice().action(mn.deck_project(w1)) == doctest::Approx(mn.deck_action(w1)));
}

TEST_CASE("eigenframe ordering and sign normalization") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 16);
  for (const auto& cp : cps) {
    for (int i = 0; i + 1 < cp.eig_values.size(); ++i)
      CHECK(cp.eig_values[i] <= cp.eig_values[i + 1] + 1e-14);
    for (int c = 0; c < cp.eig_vectors.cols(); ++c) {
      double first = 0.0;
      for (int r = 0; r < cp.eig_vectors.rows(); ++r)
        if (std::abs(cp.eig_vectors(r, c)) > 1e-12) {
          first = cp.eig_vectors(r, c);
          break;
        }
      CHECK(first > 0.0);
      CHECK((cp.hessian * cp.eig_vectors.col(c) - cp.eig_values[c] * cp.eig_vectors.col(c))
                .norm() < 1e-10);
    }
  }
}

TEST_CASE("flow field is minus the metric inverse applied to the form") {
  Eigen::MatrixXd g(2, 2);
  g << 2.0, 0.3, 0.3, 1.0;
  Eigen::VectorXd k(2);
  k << 0.1, 0.0;
  ModelManifold m(2, k, {TrigTerm{{1, 0}, 0.3, 0.0}, TrigTerm{{0, 1}, 0.3, 0.0}}, g);
  std::uint64_t rng = 9;
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd x(2);
    x << kTwoPi * rand_u01(rng), kTwoPi * rand_u01(rng);
    CHECK((g * m.flow_field(x) + m.omega(x)).norm() < 1e-12);
    CHECK((g * m.flow_jacobian(x) + m.hess_F(x)).norm() < 1e-12);
  }
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 2.0, 2.0, 1.0;  // indefinite
  CHECK_THROWS_AS(ModelManifold(2, k, {}, bad), Error);
}

TEST_CASE("config hash distinguishes models and grid precondition holds") {
  CHECK(ModelManifold::t2_exact().config_hash() == ModelManifold::t2_exact().config_hash());
  CHECK(ModelManifold::t2_exact().config_hash() != ModelManifold::t2_novikov().config_hash());
  CHECK(ModelManifold::t2_novikov(0.3, 0.1).config_hash() !=
        ModelManifold::t2_novikov(0.1, 0.3).config_hash());
  CHECK_THROWS_AS(find_zeros(ModelManifold::t2_exact(), 7), Error);
}
