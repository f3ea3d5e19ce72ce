#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "novlab/ncomplex.hpp"

using namespace novlab;

namespace {

FlowOptions fast_opts() {
  FlowOptions o;
  o.threads = 4;
  return o;
}

NovikovComplex corrected_complex() {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  auto counts = build_incidence_table(m, cps, 3 * kTwoPi * 0.1, 16, fast_opts());
  return assemble(counts.table, m, cps);
}

}  // namespace

TEST_CASE("no zeros gives the empty complex") {
  auto m = ModelManifold::t2_novikov(0.3, 0.1);  // 0.3 > 0.1: the form never vanishes
  auto cps = find_zeros(m, 24);
  REQUIRE(cps.empty());
  IncidenceTable empty_table;
  auto c = assemble(empty_table, m, cps);
  CHECK(c.generators.size() == 3);
  for (const auto& g : c.generators) CHECK(g.empty());
  for (const auto& b : c.boundary) CHECK(b.rows * b.cols == 0);

  auto rep = verify_d_squared(c);
  CHECK(rep.max_violation == 0.0);
  auto ranks = homology_ranks(specialize(c, Complex{2.0, 0.0}));
  CHECK(ranks.betti == std::vector<int>{0, 0, 0});
}

TEST_CASE("circle exact model: 1x1 zero boundary from cancelling signs") {
  auto m = ModelManifold::t1_exact();
  auto cps = find_zeros(m, 32);
  auto counts = build_incidence_table(m, cps, 5.0, 2, fast_opts());
  auto c = assemble(counts.table, m, cps);

  REQUIRE(c.generators.size() == 2);
  CHECK(c.generators[0] == std::vector<int>{1});
  CHECK(c.generators[1] == std::vector<int>{0});
  REQUIRE(c.boundary.size() == 1);
  CHECK(c.boundary[0].rows == 1);
  CHECK(c.boundary[0].cols == 1);
  CHECK(c.lattice.rank == 0);
  CHECK(c.boundary[0].at(0, 0).is_zero());

  verify_d_squared(c);
  auto ranks = homology_ranks(specialize(c, Complex{0.0, 0.0}));
  CHECK(ranks.betti == std::vector<int>{1, 1});
}

TEST_CASE("torus exact model: zero boundaries and betti (1,2,1)") {
  auto m = ModelManifold::t2_exact();
  auto cps = find_zeros(m, 16);
  auto counts = build_incidence_table(m, cps, 5.0, 16, fast_opts());
  auto c = assemble(counts.table, m, cps);

  REQUIRE(c.boundary.size() == 2);
  for (const auto& mat : c.boundary)
    for (const auto& e : mat.data) CHECK(e.is_zero());

  auto rep = verify_d_squared(c);
  CHECK(rep.compositions == 1);
  for (Complex s : {Complex{0, 0}, Complex{2, 0}, Complex{1, 1}}) {
    auto ranks = homology_ranks(specialize(c, s));
    CHECK(ranks.betti == std::vector<int>{1, 2, 1});
    CHECK(ranks.warnings.empty());
  }

  // Euler characteristic of the generator counts vanishes on torus models
  int euler = 0;
  for (size_t q = 0; q < c.generators.size(); ++q)
    euler += (q % 2 ? -1 : 1) * static_cast<int>(c.generators[q].size());
  CHECK(euler == 0);
}

TEST_CASE("corrected irrational-class model: quotient entries collapse to t - t^2") {
  auto c = corrected_complex();
  REQUIRE(c.lattice.rank == 1);
  CHECK(c.lattice.periods[0] == doctest::Approx(kTwoPi * 0.1).epsilon(1e-12));

  // generators: q0 = {3}, q1 = {1,2}, q2 = {0}
  CHECK(c.generators[0] == std::vector<int>{3});
  CHECK(c.generators[1] == std::vector<int>{1, 2});
  CHECK(c.generators[2] == std::vector<int>{0});

  // the two theta2-symmetric trajectories cancel inside one deck class
  const RingElement& i13 = c.boundary[0].at(0, 0);
  const RingElement& i23 = c.boundary[0].at(1, 0);
  const RingElement& i01 = c.boundary[1].at(0, 0);
  const RingElement& i02 = c.boundary[1].at(0, 1);
  CHECK(i23.is_zero());
  CHECK(i01.is_zero());
  for (const RingElement* e : {&i13, &i02}) {
    REQUIRE(e->support.size() == 2);
    CHECK(e->coeff({1}) == Rational(1));
    CHECK(e->coeff({2}) == Rational(-1));
  }

  // propagated per-entry bound is R - (h_sigma(x) - h_sigma(y))
  double R = 3 * kTwoPi * 0.1;
  CHECK(i13.action_bound == doctest::Approx(R - c.h_diff[0](0, 0)).epsilon(1e-12));
  CHECK(c.h_diff[0](0, 0) == doctest::Approx(-0.30882499).epsilon(1e-6));

  auto rep = verify_d_squared(c);
  CHECK(rep.max_violation == 0.0);
  CHECK(rep.honest_bound > R);
}

TEST_CASE("corrected model: specialization closed form and conjugation") {
  auto c = corrected_complex();
  double p = kTwoPi * 0.1;
  for (Complex s : {Complex{2, 0}, Complex{1.3, 0.8}}) {
    auto sc = specialize(c, s);
    Complex u = std::exp(-s * p);
    Complex expect = std::exp(-s * c.h_diff[0](0, 0)) * (u - u * u);
    CHECK(std::abs(sc.matrices[0](0, 0) - expect) < 1e-12);
    CHECK(std::abs(sc.matrices[0](1, 0)) == 0.0);
    CHECK(std::abs(sc.matrices[1](0, 0)) == 0.0);

    // conjugate parameter gives conjugate matrices (real counts)
    auto scbar = specialize(c, std::conj(s));
    CHECK(std::abs(std::conj(scbar.matrices[0](0, 0)) - sc.matrices[0](0, 0)) < 1e-14);

    // evaluation is a ring homomorphism, so the specialized composition vanishes
    Eigen::MatrixXcd prod = sc.matrices[1] * sc.matrices[0];
    CHECK(prod.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("corrected model: betti (0,0,0) stable across s, (1,2,1) at s=0") {
  auto c = corrected_complex();
  for (double re : {1.5, 2.0, 2.5, 3.0, 4.0}) {
    auto ranks = homology_ranks(specialize(c, Complex{re, 0.0}));
    CHECK(ranks.betti == std::vector<int>{0, 0, 0});
  }
  // s=0 sums the integer counts: 1 - 1 = 0, so the boundary degenerates
  auto ranks0 = homology_ranks(specialize(c, Complex{0.0, 0.0}));
  CHECK(ranks0.betti == std::vector<int>{1, 2, 1});
}

TEST_CASE("specialize warns at or below the declared rho estimate") {
  auto c = corrected_complex();
  CHECK(specialize(c, Complex{2.0, 0.0}, 0.1).warnings.empty());
  CHECK(specialize(c, Complex{0.05, 0.0}, 0.1).warnings.size() == 1);
}

TEST_CASE("assemble rejects a pair slice") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  auto slice = count_connecting_orbits(m, cps, 1, 3, 1.0, 16, fast_opts());
  CHECK_THROWS_AS(assemble(slice, m, cps), Error);
}

TEST_CASE("verify_d_squared catches a planted violation with a witness") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  auto counts = build_incidence_table(m, cps, 3 * kTwoPi * 0.1, 16, fast_opts());
  auto c = assemble(counts.table, m, cps);
  // plant: make the composition (max -> s1 -> min) nonzero
  c.boundary[1].at(0, 0).set({0}, Rational(1));
  try {
    verify_d_squared(c);
    FAIL("expected a d^2 violation");
  } catch (const Error& e) {
    CHECK(e.kind == ErrKind::numeric);
    CHECK(std::string(e.what()).find("gamma") != std::string::npos);
    CHECK(std::string(e.what()).find("x id 0") != std::string::npos);
    CHECK(std::string(e.what()).find("z id 3") != std::string::npos);
  }
}

TEST_CASE("rank threshold warnings fire near the cutoff") {
  SpecializedComplex sc;
  sc.s = Complex{0, 0};
  sc.generators = {{0, 1}, {2, 3}};
  Eigen::MatrixXcd m1(2, 2);

  m1 << 1.0, 0.0, 0.0, 3e-8;  // just above threshold 1e-8: counted, warned
  sc.matrices = {m1};
  auto r1 = homology_ranks(sc);
  CHECK(r1.betti == std::vector<int>{0, 0});
  CHECK(r1.warnings.size() == 1);

  m1(1, 1) = 3e-9;  // just below: dropped, still warned
  sc.matrices = {m1};
  auto r2 = homology_ranks(sc);
  CHECK(r2.betti == std::vector<int>{1, 1});
  CHECK(r2.warnings.size() == 1);

  m1(1, 1) = 1e-13;  // far below: dropped silently
  sc.matrices = {m1};
  auto r3 = homology_ranks(sc);
  CHECK(r3.betti == std::vector<int>{1, 1});
  CHECK(r3.warnings.empty());
}
