#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <tuple>

#include "novlab/flow.hpp"

using namespace novlab;

namespace {

FlowOptions fast_opts() {
  FlowOptions o;
  o.threads = 4;
  return o;
}

// Table lookup that fails loudly instead of inserting.
std::pair<long long, double> entry(const IncidenceTable& t, int x, int y, IVec w) {
  auto it = t.entries.find({x, y, std::move(w)});
  REQUIRE(it != t.entries.end());
  return it->second;
}

}  // namespace

TEST_CASE("circle exact model: two unstable shots land on the two lifts of the minimum") {
  auto m = ModelManifold::t1_exact();
  auto cps = find_zeros(m, 32);  // id 0 = max at 0, id 1 = min at pi
  REQUIRE(cps.size() == 2);
  REQUIRE(cps[0].index == 1);
  REQUIRE(cps[1].index == 0);

  auto shots = shoot_unstable(m, cps, 0, 2, 10.0, fast_opts());
  REQUIRE(shots.size() == 2);
  for (const auto& s : shots) {
    REQUIRE(s.status == ShotStatus::captured);
    CHECK(s.target_cp == 1);
    CHECK(s.h_drop == doctest::Approx(2.0).epsilon(1e-3));
  }
  // +theta shot stays in the fundamental lift, -theta shot ends one deck down
  CHECK(shots[0].winding == IVec{0});
  CHECK(shots[1].winding == IVec{-1});
  CHECK(shots[0].terminal[0] == doctest::Approx(kPi).epsilon(1e-2));
  CHECK(shots[1].terminal[0] == doctest::Approx(-kPi).epsilon(1e-2));
}

TEST_CASE("circle exact model: incidence signs +1 / -1 on the two windings") {
  auto m = ModelManifold::t1_exact();
  auto cps = find_zeros(m, 32);
  auto table = count_connecting_orbits(m, cps, 0, 1, 5.0, 2, fast_opts());
  REQUIRE(table.entries.size() == 2);
  auto e0 = entry(table, 0, 1, {0});
  auto e1 = entry(table, 0, 1, {-1});
  CHECK(e0.first == 1);
  CHECK(e1.first == -1);
  CHECK(e0.second == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(e1.second == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("circle exact model: h exhaustion reports the partial drop") {
  auto m = ModelManifold::t1_exact();
  auto cps = find_zeros(m, 32);
  auto shots = shoot_unstable(m, cps, 0, 2, 1.0, fast_opts());
  for (const auto& s : shots) {
    REQUIRE(s.status == ShotStatus::h_exhausted);
    CHECK(s.h_drop >= 1.0);
    CHECK(s.h_drop <= 1.5);
  }
}

TEST_CASE("shooting from a minimum is rejected") {
  auto m = ModelManifold::t1_exact();
  auto cps = find_zeros(m, 32);
  CHECK_THROWS_AS(shoot_unstable(m, cps, 1, 2, 1.0), Error);
}

TEST_CASE("torus exact model: saddle-to-minimum shots split across the deck") {
  auto m = ModelManifold::t2_exact();
  auto cps = find_zeros(m, 16);  // ids: 0=(0,0) max, 1=(0,pi), 2=(pi,0), 3=(pi,pi) min
  REQUIRE(cps.size() == 4);
  REQUIRE(cps[1].index == 1);

  auto shots = shoot_unstable(m, cps, 1, 2, 10.0, fast_opts());
  REQUIRE(shots.size() == 2);
  std::map<IVec, int> seen;
  for (const auto& s : shots) {
    REQUIRE(s.status == ShotStatus::captured);
    CHECK(s.target_cp == 3);
    seen[s.winding]++;
  }
  CHECK(seen.count(IVec{0, 0}) == 1);
  CHECK(seen.count(IVec{-1, 0}) == 1);
}

TEST_CASE("torus exact model: full table has cancelling pairs for every adjacent pair") {
  auto m = ModelManifold::t2_exact();
  auto cps = find_zeros(m, 16);
  auto result = build_incidence_table(m, cps, 5.0, 16, fast_opts());
  const auto& t = result.table;

  REQUIRE(t.entries.size() == 8);
  // max -> saddles: separatrices along the two axes, one deck step apart
  auto a0 = entry(t, 0, 1, {0, 0}), a1 = entry(t, 0, 1, {0, -1});
  auto b0 = entry(t, 0, 2, {0, 0}), b1 = entry(t, 0, 2, {-1, 0});
  // saddles -> min
  auto c0 = entry(t, 1, 3, {0, 0}), c1 = entry(t, 1, 3, {-1, 0});
  auto d0 = entry(t, 2, 3, {0, 0}), d1 = entry(t, 2, 3, {0, -1});

  for (auto& e : {a0, a1, b0, b1, c0, c1, d0, d1}) {
    CHECK(std::abs(e.first) == 1);
    CHECK(e.second == doctest::Approx(2.0).epsilon(1e-6));
  }
  CHECK(a0.first + a1.first == 0);
  CHECK(b0.first + b1.first == 0);
  CHECK(c0.first + c1.first == 0);
  CHECK(d0.first + d1.first == 0);

  // every recorded trajectory joins adjacent-index points and strictly descends
  for (const auto& traj : result.trajectories) {
    CHECK(cps[traj.start.cp].index == cps[traj.end.cp].index + 1);
    CHECK(traj.action > 0);
    CHECK(traj.action == doctest::Approx(traj.start.h_value - traj.end.h_value).epsilon(1e-9));
    for (size_t i = 0; i + 1 < traj.samples.size(); ++i)
      CHECK(m.h_lift(traj.samples[i + 1]) <= m.h_lift(traj.samples[i]) + 1e-8);
  }
  CHECK(result.trajectories.size() == 8);
}

TEST_CASE("irrational-class corrected model: frozen 8-entry table") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  // ids: 0=(asin(1/3),0) max, 1=(asin(1/3),pi), 2=(pi-asin(1/3),0), 3=(pi-asin(1/3),pi) min
  REQUIRE(cps.size() == 4);
  REQUIRE(cps[0].index == 2);
  REQUIRE(cps[3].index == 0);

  double period = kTwoPi * 0.1;
  double R = 3 * period;
  auto result = build_incidence_table(m, cps, R, 16, fast_opts());
  const auto& t = result.table;
  REQUIRE(t.entries.size() == 8);

  const double th = std::asin(1.0 / 3.0);
  const double short_action = 0.6 * std::cos(th) - 0.1 * (kPi - 2 * th);  // 0.31949...

  // max -> saddle over theta2 (kappa_2 = 0, so both windings share the action)
  CHECK(entry(t, 0, 1, {0, 0}).first == -1);
  CHECK(entry(t, 0, 1, {0, -1}).first == 1);
  CHECK(entry(t, 0, 1, {0, 0}).second == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(entry(t, 0, 1, {0, -1}).second == doctest::Approx(0.6).epsilon(1e-6));
  // max -> saddle over theta1: deck step costs one period
  CHECK(entry(t, 0, 2, {0, 0}).first == 1);
  CHECK(entry(t, 0, 2, {-1, 0}).first == -1);
  CHECK(entry(t, 0, 2, {0, 0}).second == doctest::Approx(short_action).epsilon(1e-6));
  CHECK(entry(t, 0, 2, {-1, 0}).second ==
        doctest::Approx(short_action + period).epsilon(1e-6));
  // saddles -> min
  CHECK(entry(t, 1, 3, {0, 0}).first == 1);
  CHECK(entry(t, 1, 3, {-1, 0}).first == -1);
  CHECK(entry(t, 1, 3, {0, 0}).second == doctest::Approx(short_action).epsilon(1e-6));
  CHECK(entry(t, 1, 3, {-1, 0}).second ==
        doctest::Approx(short_action + period).epsilon(1e-6));
  CHECK(entry(t, 2, 3, {0, 0}).first == 1);
  CHECK(entry(t, 2, 3, {0, -1}).first == -1);
  CHECK(entry(t, 2, 3, {0, 0}).second == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(entry(t, 2, 3, {0, -1}).second == doctest::Approx(0.6).epsilon(1e-6));

  // deck equivariance in the output: consecutive windings differ by the period
  double gap = entry(t, 1, 3, {-1, 0}).second - entry(t, 1, 3, {0, 0}).second;
  CHECK(gap == doctest::Approx(period).epsilon(1e-9));

  // winding composition cancels: sum over saddles of I(max,s,w')I(s,min,w'')
  // with w'+w''=w vanishes for each total winding w
  for (IVec w : {IVec{0, 0}, IVec{0, -1}, IVec{-1, 0}, IVec{-1, -1}}) {
    long long total = 0;
    for (int s : {1, 2})
      for (const auto& [key, val] : t.entries) {
        auto [x, y, w1] = key;
        if (x != 0 || y != s) continue;
        IVec w2{w[0] - w1[0], w[1] - w1[1]};
        auto it = t.entries.find({s, 3, w2});
        if (it != t.entries.end()) total += val.first * it->second.first;
      }
    CHECK(total == 0);
  }
}

TEST_CASE("pair slice matches the relevant rows of the full count") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  auto slice = count_connecting_orbits(m, cps, 1, 3, 1.0, 16, fast_opts());
  REQUIRE(slice.entries.size() == 2);
  CHECK(entry(slice, 1, 3, {0, 0}).first == 1);
  CHECK(entry(slice, 1, 3, {-1, 0}).first == -1);
  CHECK_THROWS_AS(count_connecting_orbits(m, cps, 0, 3, 1.0, 16, fast_opts()), Error);
}

TEST_CASE("action bound truncates the table") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  const double th = std::asin(1.0 / 3.0);
  const double short_action = 0.6 * std::cos(th) - 0.1 * (kPi - 2 * th);
  // bound between the short and long saddle->min actions keeps only one winding
  auto slice = count_connecting_orbits(m, cps, 1, 3, short_action + 0.1, 16, fast_opts());
  REQUIRE(slice.entries.size() == 1);
  CHECK(entry(slice, 1, 3, {0, 0}).first == 1);
}

TEST_CASE("counting rejects unstable dimension above two") {
  auto m = ModelManifold::t4_product();
  auto cps = find_zeros(m, 8);
  REQUIRE(cps.size() == 16);
  CHECK_THROWS_AS(build_incidence_table(m, cps, 3.0, 8, fast_opts()), Error);
}

TEST_CASE("rho estimate: circle exact model recovers the circle length") {
  auto m = ModelManifold::t1_exact();
  auto cps = find_zeros(m, 32);
  std::vector<double> a{0.0, 0.5};
  std::vector<double> d{1.0, 2.0, 3.0, 4.0, 4.4, 4.8, 5.2};
  auto rep = estimate_rho(m, cps, 0, a, d, 2, fast_opts());

  REQUIRE(rep.integrals.rows() == 2);
  REQUIRE(rep.integrals.cols() == 7);
  // at a=0 the exhausted integral is the total length of the unstable manifold
  CHECK(rep.integrals(0, 6) == doctest::Approx(kTwoPi).epsilon(0.01));
  // exhaustion is monotone in the radius and dominated by the a=0 value
  for (int ai = 0; ai < 2; ++ai)
    for (int b = 0; b + 1 < 7; ++b) {
      CHECK(rep.integrals(ai, b) <= rep.integrals(ai, b + 1) + 1e-12);
      CHECK(rep.integrals(ai, b) <= rep.integrals(0, 6) * 1.001);
    }
  CHECK(rep.stabilized[0] == 1);
  CHECK(rep.stabilized[1] == 1);
  CHECK(rep.rho_hat == 0.0);
}

TEST_CASE("rho estimate: torus exact model saturates at the torus volume") {
  auto m = ModelManifold::t2_exact();
  auto cps = find_zeros(m, 16);
  std::vector<double> a{0.0, 0.5};
  std::vector<double> d{1.0, 2.0, 3.0, 4.0, 4.4, 4.8, 5.2};
  auto rep = estimate_rho(m, cps, 0, a, d, 128, fast_opts());

  double vol = kTwoPi * kTwoPi;
  CHECK(rep.integrals(0, 6) <= vol * 1.02);
  CHECK(rep.integrals(0, 6) >= vol * 0.80);
  for (int ai = 0; ai < 2; ++ai)
    for (int b = 0; b < 7; ++b) CHECK(rep.integrals(ai, b) <= vol * 1.02);
  CHECK(rep.rho_hat == 0.0);
}

TEST_CASE("rho estimate: corrected irrational-class model stabilizes at every a") {
  auto m = ModelManifold::t2_novikov(0.1, 0.3);
  auto cps = find_zeros(m, 24);
  std::vector<double> a{0.0, 0.1, 0.5};
  std::vector<double> d{0.5, 0.8, 1.1, 1.4, 1.7, 2.0, 2.3};
  auto rep = estimate_rho(m, cps, 0, a, d, 64, fast_opts());
  for (size_t i = 0; i < a.size(); ++i) CHECK(rep.stabilized[i] == 1);
  CHECK(rep.rho_hat == 0.0);
}

TEST_CASE("rho estimate: product four-torus at an index-2 point") {
  auto m = ModelManifold::t4_product();
  auto cps = find_zeros(m, 8);
  int src = -1;
  for (size_t i = 0; i < cps.size(); ++i) {
    // pick the index-2 point (0,0,pi,pi): unstable plane is the first two axes
    if (cps[i].index == 2 && cps[i].position[0] < 1 && cps[i].position[1] < 1) {
      src = static_cast<int>(i);
      break;
    }
  }
  REQUIRE(src >= 0);
  std::vector<double> a{0.0, 0.5};
  std::vector<double> d{1.0, 2.0, 3.0, 4.0, 4.4, 4.8, 5.2};
  auto rep = estimate_rho(m, cps, src, a, d, 64, fast_opts());
  double vol = kTwoPi * kTwoPi;
  CHECK(rep.integrals(0, 6) <= vol * 1.02);
  CHECK(rep.integrals(0, 6) >= vol * 0.80);
  CHECK(rep.rho_hat == 0.0);
}

TEST_CASE("rho estimate rejects bad inputs") {
  auto m = ModelManifold::t4_product();
  auto cps = find_zeros(m, 8);
  int min_id = -1, ind3_id = -1;
  for (size_t i = 0; i < cps.size(); ++i) {
    if (cps[i].index == 0) min_id = static_cast<int>(i);
    if (cps[i].index == 3) ind3_id = static_cast<int>(i);
  }
  std::vector<double> a{0.0};
  std::vector<double> d{1.0, 2.0};
  CHECK_THROWS_AS(estimate_rho(m, cps, min_id, a, d, 8), Error);
  CHECK_THROWS_AS(estimate_rho(m, cps, ind3_id, a, d, 8), Error);
  auto m2 = ModelManifold::t1_exact();
  auto cps2 = find_zeros(m2, 32);
  CHECK_THROWS_AS(estimate_rho(m2, cps2, 0, {}, d, 2), Error);
  CHECK_THROWS_AS(estimate_rho(m2, cps2, 0, a, {2.0, 1.0}, 2), Error);
}
