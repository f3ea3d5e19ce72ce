#include "novlab/flow.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace novlab {

namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double A21 = 1.0 / 5;
constexpr double A31 = 3.0 / 40, A32 = 9.0 / 40;
constexpr double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9;
constexpr double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561,
                 A54 = -212.0 / 729;
constexpr double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176,
                 A65 = -5103.0 / 18656;
constexpr double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784,
                 B6 = 11.0 / 84;
constexpr double E1 = 71.0 / 57600, E3 = -71.0 / 16695, E4 = 71.0 / 1920, E5 = -17253.0 / 339200,
                 E6 = 22.0 / 525, E7 = -1.0 / 40;

struct StepperState {
  Eigen::VectorXd x;      // lifted position
  Eigen::MatrixXd frame;  // n x k variational columns (k may be 0)
};

// One adaptive step of x' = X(x), frame' = J(x) * frame. Returns the accepted
// step size through dt (updated with the proposal for the next step).
// The step length is capped so capture balls cannot be jumped over.
class DoPri {
 public:
  DoPri(const ModelManifold& m, const std::vector<CriticalPoint>& cps, const FlowOptions& opts)
      : m_(m), cps_(cps), opts_(opts) {}

  // returns false when the step size underflowed
  bool step(StepperState& s, double& dt, double* used_dt = nullptr) {
    int n = m_.dim();
    double cap_len = length_cap(s.x);
    for (int tries = 0; tries < 60; ++tries) {
      Eigen::VectorXd v = m_.flow_field(s.x);
      double speed = v.norm();
      if (speed > 0 && dt * speed > cap_len) dt = cap_len / speed;
      if (dt < 1e-13) return false;

      auto f = [this](const StepperState& q, StepperState& out) {
        out.x = m_.flow_field(q.x);
        if (q.frame.cols() > 0) out.frame = m_.flow_jacobian(q.x) * q.frame;
      };
      StepperState k1, k2, k3, k4, k5, k6, k7, tmp;
      f(s, k1);
      tmp = advance(s, {{&k1, A21}}, dt);
      f(tmp, k2);
      tmp = advance(s, {{&k1, A31}, {&k2, A32}}, dt);
      f(tmp, k3);
      tmp = advance(s, {{&k1, A41}, {&k2, A42}, {&k3, A43}}, dt);
      f(tmp, k4);
      tmp = advance(s, {{&k1, A51}, {&k2, A52}, {&k3, A53}, {&k4, A54}}, dt);
      f(tmp, k5);
      tmp = advance(s, {{&k1, A61}, {&k2, A62}, {&k3, A63}, {&k4, A64}, {&k5, A65}}, dt);
      f(tmp, k6);
      StepperState next = advance(s, {{&k1, B1}, {&k3, B3}, {&k4, B4}, {&k5, B5}, {&k6, B6}}, dt);
      f(next, k7);

      double err = 0.0;
      for (int i = 0; i < n; ++i) {
        double e = dt * (E1 * k1.x[i] + E3 * k3.x[i] + E4 * k4.x[i] + E5 * k5.x[i] +
                         E6 * k6.x[i] + E7 * k7.x[i]);
        double sc = opts_.atol + opts_.rtol * std::max(std::abs(s.x[i]), std::abs(next.x[i]));
        err += (e / sc) * (e / sc);
      }
      err = std::sqrt(err / n);
      double fac = std::clamp(0.9 * std::pow(std::max(err, 1e-16), -0.2), 0.2, 5.0);
      if (err <= 1.0) {
        s = std::move(next);
        if (used_dt) *used_dt = dt;
        dt *= fac;
        return true;
      }
      dt *= fac;
    }
    return false;
  }

 private:
  StepperState advance(const StepperState& s,
                       std::initializer_list<std::pair<const StepperState*, double>> ks,
                       double dt) const {
    StepperState out = s;
    for (const auto& [k, c] : ks) {
      out.x += dt * c * k->x;
      if (s.frame.cols() > 0) out.frame += dt * c * k->frame;
    }
    return out;
  }

  double length_cap(const Eigen::VectorXd& x) const {
    double d = kInf;
    Eigen::VectorXd w = wrap_2pi(x);
    for (const auto& cp : cps_) d = std::min(d, torus_dist(w, cp.position));
    return std::max(opts_.capture_radius / 2, d - opts_.capture_radius / 2);
  }

  const ModelManifold& m_;
  const std::vector<CriticalPoint>& cps_;
  const FlowOptions& opts_;
};

// Orientation-preserving renormalization of the transported frame.
void renormalize(Eigen::MatrixXd& frame) {
  if (frame.cols() == 0) return;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(frame);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(frame.rows(), frame.cols());
  Eigen::MatrixXd r = qr.matrixQR().topRows(frame.cols()).triangularView<Eigen::Upper>();
  for (int c = 0; c < frame.cols(); ++c)
    if (r(c, c) < 0) q.col(c) *= -1.0;
  frame = q;
}

Eigen::MatrixXd unstable_frame(const CriticalPoint& cp) {
  return cp.eig_vectors.leftCols(cp.index);
}

Eigen::VectorXd launch_direction(const CriticalPoint& cp, int k, int j, int n_directions) {
  Eigen::MatrixXd u = unstable_frame(cp);
  if (k == 1) return (j == 0 ? 1.0 : -1.0) * u.col(0);
  double phi = kTwoPi * (j + 0.5) / n_directions;
  return std::cos(phi) * u.col(0) + std::sin(phi) * u.col(1);
}

double launch_radius(const CriticalPoint& cp, const FlowOptions& opts) {
  double lmin = cp.eig_values.cwiseAbs().minCoeff();
  return opts.r0 * std::min(1.0, lmin);
}

ShotResult shoot_core(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                      const Eigen::VectorXd& start_lift, const Eigen::VectorXd& dir,
                      double max_h_drop, const std::vector<char>& capture_ok,
                      const FlowOptions& opts, bool with_frame) {
  ShotResult res;
  const CriticalPoint& cp = cps[x];
  int n = m.dim();
  double r = launch_radius(cp, opts);

  StepperState st;
  st.x = start_lift + r * dir;
  if (with_frame) st.frame = unstable_frame(cp);
  double h0 = m.h_lift(start_lift);
  double h_prev = m.h_lift(st.x);

  DoPri stepper(m, cps, opts);
  double dt = 1e-4;
  res.samples.push_back(st.x);
  int stall_streak = 0, stall_cp = -1;

  for (int step = 0; step < opts.max_steps; ++step) {
    if (!stepper.step(st, dt)) {
      res.status = ShotStatus::stiff;
      res.terminal = st.x;
      return res;
    }
    if (with_frame) renormalize(st.frame);
    double h = m.h_lift(st.x);
    if (h > h_prev + 1e-9 * (1.0 + std::abs(h_prev)))
      numeric_error("gradient flow: h increased along a trajectory");
    h_prev = h;
    if (step % opts.sample_stride == 0) res.samples.push_back(st.x);

    Eigen::VectorXd wx = wrap_2pi(st.x);
    bool near_noncapturing = false;
    for (size_t c = 0; c < cps.size(); ++c) {
      if (torus_dist(wx, cps[c].position) >= opts.capture_radius) continue;
      if (static_cast<int>(c) == x && (st.x - start_lift).norm() < 2 * opts.capture_radius)
        continue;  // still inside the launch ball
      if (!capture_ok[c]) {
        near_noncapturing = true;
        stall_cp = static_cast<int>(c);
        continue;
      }
      res.status = ShotStatus::captured;
      res.target_cp = static_cast<int>(c);
      res.winding.assign(n, 0);
      for (int i = 0; i < n; ++i)
        res.winding[i] = static_cast<int>(std::llround((st.x[i] - cps[c].position[i]) / kTwoPi));
      res.terminal = st.x;
      res.h_drop = h0 - h;
      res.frame = st.frame;
      res.velocity = m.flow_field(st.x);
      res.samples.push_back(st.x);
      return res;
    }
    stall_streak = near_noncapturing ? stall_streak + 1 : 0;
    if (stall_streak >= opts.stall_steps) {
      res.status = ShotStatus::stalled;
      res.target_cp = stall_cp;
      res.winding.assign(n, 0);
      for (int i = 0; i < n; ++i)
        res.winding[i] =
            static_cast<int>(std::llround((st.x[i] - cps[stall_cp].position[i]) / kTwoPi));
      res.terminal = st.x;
      res.h_drop = h0 - h;
      res.samples.push_back(st.x);
      return res;
    }
    if (h0 - h >= max_h_drop) {
      res.status = ShotStatus::h_exhausted;
      res.terminal = st.x;
      res.h_drop = h0 - h;
      res.samples.push_back(st.x);
      return res;
    }
  }
  res.status = ShotStatus::step_cap;
  res.terminal = st.x;
  return res;
}

int trajectory_sign(const std::vector<CriticalPoint>& cps, int x, const ShotResult& shot) {
  int k = cps[x].index;
  const CriticalPoint& y = cps[shot.target_cp];
  Eigen::VectorXd xhat = shot.velocity.normalized();
  if (k == 1) {
    double d = shot.frame.col(0).dot(xhat);
    if (std::abs(d) < 1e-8) numeric_error("orientation comparison degenerate (k=1)");
    return d > 0 ? 1 : -1;
  }
  if (k == 2 && cps[x].position.size() == 2) {
    Eigen::MatrixXd basis(2, 2);
    basis.col(0) = unstable_frame(y).col(0);
    basis.col(1) = xhat;
    Eigen::MatrixXd mcoef = basis.partialPivLu().solve(shot.frame);
    double det = mcoef.determinant();
    if (std::abs(det) < 1e-8) numeric_error("orientation comparison degenerate (k=2)");
    return det > 0 ? 1 : -1;
  }
  config_error("orientation transport supports unstable dimension <= 2");
}

std::string pair_str(int x, int y) {
  std::ostringstream os;
  os << "(x=" << x << ", y=" << y << ")";
  return os.str();
}

using Label = std::tuple<int, int, IVec>;  // (status class, cp, winding)

Label shot_label(const ShotResult& s) {
  if (s.status == ShotStatus::captured) return {0, s.target_cp, s.winding};
  if (s.status == ShotStatus::h_exhausted) return {1, -1, {}};
  if (s.status == ShotStatus::stalled) return {2, s.target_cp, s.winding};
  std::ostringstream os;
  os << "shooting run failed to terminate cleanly ("
     << (s.status == ShotStatus::stiff ? "stiff" : "step cap") << ", h drop " << s.h_drop
     << ", terminal";
  for (int i = 0; i < s.terminal.size(); ++i) os << " " << s.terminal[i];
  os << ")";
  numeric_error(os.str());
}

// Counts for one source critical point, written into the table.
void count_from_source(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                       double R, int n_directions, const FlowOptions& opts, IncidenceTable& table,
                       std::vector<Trajectory>* trajectories) {
  int k = cps[x].index;
  int n = m.dim();
  if (k == 0) return;
  if (k > 2) config_error("trajectory counting supports unstable dimension <= 2");
  double max_drop = R + opts.capture_margin;

  std::vector<char> sinks(cps.size(), 0), saddles(cps.size(), 0);
  for (size_t c = 0; c < cps.size(); ++c) {
    if (cps[c].index == 0) sinks[c] = 1;
    if (cps[c].index == k - 1) saddles[c] = 1;
  }

  auto record = [&](const ShotResult& shot) {
    if (cps[shot.target_cp].index != k - 1)
      numeric_error("transversality violation: connection does not drop index by 1 at pair " +
                    pair_str(x, shot.target_cp));
    Eigen::VectorXd end_lift = cps[shot.target_cp].position;
    for (int i = 0; i < n; ++i) end_lift[i] += kTwoPi * shot.winding[i];
    double action = m.h_lift(cps[x].position) - m.h_lift(end_lift);
    if (std::abs(action - shot.h_drop) > 1e-6)
      numeric_error("trajectory action inconsistent with endpoint h difference");
    if (action > R + 1e-12) return;
    int sgn = trajectory_sign(cps, x, shot);
    auto key = std::make_tuple(x, shot.target_cp, shot.winding);
    auto& slot = table.entries[key];
    slot.first += sgn;
    slot.second = action;
    if (trajectories) {
      Trajectory t;
      t.start = make_lift(m, cps, x, IVec(n, 0));
      t.end = make_lift(m, cps, shot.target_cp, shot.winding);
      t.samples = shot.samples;
      t.action = action;
      t.sign = sgn;
      trajectories->push_back(std::move(t));
    }
  };

  if (k == 1) {
    std::vector<ShotResult> shots(2);
    parallel_for(2, static_cast<size_t>(std::max(1, opts.threads)), [&](size_t j) {
      shots[j] = shoot_core(m, cps, x, cps[x].position,
                            launch_direction(cps[x], 1, static_cast<int>(j), 2), max_drop, sinks,
                            opts, true);
    });
    for (auto& s : shots) {
      if (s.status == ShotStatus::h_exhausted) continue;  // beyond the bound
      if (s.status == ShotStatus::stalled)
        numeric_error("transversality violation: trajectory sinks into pair " +
                      pair_str(x, s.target_cp));
      if (s.status != ShotStatus::captured) numeric_error("shooting run did not terminate");
      record(s);
    }
    return;
  }

  // k == 2: bracket separatrices between sink-label changes along the circle.
  std::vector<ShotResult> ring(n_directions);
  parallel_for(static_cast<size_t>(n_directions), static_cast<size_t>(std::max(1, opts.threads)),
               [&](size_t j) {
                 ring[j] =
                     shoot_core(m, cps, x, cps[x].position,
                                launch_direction(cps[x], 2, static_cast<int>(j), n_directions),
                                max_drop, sinks, opts, false);
               });

  auto phi_of = [&](int j) { return kTwoPi * (j + 0.5) / n_directions; };
  auto dir_of = [&](double phi) {
    Eigen::MatrixXd u = unstable_frame(cps[x]);
    return Eigen::VectorXd(std::cos(phi) * u.col(0) + std::sin(phi) * u.col(1));
  };
  auto label_at = [&](double phi) {
    return shot_label(shoot_core(m, cps, x, cps[x].position, dir_of(phi), max_drop, sinks, opts,
                                 false));
  };

  struct Bracket {
    double lo, hi;
    Label llo, lhi;
  };
  std::deque<Bracket> work;
  for (int j = 0; j < n_directions; ++j) {
    Label a = shot_label(ring[j]);
    Label b = shot_label(ring[(j + 1) % n_directions]);
    if (a != b) work.push_back({phi_of(j), phi_of(j) + kTwoPi / n_directions, a, b});
  }

  std::vector<double> seps;
  int guard = 0;
  while (!work.empty()) {
    if (++guard > 4000) numeric_error("separatrix bisection failed to converge at source " +
                                      std::to_string(x));
    Bracket br = work.front();
    work.pop_front();
    while (br.hi - br.lo > opts.bisect_tol) {
      double mid = 0.5 * (br.lo + br.hi);
      Label lm = label_at(mid);
      if (lm == br.llo) {
        br.lo = mid;
      } else if (lm == br.lhi) {
        br.hi = mid;
      } else {
        work.push_back({mid, br.hi, lm, br.lhi});
        br.hi = mid;
        br.lhi = lm;
      }
    }
    seps.push_back(0.5 * (br.lo + br.hi));
  }
  std::sort(seps.begin(), seps.end());
  seps.erase(std::unique(seps.begin(), seps.end(),
                         [&](double a, double b) { return std::abs(a - b) < 10 * opts.bisect_tol; }),
             seps.end());

  std::vector<char> targets = saddles;
  for (size_t c = 0; c < cps.size(); ++c)
    if (sinks[c]) targets[c] = 1;  // a sink capture here flags non-transversality
  std::vector<ShotResult> sep_shots(seps.size());
  parallel_for(seps.size(), static_cast<size_t>(std::max(1, opts.threads)), [&](size_t i) {
    sep_shots[i] = shoot_core(m, cps, x, cps[x].position, dir_of(seps[i]), max_drop, targets, opts,
                              true);
  });
  for (auto& s : sep_shots) {
    if (s.status == ShotStatus::h_exhausted) continue;
    if (s.status != ShotStatus::captured)
      numeric_error("separatrix shot did not terminate at source " + std::to_string(x));
    record(s);
  }
}

IncidenceTable count_once(const ModelManifold& m, const std::vector<CriticalPoint>& cps, double R,
                          int n_directions, const FlowOptions& opts,
                          std::vector<Trajectory>* trajectories) {
  IncidenceTable table;
  table.action_bound = R;
  table.n_directions = n_directions;
  for (size_t c = 0; c < cps.size(); ++c)
    table.orientations[static_cast<int>(c)] = unstable_frame(cps[c]);
  for (size_t x = 0; x < cps.size(); ++x)
    count_from_source(m, cps, static_cast<int>(x), R, n_directions, opts, table, trajectories);
  // drop cancelled-to-zero windings? No: keep explicit zeros out of the map
  for (auto it = table.entries.begin(); it != table.entries.end();)
    it = (it->second.first == 0) ? table.entries.erase(it) : std::next(it);
  return table;
}

bool same_counts(const IncidenceTable& a, const IncidenceTable& b) {
  if (a.entries.size() != b.entries.size()) return false;
  for (const auto& [k, v] : a.entries) {
    auto it = b.entries.find(k);
    if (it == b.entries.end() || it->second.first != v.first) return false;
  }
  return true;
}

}  // namespace

std::vector<ShotResult> shoot_unstable(const ModelManifold& m,
                                       const std::vector<CriticalPoint>& cps, int x,
                                       int n_directions, double max_h_drop,
                                       const FlowOptions& opts) {
  const CriticalPoint& cp = cps[static_cast<size_t>(x)];
  int k = cp.index;
  if (k < 1) config_error("shoot_unstable: critical point has empty unstable sphere");
  if (n_directions < 2 * k) config_error("shoot_unstable: need >= 2 directions per unstable dim");
  if (k > 2) config_error("shoot_unstable: unstable dimension <= 2 supported");
  int shots_n = (k == 1) ? 2 : n_directions;
  std::vector<char> all(cps.size(), 1);
  std::vector<ShotResult> shots(shots_n);
  parallel_for(static_cast<size_t>(shots_n), static_cast<size_t>(std::max(1, opts.threads)),
               [&](size_t j) {
                 shots[j] = shoot_core(m, cps, x, cp.position,
                                       launch_direction(cp, k, static_cast<int>(j), shots_n),
                                       max_h_drop, all, opts, true);
               });
  return shots;
}

CountResult build_incidence_table(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                                  double R, int n_directions, const FlowOptions& opts) {
  CountResult out;
  out.table = count_once(m, cps, R, n_directions, opts, &out.trajectories);
  IncidenceTable doubled = count_once(m, cps, R, 2 * n_directions, opts, nullptr);
  if (!same_counts(out.table, doubled)) {
    IncidenceTable quad = count_once(m, cps, R, 4 * n_directions, opts, nullptr);
    if (!same_counts(doubled, quad))
      numeric_error("incidence counts not stable under direction-mesh refinement");
    out.trajectories.clear();
    out.table = count_once(m, cps, R, 2 * n_directions, opts, &out.trajectories);
  }
  return out;
}

IncidenceTable count_connecting_orbits(const ModelManifold& m,
                                       const std::vector<CriticalPoint>& cps, int x, int y,
                                       double R, int n_directions, const FlowOptions& opts) {
  if (cps[static_cast<size_t>(x)].index != cps[static_cast<size_t>(y)].index + 1)
    config_error("count_connecting_orbits: index difference must be 1");
  IncidenceTable table;
  table.action_bound = R;
  table.n_directions = n_directions;
  table.orientations[x] = unstable_frame(cps[static_cast<size_t>(x)]);
  table.orientations[y] = unstable_frame(cps[static_cast<size_t>(y)]);
  IncidenceTable full = count_once(m, cps, R, n_directions, opts, nullptr);
  for (const auto& [k, v] : full.entries)
    if (std::get<0>(k) == x && std::get<1>(k) == y) table.entries[k] = v;
  return table;
}

RhoReport estimate_rho(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                       const std::vector<double>& a_grid, const std::vector<double>& radius_grid,
                       int n_directions, const FlowOptions& opts) {
  const CriticalPoint& cp = cps[static_cast<size_t>(x)];
  int k = cp.index;
  if (k < 1) config_error("estimate_rho: index must be >= 1");
  if (k > 2) config_error("estimate_rho: unstable dimension <= 2 supported");
  if (a_grid.empty() || radius_grid.empty()) config_error("estimate_rho: empty grids");
  if (!std::is_sorted(radius_grid.begin(), radius_grid.end()))
    config_error("estimate_rho: radius grid must be increasing");

  int na = static_cast<int>(a_grid.size());
  int nd = static_cast<int>(radius_grid.size());
  int dirs = (k == 1) ? 2 : n_directions;
  double r = launch_radius(cp, opts);
  double weight = (k == 1) ? 1.0 : kTwoPi / dirs;
  double cap_share = (k == 1) ? r : kPi * r * r / dirs;
  double d_max = radius_grid.back();

  const Eigen::MatrixXd& g = m.metric();
  Eigen::MatrixXd crossings_sum = Eigen::MatrixXd::Zero(na, nd);
  std::vector<Eigen::MatrixXd> per_dir(static_cast<size_t>(dirs));

  parallel_for(static_cast<size_t>(dirs), static_cast<size_t>(std::max(1, opts.threads)),
               [&](size_t j) {
    Eigen::MatrixXd u = cp.eig_vectors.leftCols(k);
    Eigen::VectorXd dir, dphi;
    if (k == 1) {
      dir = (j == 0 ? 1.0 : -1.0) * u.col(0);
    } else {
      double phi = kTwoPi * (j + 0.5) / dirs;
      dir = std::cos(phi) * u.col(0) + std::sin(phi) * u.col(1);
      dphi = -std::sin(phi) * u.col(0) + std::cos(phi) * u.col(1);
    }

    StepperState st;
    st.x = cp.position + r * dir;
    if (k == 2) st.frame = r * dphi;  // d(launch)/d(phi), transported variationally

    auto density = [&](const StepperState& s) {
      Eigen::VectorXd vel = m.flow_field(s.x);
      double xx = vel.dot(g * vel);
      if (k == 1) return std::sqrt(xx);
      Eigen::VectorXd v = s.frame.col(0);
      double vv = v.dot(g * v), vx = v.dot(g * vel);
      return std::sqrt(std::max(0.0, vv * xx - vx * vx));
    };

    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(na, nd);
    Eigen::VectorXd acc = Eigen::VectorXd::Constant(na, cap_share);
    double h0 = m.h_lift(cp.position);
    double drop_prev = h0 - m.h_lift(st.x);
    double dens_prev = density(st);
    int next_bin = 0;

    // Integrate in the h-drop variable: along gradient flow d(drop)/dtau is
    // exactly |X|_g^2, so dI = e^{-a*drop} * density / |X|_g^2 d(drop).
    auto speed2 = [&](const StepperState& s) {
      Eigen::VectorXd vel = m.flow_field(s.x);
      return vel.dot(g * vel);
    };
    double sp_prev = speed2(st);
    double a_max = *std::max_element(a_grid.begin(), a_grid.end());
    DoPri stepper(m, cps, opts);
    double dt = 1e-4;
    for (int step = 0; step < opts.max_steps && next_bin < nd; ++step) {
      // The position integrator would happily take steps across which the
      // integrand varies by orders of magnitude (it only controls position
      // error), so retry with smaller steps until the trapezoid is safe.
      StepperState saved = st;
      double drop_new = 0, dens_new = 0, sp_new = 0, used = 0;
      bool ok = false;
      for (int retry = 0; retry < 50; ++retry) {
        if (!stepper.step(st, dt, &used)) break;
        drop_new = h0 - m.h_lift(st.x);
        dens_new = density(st);
        sp_new = speed2(st);
        if (sp_new < 1e-16) break;
        double q_old = dens_prev / sp_prev, q_new = dens_new / sp_new;
        bool smooth = (q_old < 1e-300 && q_new < 1e-300) ||
                      (q_new > 0.8 * q_old && q_new < 1.25 * q_old);
        if (smooth && (drop_new - drop_prev) * a_max < 0.25) {
          ok = true;
          break;
        }
        st = saved;
        dt = used / 2;
      }
      if (!ok) {
        if (sp_new >= 1e-16 && dt >= 1e-13)
          numeric_error("estimate_rho: quadrature step control failed");
        break;  // stalled at a zero: chart exhausted
      }
      double ddrop = drop_new - drop_prev;
      if (ddrop > 0) {
        for (int a = 0; a < na; ++a) {
          double f_old = std::exp(-a_grid[a] * drop_prev) * dens_prev / sp_prev;
          double f_new = std::exp(-a_grid[a] * drop_new) * dens_new / sp_new;
          double add = 0.5 * ddrop * (f_old + f_new) * weight;
          double before = acc[a];
          acc[a] = before + add;
          for (int b = next_bin; b < nd; ++b) {
            if (radius_grid[b] > drop_new) break;
            double frac = (radius_grid[b] - drop_prev) / ddrop;
            cross(a, b) = before + frac * add;
          }
        }
        while (next_bin < nd && radius_grid[next_bin] <= drop_new) ++next_bin;
      }
      drop_prev = drop_new;
      dens_prev = dens_new;
      sp_prev = sp_new;
      if (drop_new >= d_max) break;
    }
    for (int b = next_bin; b < nd; ++b)
      for (int a = 0; a < na; ++a) cross(a, b) = acc[a];
    per_dir[j] = cross;
  });

  for (const auto& c : per_dir) crossings_sum += c;

  RhoReport rep;
  rep.a_grid = a_grid;
  rep.radius_grid = radius_grid;
  rep.integrals = crossings_sum;
  rep.stabilized.assign(static_cast<size_t>(na), 0);
  for (int a = 0; a < na; ++a) {
    for (int b = 0; b + 1 < nd; ++b)
      if (crossings_sum(a, b + 1) < crossings_sum(a, b) - 1e-9 * (1 + crossings_sum(a, b)))
        numeric_error("estimate_rho: exhaustion integrals not monotone");
    for (int b = 0; b + 2 < nd; ++b) {
      double i0 = crossings_sum(a, b), i1 = crossings_sum(a, b + 1), i2 = crossings_sum(a, b + 2);
      double r1 = std::abs(i1 - i0) / std::max(1e-300, std::abs(i1));
      double r2 = std::abs(i2 - i1) / std::max(1e-300, std::abs(i2));
      if (r1 < 0.005 && r2 < 0.005) {
        rep.stabilized[static_cast<size_t>(a)] = 1;
        break;
      }
    }
    if (rep.stabilized[static_cast<size_t>(a)]) rep.rho_hat = std::min(rep.rho_hat, a_grid[a]);
  }
  return rep;
}

}  // namespace novlab
