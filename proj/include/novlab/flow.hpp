#pragma once

#include <map>
#include <tuple>
#include <vector>

#include "novlab/manifold.hpp"

namespace novlab {

struct FlowOptions {
  double capture_radius = 1e-3;
  double r0 = 1e-4;          // launch radius, scaled by min |Hessian eigenvalue|
  double bisect_tol = 1e-10; // shooting-parameter bracket width
  double rtol = 1e-10;
  double atol = 1e-12;
  double capture_margin = 3.0; // extra h-drop allowed past the action bound
  int max_steps = 400000;
  int stall_steps = 5000;      // consecutive steps inside a non-capturing ball
  int sample_stride = 16;
  int threads = 1;
};

// stalled: converged to a critical point excluded from the capture set (a
// shooting direction that rounded onto a separatrix does this)
enum class ShotStatus { captured, h_exhausted, step_cap, stiff, stalled };

struct ShotResult {
  ShotStatus status = ShotStatus::step_cap;
  int target_cp = -1;          // captured critical point id
  IVec winding;                // capture lift = cps[target].position + 2pi*winding
  Eigen::VectorXd terminal;    // lifted terminal point
  double h_drop = 0.0;         // h(launch cp) - h(terminal)
  Eigen::MatrixXd frame;       // transported unstable frame at termination
  Eigen::VectorXd velocity;    // flow field at termination
  std::vector<Eigen::VectorXd> samples;  // decimated lifted path
};

struct Trajectory {
  LiftedCriticalPoint start, end;
  std::vector<Eigen::VectorXd> samples;
  double action = 0.0;  // h(start) - h(end) > 0
  int sign = 0;
};

// Quotient trajectory-count data. Keys carry the full Z^n winding of the
// capture lift relative to a launch at the canonical position; the lattice
// projection happens at complex-assembly time.
struct IncidenceTable {
  double action_bound = 0.0;
  int n_directions = 0;
  // (x id, y id, winding) -> (signed count, representative action)
  std::map<std::tuple<int, int, IVec>, std::pair<long long, double>> entries;
  std::map<int, Eigen::MatrixXd> orientations;  // unstable frame per critical point
};

struct CountResult {
  IncidenceTable table;
  std::vector<Trajectory> trajectories;
};

struct RhoReport {
  std::vector<double> a_grid;
  std::vector<double> radius_grid;  // h-drop exhaustion levels, increasing
  Eigen::MatrixXd integrals;        // a_grid.size() x radius_grid.size()
  std::vector<char> stabilized;     // per a: three consecutive changes < 0.5%
  double rho_hat = kInf;            // smallest stabilizing a, +inf if none
};

// Launch adaptive integrations from the unstable sphere of cps[x]; terminate
// on capture at any critical point, h exhaustion, or step cap.
std::vector<ShotResult> shoot_unstable(const ModelManifold& m,
                                       const std::vector<CriticalPoint>& cps, int x,
                                       int n_directions, double max_h_drop,
                                       const FlowOptions& opts = {});

// Full table over all index-difference-1 pairs with action <= R, verified
// stable under doubling of the direction mesh.
CountResult build_incidence_table(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                                  double R, int n_directions, const FlowOptions& opts = {});

// Slice of the table for one pair (convenience wrapper over the builder).
IncidenceTable count_connecting_orbits(const ModelManifold& m,
                                       const std::vector<CriticalPoint>& cps, int x, int y,
                                       double R, int n_directions, const FlowOptions& opts = {});

// Exhaustion integrals of e^{a h} over the unstable manifold of cps[x].
RhoReport estimate_rho(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                       const std::vector<double>& a_grid, const std::vector<double>& radius_grid,
                       int n_directions, const FlowOptions& opts = {});

}  // namespace novlab
