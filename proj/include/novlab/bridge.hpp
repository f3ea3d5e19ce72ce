#pragma once
// The analytic bridge between the two pipelines: integration of e^{s h} over
// unstable manifolds, the chain-map identity against the counted complex, and
// recovery of incidence data from the small spectral subspace.

#include <string>
#include <vector>

#include "novlab/ncomplex.hpp"
#include "novlab/witten.hpp"

namespace novlab {

// One quadrature node along a ray of an unstable-manifold parameterization.
// weight is the flow-time Simpson weight; the integrand supplied later is
// e^{-s*drop} times the pullback of the form onto (velocity [, frame]).
struct ChartNode {
  Eigen::VectorXd position;  // lifted point in R^n
  double drop = 0.0;         // h(x) - h(point) >= 0
  Eigen::VectorXd velocity;  // flow field there (d point / d tau)
  Eigen::VectorXd frame;     // d point / d angle, 2-D charts only
  double weight = 0.0;
};

struct ChartRay {
  double angle_weight = 1.0;  // angular quadrature weight (2-D charts)
  double ray_sign = 1.0;      // orientation of the 1-D parameterization
  bool captured = false;      // terminated inside a sink's capture ball
  double end_drop = 0.0;
  double end_dist = 0.0;      // distance to the nearest zero at termination
  double end_frame_norm = 0.0;
  double end_rate = 1.0;      // total contraction rate of the capturing sink
  double pass_dist = 0.0;     // closest approach to a non-launch saddle/source
  std::vector<ChartNode> nodes;
};

// Sampled parameterization of W^-_x by (launch direction, flow time), with
// the orientation inherited from the unstable eigenframe order. Reusable for
// any integrand and any s; weights are s-independent.
struct UnstableChart {
  int cp = -1;
  int index = 0;  // = dim W^-, supported up to 2
  Eigen::VectorXd center;
  Eigen::MatrixXd unstable;  // n x index, oriented eigenframe columns
  double cap_radius = 0.0;   // launch sphere radius; the inner cap is analytic
  double exhaustion = 0.0;   // h-drop horizon
  std::vector<ChartRay> rays;
};

struct ChartOptions {
  int n_directions = 512;      // base angular mesh for 2-D charts
  int refine_depth = 20;       // separatrix bisection levels
  double grade_factor = 6.0;   // bisect while wider than passage distance / this
  double exhaustion = 8.0;     // h-drop horizon
  double capture_radius = 1e-5;
  double r0 = 1e-4;            // launch radius, scaled by min |Hessian eigenvalue|
  double s_max = 20.0;         // largest Re(s) the drop resolution must serve
  double ds_max = 0.05;        // arc length per quadrature step
  double dlog_frame = 0.2;     // frame growth per step
  double dt_max = 0.25;
  int max_steps = 400000;
  int threads = 1;
};

UnstableChart build_chart(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                          int x, const ChartOptions& opts = {});

// Charts for every critical point, indexed by cp id.
std::vector<UnstableChart> build_charts(const ModelManifold& m,
                                        const std::vector<CriticalPoint>& cps,
                                        const ChartOptions& opts = {});

struct IntResult {
  Complex value{0.0, 0.0};
  double tail_bound = 0.0;
  std::vector<std::string> warnings;
};

// Integral of e^{s h^x} times the pullback of alpha over the chart. alpha must
// have degree equal to the chart index; components are interpolated
// trigonometrically (exact on band-limited data). Throws when the reported
// tail bound exceeds tail_tol * max(1, |value|). Re(s) <= rho_hat only warns:
// the tail bound is the operative convergence evidence.
IntResult int_s(const FormField& alpha, const UnstableChart& chart, Complex s,
                double tail_tol = 1e-5, double rho_hat = 0.0, int threads = 1);

// Localized family realizing the surjectivity argument: a profile with unit
// weighted integral along the unstable directions at cps[x], times a cutoff of
// width lambda transverse to them. int_s of it at x tends to 1 and at other
// same-index points to 0 as lambda shrinks.
FormField make_bump_form(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                         Complex s, double lambda, int N, double eps = 0.25);

struct ChainMapPoint {
  int cp = -1;
  Complex lhs{0.0, 0.0};  // integral of d_s(alpha) over the chart at cp
  Complex rhs{0.0, 0.0};  // counted incidences, Dirichlet-specialized at s
  double abs_residual = 0.0;
};

struct ChainMapReport {
  int q = 0;  // degree of alpha; targets run over Cr_{q+1}
  Complex s{0.0, 0.0};
  double scale = 0.0;  // magnitude the residuals are measured against
  double max_rel_residual = 0.0;
  double tail_bound = 0.0;
  std::vector<ChainMapPoint> points;
  std::vector<std::string> warnings;
};

// Both sides of the identity Int_s(d_s a)(x) = sum_y I(x,y) e^{-s H} Int_s(a)(y)
// for every x of index q+1. The right side uses the assembled complex from the
// trajectory pipeline. Residuals above fail_threshold (relative to the largest
// integral magnitude in play) throw with a per-point breakdown.
ChainMapReport verify_chain_map(const FormField& alpha, Complex s, const ModelManifold& m,
                                const std::vector<CriticalPoint>& cps, const NovikovComplex& nc,
                                const std::vector<UnstableChart>& charts,
                                double fail_threshold = 1e-3, int threads = 1);

// Small-subspace basis data for one degree.
struct DegreeBasis {
  int q = 0;
  std::vector<int> cp_ids;  // index-q critical points, ascending id
  std::vector<double> eigenvalues;
  std::vector<FormField> eigenforms;  // unit L2, spanning the small subspace
  Eigen::MatrixXcd M;        // M(x, j) = Int_t(eigenform_j)(x)
  Eigen::MatrixXcd E_coeff;  // columns: E_{t,x} in the eigenform basis (M^{-1})
  double cond_M = 0.0;
  Eigen::MatrixXcd int_R;    // Int_t composed with the quasimode isometry,
                             // rows scaled by the harmonic-model factor
  double rt_defect = 0.0;    // ||int_R - id||_F
};

struct SmallComplexBasis {
  double t = 0.0;
  int N = 0;
  std::vector<DegreeBasis> degrees;  // 0..n
  std::vector<std::string> warnings;
};

struct SmallBasisOptions {
  int N = 48;
  double gap_threshold = 1.0;
  double cond_limit = 1e6;
  double tail_tol = 1e-5;
  std::uint64_t seed = 12345;
  int threads = 1;
};

// Eigenforms of Delta_t below the gap per degree (counts must match #Cr_q),
// the matrix M of their chart integrals, its inverse basis E_{t,x}, and the
// normalized quasimode comparison map.
SmallComplexBasis build_small_basis(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                                    const std::vector<UnstableChart>& charts, double t,
                                    const SmallBasisOptions& opts = {});

struct RecoveredIncidence {
  double t = 0.0;
  // [q] maps degree q to q+1; rows x in Cr_{q+1}, cols y in Cr_q, both by
  // ascending cp id (the same layout as the assembled complex)
  std::vector<Eigen::MatrixXcd> spectral;
  std::vector<Eigen::MatrixXcd> trajectory;  // specialize(assembled, s = t)
  double max_rel_error = 0.0;   // over entries with a trajectory value above floor
  double max_abs_below_floor = 0.0;
  double floor = 0.0;
  double max_leakage = 0.0;     // worst expansion residual outside the small subspace
  std::vector<std::string> warnings;
};

// Expands d_t E_{t,y} in the E_{t,x} basis and cross-checks the coefficients
// against the Dirichlet-specialized trajectory matrices at s = t. Expansion
// leakage outside the small subspace above leak_tol throws.
RecoveredIncidence recover_incidence(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                                     const SmallComplexBasis& basis, const NovikovComplex& nc,
                                     double leak_tol = 1e-4);

struct EntryFit {
  int q = 0;  // degree edge q -> q+1
  int x = 0, y = 0;  // cp ids
  std::vector<double> exponents;
  std::vector<long long> fitted;
  std::vector<long long> oracle;
  bool match = false;
};

struct IncidenceFitReport {
  std::vector<EntryFit> entries;
  bool all_match = true;
};

// Per entry, fit integer coefficients to the recovered t-samples with the
// exponents taken from the trajectory actions, and compare with the counted
// integers. Entries whose trajectory series is empty are skipped.
IncidenceFitReport fit_recovered_integers(const NovikovComplex& nc,
                                          const std::vector<RecoveredIncidence>& samples);

}  // namespace novlab
