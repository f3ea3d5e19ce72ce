#pragma once
// Witten deformation on the flat torus: twisted exterior derivative
// d_t = d + t omega^, its adjoint, the Laplacian Delta_t, eigensolves, the
// closed-form local harmonic oscillator model, Gaussian quasimodes, and the
// spectral gap report that the recovery pipeline consumes.

#include "novlab/eigensolve.hpp"
#include "novlab/forms.hpp"
#include "novlab/manifold.hpp"

namespace novlab {

struct OperatorHandle {
  std::string kind;  // "d_t", "d_t_adjoint", "delta_t"
  double t = 0.0;
  int degree = 0;  // input degree
  int n = 0;
  int N = 0;
  Eigen::Index dim = 0;          // flat complex dimension of the input space
  double scale_estimate = 1.0;   // rough operator norm, for floor estimates
  std::function<FormField(const FormField&)> apply;
};

OperatorHandle build_d_t(const ModelManifold& m, double t, int degree, int N);
OperatorHandle build_d_t_adjoint(const ModelManifold& m, double t, int degree, int N);
OperatorHandle build_delta_t(const ModelManifold& m, double t, int degree, int N);

// Harmonic oscillator model of the zero `cp`, transplanted to the torus chart:
// omega is replaced by its linearization Hessian * displacement in the
// minimal-image chart at the critical point. On forms supported near the zero
// this is the exact quadratic model; quasimodes are its kernel generators up
// to the cutoff, so their model residual decays exponentially in t.
OperatorHandle build_local_model_operator(const ModelManifold& m,
                                          const std::vector<CriticalPoint>& cps, int cp,
                                          double t, int degree, int N);

struct Spectrum {
  Eigen::VectorXd values;  // ascending; verified >= -1e-9
  std::vector<FormField> vectors;
  Eigen::VectorXd residuals;
  int iterations = 0;
  bool dense = false;
};

// k smallest eigenpairs of a self-adjoint handle; k at most 0.1 * dim.
Spectrum spectrum(const OperatorHandle& op, int k, std::uint64_t seed = 12345);

// Harmonic oscillator model on R^n at a nondegenerate zero of index k, all
// curvatures equal to 2c: Delta acts on q-forms with spectrum inside 4ct*N0.
struct LocalModel {
  int n = 1;
  int q = 0;
  int k = 0;
  double c = 1.0;
  double t = 1.0;
};

// smallest `count` eigenvalues, with multiplicity, in ascending order
std::vector<double> local_model_spectrum(const LocalModel& lm, int count);

// Cutoff Gaussian concentrated at critical point `cp`, shaped by the Hessian
// eigenframe, wedged along the steepest-descent directions. Unit discrete L2
// norm. degree < 0 means the Morse index of cp. eta <= 0 picks 0.45 * minimal
// pairwise distance; eta must stay below half the minimal distance.
FormField build_quasimode(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                          int cp, double t, int N, double eta = 0.0, int degree = -1);

struct SpectrumSlice {
  double t = 0.0;
  Eigen::VectorXd eigenvalues;   // k smallest, ascending
  int small_count = 0;           // eigenvalues below the gap candidate 1.0
  double largest_small = 0.0;    // 0 when no small eigenvalues exist
  double first_large = kInf;
};

struct SpectrumReport {
  int q = 0;
  int N = 0;
  int crit_count = 0;             // #Cr_q of the model
  std::vector<double> t_grid;
  std::vector<SpectrumSlice> slices;
  double floor = 0.0;             // solver measurement floor estimate
  double decay_slope = 0.0;       // log largest_small vs t, fitted
  bool decay_at_floor = false;    // every largest_small sits at/below floor
  double growth_rate = 0.0;       // linear fit of first_large vs t
  double growth_offset = 0.0;
  double growth_max_rel_dev = 0.0;
  double minimax_low = 0.0;       // max Rayleigh on the quasimode span
  double minimax_high = 0.0;      // min Rayleigh estimate on its complement
  bool minimax_pass = false;
  std::vector<std::string> warnings;
};

// Tracks the q-form spectrum across the t grid, checks the small-eigenvalue
// count against #Cr_q at the largest t, fits decay and growth rates, and runs
// the two-sided mini-max bracket with the quasimode span at the largest t.
SpectrumReport verify_gap(const ModelManifold& m, int q, const std::vector<double>& t_grid,
                          int N, std::uint64_t seed = 12345);

}  // namespace novlab
