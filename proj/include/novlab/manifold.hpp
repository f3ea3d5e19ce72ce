#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "novlab/base.hpp"
#include "novlab/ring.hpp"

namespace novlab {

// One term amp * cos(wave . theta + phase) of a trigonometric polynomial.
struct TrigTerm {
  IVec wave;
  double amplitude = 0.0;
  double phase = 0.0;
};

// Flat torus T^n carrying a closed one-form omega = sum kappa_i dtheta_i + dF
// and a constant metric. The primitive h on the universal cover R^n is
// h(x) = kappa . x + F(x), normalized so h(0) = 0.
class ModelManifold {
 public:
  ModelManifold(int dim, Eigen::VectorXd kappa, std::vector<TrigTerm> terms,
                Eigen::MatrixXd metric = Eigen::MatrixXd());

  int dim() const { return dim_; }
  const Eigen::VectorXd& kappa() const { return kappa_; }
  const std::vector<TrigTerm>& terms() const { return terms_; }
  const Eigen::MatrixXd& metric() const { return metric_; }
  const Eigen::MatrixXd& metric_inv() const { return metric_inv_; }

  double F(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd grad_F(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd hess_F(const Eigen::VectorXd& theta) const;

  Eigen::VectorXd omega(const Eigen::VectorXd& theta) const { return kappa_ + grad_F(theta); }
  // Primitive of the pulled-back form on R^n, h(0) = 0.
  double h_lift(const Eigen::VectorXd& lifted) const;
  // Negative gradient flow field X = -G^{-1} omega and its Jacobian.
  Eigen::VectorXd flow_field(const Eigen::VectorXd& theta) const {
    return -(metric_inv_ * omega(theta));
  }
  Eigen::MatrixXd flow_jacobian(const Eigen::VectorXd& theta) const {
    return -(metric_inv_ * hess_F(theta));
  }

  // Deck bookkeeping. Full windings live in Z^n; the Novikov lattice keeps
  // one coordinate per nonzero kappa_i with period 2*pi*|kappa_i|.
  const Lattice& lattice() const { return lattice_; }
  const std::vector<int>& deck_axes() const { return deck_axes_; }
  double deck_action(const IVec& winding) const;
  IVec deck_project(const IVec& winding) const;

  std::uint64_t config_hash() const;

  static ModelManifold t1_exact();
  static ModelManifold t1_linear(double kappa);
  static ModelManifold t2_exact();
  static ModelManifold t2_novikov(double k1 = 0.3, double amp = 0.1);
  static ModelManifold t4_product();

 private:
  int dim_;
  Eigen::VectorXd kappa_;
  std::vector<TrigTerm> terms_;
  Eigen::MatrixXd metric_, metric_inv_;
  Lattice lattice_{0, Eigen::VectorXd()};
  std::vector<int> deck_axes_;
};

struct CriticalPoint {
  Eigen::VectorXd position;     // canonical representative in [0, 2pi)^n
  int index = 0;                // number of negative Hessian eigenvalues
  Eigen::MatrixXd hessian;      // of the primitive h (metric independent)
  Eigen::VectorXd eig_values;   // ascending, so unstable directions first
  Eigen::MatrixXd eig_vectors;  // columns matching eig_values, first nonzero
                                // component of each column made positive
  double local_scale = 0.0;     // c_x = geometric mean of |eigenvalues| / 2
  Eigen::VectorXd section_lift; // lift with h in [0, first period)
  IVec section_deck;            // integer shift: section_lift = position + 2pi*deck
  double h_section = 0.0;       // h(section_lift)
};

// A specific lift of a critical point: base point plus full winding, with the
// lattice projection and h value carried along.
struct LiftedCriticalPoint {
  int cp = -1;      // index into the critical point list
  IVec winding;     // lift = position + 2pi * winding, winding in Z^n
  IVec deck;        // lattice projection (rank r)
  double h_value = 0.0;
};

struct ZeroTolerances {
  double newton_tol = 1e-10;
  double degeneracy_tol = 1e-8;
  double dedup = 1e-6;
};

// Newton sweeps from a uniform seed grid; deduplicated, lexicographically
// sorted by canonical position. Degenerate zeros are an error (omega not Morse).
std::vector<CriticalPoint> find_zeros(const ModelManifold& m, int grid_per_axis,
                                      const ZeroTolerances& tol = {}, int threads = 1);

// Index and Hessian of the primitive at a point that must already be a zero.
std::pair<int, Eigen::MatrixXd> hessian_index(const ModelManifold& m, const Eigen::VectorXd& p,
                                              const ZeroTolerances& tol = {});

// Fills the derived CriticalPoint fields (eigenframe, local scale, section).
CriticalPoint make_critical_point(const ModelManifold& m, const Eigen::VectorXd& position,
                                  const ZeroTolerances& tol = {});

LiftedCriticalPoint make_lift(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                              int cp, const IVec& winding);

}  // namespace novlab
