#pragma once
// Novikov cochain complex over the truncated ring: assembly from trajectory
// counts, exact d^2 verification, Dirichlet specialization, homology ranks.

#include <string>
#include <vector>

#include "novlab/flow.hpp"
#include "novlab/ring.hpp"

namespace novlab {

struct RingMatrix {
  int rows = 0, cols = 0;
  std::vector<RingElement> data;  // row-major

  static RingMatrix filled(int r, int c, const RingElement& e) {
    RingMatrix m;
    m.rows = r;
    m.cols = c;
    m.data.assign(static_cast<size_t>(r) * c, e);
    return m;
  }
  RingElement& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
  const RingElement& at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
};

struct NovikovComplex {
  Lattice lattice;
  double action_bound = 0.0;
  // generators[q] = ids of critical points of index q, ascending
  std::vector<std::vector<int>> generators;
  // boundary[q] maps degree q to q+1; rows = Cr_{q+1}, cols = Cr_q
  std::vector<RingMatrix> boundary;
  // section h differences h_sigma(x) - h_sigma(y) aligned with boundary[q]
  std::vector<Eigen::MatrixXd> h_diff;
};

struct DSquaredReport {
  double honest_bound = kInf;  // below this the compositions are proven zero
  double max_violation = 0.0;  // exact rationals: any violation throws instead
  int compositions = 0;
};

struct SpecializedComplex {
  Complex s{0.0, 0.0};
  std::vector<std::vector<int>> generators;
  std::vector<Eigen::MatrixXcd> matrices;  // same shapes as boundary
  std::vector<std::string> warnings;
};

struct HomologyReport {
  std::vector<int> betti;  // per degree 0..n
  std::vector<std::string> warnings;
};

// The table must come from a full build (every critical point scanned); a
// single-pair slice is rejected since absent entries would read as zeros.
NovikovComplex assemble(const IncidenceTable& table, const ModelManifold& m,
                        const std::vector<CriticalPoint>& cps);

// Exact convolution check of every consecutive composition; a nonzero
// coefficient below the propagated bound throws with the witnessing triple.
DSquaredReport verify_d_squared(const NovikovComplex& c);

// Entrywise Dirichlet evaluation times the section offset e^{-s h_diff}.
// Re(s) <= rho_hat only degrades convergence of the untruncated series, so it
// warns rather than fails.
SpecializedComplex specialize(const NovikovComplex& c, Complex s, double rho_hat = -kInf);

// SVD ranks with relative threshold; betti_q = dim C^q - rank d^q - rank d^{q-1}.
HomologyReport homology_ranks(const SpecializedComplex& sc);

}  // namespace novlab
