#pragma once
// Smallest eigenpairs of a Hermitian operator given only by its action.
// Small problems are assembled densely; larger ones run Lanczos with full
// reorthogonalization and residual-verified Ritz pairs. Deterministic for a
// fixed seed regardless of thread count.

#include "novlab/base.hpp"

namespace novlab {

using HermitianOp = std::function<Eigen::VectorXcd(const Eigen::VectorXcd&)>;

struct EigOptions {
  double tol = 1e-7;        // residual bound, relative to unit eigenvectors
  int max_iter = 0;         // Krylov cap; 0 means 10*sqrt(dim)
  std::uint64_t seed = 12345;
  Eigen::Index dense_threshold = 1400;
  int check_interval = 40;  // Ritz convergence test cadence
  int restarts = 8;         // thick restarts allowed once the basis cap fills
};

struct EigResult {
  Eigen::VectorXd values;     // ascending
  Eigen::MatrixXcd vectors;   // columns, unit norm
  Eigen::VectorXd residuals;  // ||A v - lambda v|| per pair
  int iterations = 0;
  bool dense = false;
};

EigResult smallest_eigenpairs(const HermitianOp& op, Eigen::Index dim, int k,
                              const EigOptions& opts = {});

}  // namespace novlab
