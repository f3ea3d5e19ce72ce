#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>

#include "novlab/eigensolve.hpp"

using namespace novlab;

namespace {

HermitianOp diag_op(const Eigen::VectorXd& d) {
  return [d](const Eigen::VectorXcd& v) -> Eigen::VectorXcd { return d.asDiagonal() * v; };
}

}  // namespace

TEST_CASE("dense path matches a direct eigensolve") {
  int dim = 60;
  std::uint64_t state = 424242;
  Eigen::MatrixXcd M(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j)
      M(i, j) = Complex(rand_u01(state) - 0.5, rand_u01(state) - 0.5);
  Eigen::MatrixXcd H = 0.5 * (M + M.adjoint());
  HermitianOp op = [&H](const Eigen::VectorXcd& v) -> Eigen::VectorXcd { return H * v; };
  EigResult r = smallest_eigenpairs(op, dim, 5);
  CHECK(r.dense);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  for (int i = 0; i < 5; ++i) {
    CHECK(r.values[i] == doctest::Approx(es.eigenvalues()[i]).epsilon(1e-12));
    CHECK(r.residuals[i] < 1e-10 * std::max(1.0, H.norm()));
    CHECK(r.vectors.col(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("lanczos recovers clustered and degenerate leading eigenvalues") {
  int dim = 2000;
  Eigen::VectorXd d(dim);
  d[0] = 0.0;
  d[1] = 3e-8;
  d[2] = 3e-8;
  d[3] = 2.0;
  d[4] = 2.0;
  d[5] = 2.0;
  for (int i = 6; i < dim; ++i) d[i] = 30.0 + 0.5 * (i - 6);
  EigOptions opts;
  opts.seed = 7;
  EigResult r = smallest_eigenpairs(diag_op(d), dim, 6, opts);
  CHECK_FALSE(r.dense);
  for (int i = 0; i < 6; ++i) {
    CHECK(std::abs(r.values[i] - d[i]) < 1e-7);
    CHECK(r.residuals[i] <= 1e-7);
  }
  // eigenvectors of the triple cluster span the right coordinate subspace
  double leak = 0;
  for (int i = 3; i < 6; ++i)
    for (int row = 0; row < dim; ++row)
      if (row < 3 || row >= 6) leak = std::max(leak, std::abs(r.vectors(row, i)));
  CHECK(leak < 1e-6);
}

TEST_CASE("lanczos is deterministic for a fixed seed") {
  int dim = 1600;
  Eigen::VectorXd d(dim);
  for (int i = 0; i < dim; ++i) d[i] = (i < 4) ? 0.5 * i : 20.0 + 0.8 * (i - 4);
  EigOptions opts;
  opts.seed = 99;
  EigResult a = smallest_eigenpairs(diag_op(d), dim, 4, opts);
  EigResult b = smallest_eigenpairs(diag_op(d), dim, 4, opts);
  CHECK((a.values - b.values).norm() == 0.0);
  CHECK((a.vectors - b.vectors).norm() == 0.0);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("identity operator exercises the breakdown restart") {
  int dim = 1500;
  HermitianOp op = [](const Eigen::VectorXcd& v) { return v; };
  EigResult r = smallest_eigenpairs(op, dim, 3);
  for (int i = 0; i < 3; ++i) CHECK(r.values[i] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("iteration cap failure raises a numeric error") {
  int dim = 2000;
  Eigen::VectorXd d(dim);
  for (int i = 0; i < dim; ++i) d[i] = static_cast<double>(i) / dim;
  EigOptions opts;
  opts.max_iter = 6;
  bool threw = false;
  try {
    smallest_eigenpairs(diag_op(d), dim, 5, opts);
  } catch (const Error& e) {
    threw = true;
    CHECK(e.kind == ErrKind::numeric);
  }
  CHECK(threw);
}

TEST_CASE("argument validation") {
  HermitianOp op = [](const Eigen::VectorXcd& v) { return v; };
  CHECK_THROWS_AS(smallest_eigenpairs(op, 10, 0), Error);
  CHECK_THROWS_AS(smallest_eigenpairs(op, 10, 11), Error);
}
