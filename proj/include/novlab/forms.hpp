#pragma once
// Differential forms on the flat n-torus, discretized by Fourier collocation
// on a uniform N^n grid. Components are stored per coordinate multi-index
// (sorted q-subsets of axes, lexicographic), row-major with the last axis
// fastest. Spectral differentiation is exact on band-limited data, so d∘d
// and adjointness identities hold to round-off.

#include <vector>

#include "novlab/base.hpp"

namespace novlab {

// all sorted q-element subsets of {0..n-1}, lexicographic
std::vector<std::vector<int>> multi_indices(int n, int q);
long binomial(int n, int k);

struct FormField {
  int n = 0;       // ambient dimension
  int N = 0;       // grid nodes per axis
  int degree = 0;  // q
  std::vector<Eigen::VectorXcd> components;  // binomial(n,q) arrays of size N^n

  static FormField zero(int n, int N, int degree);
  Eigen::Index grid_size() const;
  Eigen::Index flat_dim() const { return static_cast<Eigen::Index>(components.size()) * grid_size(); }

  Eigen::VectorXcd flatten() const;
  static FormField unflatten(const Eigen::VectorXcd& v, int n, int N, int degree);
};

// Real antisymmetric spectral differentiation matrix for period 2pi, even or
// odd N, Nyquist mode annihilated. Cached per N.
const Eigen::MatrixXd& derivative_matrix(int N);

// Interleaved helpers: apply the per-axis derivative along `axis` of a
// row-major last-axis-fastest scalar field.
Eigen::VectorXcd axis_derivative(const Eigen::VectorXcd& field, int n, int N, int axis);

// Grid samples of a smooth scalar (used for the wedge/contraction fields).
Eigen::VectorXd sample_scalar(int n, int N, const std::function<double(const Eigen::VectorXd&)>& f);

// Exterior derivative d: degree q -> q+1 (empty form at q = n).
FormField exterior_d(const FormField& a);

// Adjoint of exterior_d for the flat metric discrete inner product.
FormField codifferential(const FormField& a);

// Wedge with a 1-form given by its n real component fields.
FormField wedge1(const std::vector<Eigen::VectorXd>& w, const FormField& a);

// Contraction (interior product) with the vector field sharp of the same
// component fields; the pointwise adjoint of wedge1.
FormField contract1(const std::vector<Eigen::VectorXd>& w, const FormField& a);

// L2 inner product with the flat volume weight (2pi/N)^n.
Complex inner(const FormField& a, const FormField& b);
double norm(const FormField& a);

FormField operator+(const FormField& a, const FormField& b);
FormField operator-(const FormField& a, const FormField& b);
FormField operator*(Complex c, const FormField& a);

// Deterministic band-limited random form: modes with |frequency| <= band on
// every axis, coefficients from the seeded generator.
FormField random_band_limited(int n, int N, int degree, int band, std::uint64_t seed);

}  // namespace novlab
