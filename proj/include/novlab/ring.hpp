#pragma once
// Truncated Novikov ring over a rank-r period lattice, plus Dirichlet series.
//
// An element is a finitely supported map gamma -> rational on Z^r together
// with an action bound R: coefficients at action > R are unknown (truncated),
// not asserted zero. All ring operations propagate the weakest honest bound.

#include <map>
#include <optional>

#include "novlab/base.hpp"

namespace novlab {

struct Lattice {
  int rank = 0;
  Eigen::VectorXd periods;  // kappa_1..kappa_r, all > 0

  Lattice() = default;
  Lattice(int r, const Eigen::VectorXd& p) : rank(r), periods(p) { validate(); }

  void validate() const {
    if (rank < 0 || periods.size() != rank) config_error("lattice rank/periods mismatch");
    for (int i = 0; i < rank; ++i)
      if (!(periods[i] > 0)) config_error("lattice periods must be positive");
  }

  double action(const IVec& g) const {
    if (static_cast<int>(g.size()) != rank) config_error("lattice point of wrong rank");
    double a = 0;
    for (int i = 0; i < rank; ++i) a += periods[i] * g[i];
    return a;
  }

  bool same_as(const Lattice& o) const {
    return rank == o.rank && (rank == 0 || (periods - o.periods).cwiseAbs().maxCoeff() == 0.0);
  }

  // Q-independence of the periods cannot be decided on floats; what we can
  // check is that no two distinct points of a finite working support collide
  // in action. Collisions are a config error (bad model setup).
  void check_collisions(const std::vector<IVec>& support, double tol = 1e-12) const;
};

enum class CollisionPolicy { error, merge };

struct DirichletSeries {
  std::vector<double> exponents;    // strictly increasing
  std::vector<Complex> coefficients;

  void validate(double min_gap = 1e-12) const {
    if (exponents.size() != coefficients.size()) config_error("dirichlet series length mismatch");
    for (size_t i = 1; i < exponents.size(); ++i)
      if (!(exponents[i] - exponents[i - 1] >= min_gap))
        config_error("dirichlet exponents not strictly increasing");
  }

  Complex eval(Complex s) const {
    Complex v = 0;
    for (size_t i = 0; i < exponents.size(); ++i)
      v += coefficients[i] * std::exp(-s * exponents[i]);
    return v;
  }
};

struct RingElement {
  Lattice lattice;
  std::map<IVec, Rational> support;  // no zero coefficients stored
  double action_bound = kInf;        // coefficients with action > bound are unknown

  RingElement() = default;
  explicit RingElement(const Lattice& lat, double bound = kInf) : lattice(lat), action_bound(bound) {}

  static RingElement delta(const Lattice& lat, const IVec& g, Rational c = Rational(1));
  static RingElement zero(const Lattice& lat) { return RingElement(lat); }

  void set(const IVec& g, const Rational& c);
  Rational coeff(const IVec& g) const;
  bool is_zero() const { return support.empty(); }
  double min_action() const;  // +inf when empty

  // drop stored coefficients with action > action_bound (they are unknown)
  void truncate();

  friend bool operator==(const RingElement& a, const RingElement& b) {
    return a.lattice.same_as(b.lattice) && a.support == b.support;
  }
};

RingElement add(const RingElement& f, const RingElement& g);
RingElement sub(const RingElement& f, const RingElement& g);
RingElement scale(const RingElement& f, const Rational& c);
RingElement convolve(const RingElement& f, const RingElement& g);

inline RingElement operator+(const RingElement& f, const RingElement& g) { return add(f, g); }
inline RingElement operator-(const RingElement& f, const RingElement& g) { return sub(f, g); }
inline RingElement operator*(const RingElement& f, const RingElement& g) { return convolve(f, g); }

Complex evaluate(const RingElement& f, Complex s);

DirichletSeries to_dirichlet(const RingElement& f, CollisionPolicy policy = CollisionPolicy::error);

// Abscissa of convergence. A finite series is entire: -inf sentinel.
double abscissa_estimate(const DirichletSeries& d);

// Estimate from a coefficient stream: generator(n) yields (lambda_n, a_n) for
// n = 0..n_terms-1 with lambda_n increasing. Classical limsup formula
// rho = limsup log|A_n| / lambda_n over the trailing window (valid when the
// series does not converge at 0; documented as an estimate).
double abscissa_estimate(const std::function<std::pair<double, double>(int)>& generator,
                         int n_terms, int window = 50);

struct IntegerFitOptions {
  double cond_threshold = 1e8;
  // post-rounding residual tolerance, relative to max(1, ||y||_2)
  double residual_tol = 1e-4;
};

struct IntegerFit {
  std::vector<long long> coefficients;
  double pre_round_residual = 0;
  double post_round_residual = 0;
  double condition = 0;
};

// Least squares for y_j ~= sum_k c_k exp(-t_j lambda_k), rounded to integers.
IntegerFit fit_integer_coefficients(const std::vector<std::pair<double, double>>& samples,
                                    const std::vector<double>& exponents,
                                    const IntegerFitOptions& opts = {});

}  // namespace novlab
