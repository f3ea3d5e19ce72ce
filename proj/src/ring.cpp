#include "novlab/ring.hpp"

#include <algorithm>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace novlab {

namespace {
std::string ivec_str(const IVec& g) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
  os << ")";
  return os.str();
}
}  // namespace

void Lattice::check_collisions(const std::vector<IVec>& support, double tol) const {
  std::vector<std::pair<double, const IVec*>> acts;
  acts.reserve(support.size());
  for (const auto& g : support) acts.emplace_back(action(g), &g);
  std::sort(acts.begin(), acts.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (size_t i = 1; i < acts.size(); ++i) {
    if (std::abs(acts[i].first - acts[i - 1].first) < tol && !(*acts[i].second == *acts[i - 1].second)) {
      config_error("action collision between lattice points " + ivec_str(*acts[i - 1].second) +
                   " and " + ivec_str(*acts[i].second) + " (periods not Q-independent?)");
    }
  }
}

RingElement RingElement::delta(const Lattice& lat, const IVec& g, Rational c) {
  RingElement f(lat);
  f.set(g, c);
  return f;
}

void RingElement::set(const IVec& g, const Rational& c) {
  if (static_cast<int>(g.size()) != lattice.rank) config_error("support point of wrong rank");
  if (c.is_zero())
    support.erase(g);
  else
    support[g] = c;
}

Rational RingElement::coeff(const IVec& g) const {
  auto it = support.find(g);
  return it == support.end() ? Rational(0) : it->second;
}

double RingElement::min_action() const {
  double m = kInf;
  for (const auto& [g, c] : support) m = std::min(m, lattice.action(g));
  return m;
}

void RingElement::truncate() {
  for (auto it = support.begin(); it != support.end();) {
    if (lattice.action(it->first) > action_bound)
      it = support.erase(it);
    else
      ++it;
  }
}

static void require_same_lattice(const RingElement& f, const RingElement& g) {
  if (!f.lattice.same_as(g.lattice)) config_error("ring elements on different lattices");
}

RingElement add(const RingElement& f, const RingElement& g) {
  require_same_lattice(f, g);
  RingElement r(f.lattice, std::min(f.action_bound, g.action_bound));
  r.support = f.support;
  for (const auto& [k, c] : g.support) {
    Rational s = r.coeff(k) + c;
    r.set(k, s);
  }
  r.truncate();
  return r;
}

RingElement sub(const RingElement& f, const RingElement& g) { return add(f, scale(g, Rational(-1))); }

RingElement scale(const RingElement& f, const Rational& c) {
  RingElement r(f.lattice, f.action_bound);
  if (c.is_zero()) return r;
  for (const auto& [k, v] : f.support) r.support[k] = v * c;
  return r;
}

RingElement convolve(const RingElement& f, const RingElement& g) {
  require_same_lattice(f, g);
  // Unknown contributions start at bound(f)+minact(g), bound(g)+minact(f), or
  // bound(f)+bound(g) (unknown x unknown). With supports kept inside their
  // bounds the third term is dominated whenever a support is nonempty; it
  // matters only for elements that are zero as far as known.
  double bound = std::min({f.action_bound + g.min_action(), g.action_bound + f.min_action(),
                           f.action_bound + g.action_bound});
  RingElement r(f.lattice, bound);
  for (const auto& [a, ca] : f.support) {
    for (const auto& [b, cb] : g.support) {
      IVec k(a.size());
      for (size_t i = 0; i < k.size(); ++i) k[i] = a[i] + b[i];
      Rational s = r.coeff(k) + ca * cb;
      r.set(k, s);
    }
  }
  r.truncate();
  return r;
}

Complex evaluate(const RingElement& f, Complex s) {
  Complex v = 0;
  for (const auto& [g, c] : f.support) v += c.to_double() * std::exp(-s * f.lattice.action(g));
  return v;
}

DirichletSeries to_dirichlet(const RingElement& f, CollisionPolicy policy) {
  struct Term {
    double act;
    const IVec* g;
    Rational c;
  };
  std::vector<Term> terms;
  terms.reserve(f.support.size());
  for (const auto& [g, c] : f.support) terms.push_back({f.lattice.action(g), &g, c});
  std::sort(terms.begin(), terms.end(), [](const Term& a, const Term& b) { return a.act < b.act; });

  DirichletSeries d;
  size_t i = 0;
  while (i < terms.size()) {
    size_t j = i + 1;
    Rational sum = terms[i].c;
    while (j < terms.size() && terms[j].act - terms[i].act < 1e-12) {
      if (policy == CollisionPolicy::error)
        config_error("action collision between lattice points " + ivec_str(*terms[i].g) + " and " +
                     ivec_str(*terms[j].g) + " at action " + std::to_string(terms[i].act));
      sum = sum + terms[j].c;
      ++j;
    }
    if (!sum.is_zero()) {
      d.exponents.push_back(terms[i].act);
      d.coefficients.push_back(Complex(sum.to_double(), 0.0));
    }
    i = j;
  }
  d.validate();
  return d;
}

double abscissa_estimate(const DirichletSeries& d) {
  (void)d;
  return -kInf;  // finite Dirichlet polynomials are entire
}

double abscissa_estimate(const std::function<std::pair<double, double>(int)>& generator,
                         int n_terms, int window) {
  if (n_terms < 3) config_error("abscissa estimate needs at least 3 exponents");
  std::vector<double> lambda(n_terms), partial(n_terms);
  double acc = 0;
  double prev_lambda = -kInf;
  for (int n = 0; n < n_terms; ++n) {
    auto [l, a] = generator(n);
    if (l <= prev_lambda) config_error("abscissa generator exponents must increase");
    prev_lambda = l;
    acc += a;
    lambda[n] = l;
    partial[n] = acc;
  }
  int w = std::min(window, n_terms);
  double rho = -kInf;
  bool seen = false;
  for (int n = n_terms - w; n < n_terms; ++n) {
    if (partial[n] == 0 || lambda[n] <= 0) continue;
    rho = std::max(rho, std::log(std::abs(partial[n])) / lambda[n]);
    seen = true;
  }
  return seen ? rho : -kInf;
}

IntegerFit fit_integer_coefficients(const std::vector<std::pair<double, double>>& samples,
                                    const std::vector<double>& exponents,
                                    const IntegerFitOptions& opts) {
  const int m = static_cast<int>(samples.size());
  const int k = static_cast<int>(exponents.size());
  if (k == 0) config_error("integer fit needs at least one exponent");
  if (m < k) config_error("integer fit needs #samples >= #exponents");
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      if (samples[i].first == samples[j].first) config_error("integer fit t-values must be distinct");

  Eigen::MatrixXd A(m, k);
  Eigen::VectorXd y(m);
  for (int i = 0; i < m; ++i) {
    y[i] = samples[i].second;
    for (int j = 0; j < k; ++j) A(i, j) = std::exp(-samples[i].first * exponents[j]);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double smin = svd.singularValues()[k - 1];
  double smax = svd.singularValues()[0];
  IntegerFit fit;
  fit.condition = (smin > 0) ? smax / smin : kInf;
  if (!(fit.condition < opts.cond_threshold))
    numeric_error("integer fit design matrix ill-conditioned (cond=" + std::to_string(fit.condition) + ")");

  Eigen::VectorXd c = svd.solve(y);
  fit.pre_round_residual = (A * c - y).norm();
  Eigen::VectorXd ci(k);
  fit.coefficients.resize(k);
  for (int j = 0; j < k; ++j) {
    ci[j] = std::round(c[j]);
    fit.coefficients[j] = static_cast<long long>(ci[j]);
  }
  fit.post_round_residual = (A * ci - y).norm();
  double tol = opts.residual_tol * std::max(1.0, y.norm());
  if (!(fit.post_round_residual <= tol))
    numeric_error("no integer fit: rounded residual " + std::to_string(fit.post_round_residual) +
                  " exceeds tolerance " + std::to_string(tol));
  return fit;
}

}  // namespace novlab
