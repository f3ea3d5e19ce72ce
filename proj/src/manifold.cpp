#include "novlab/manifold.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace novlab {

namespace {

double term_arg(const TrigTerm& t, const Eigen::VectorXd& theta) {
  double a = t.phase;
  for (size_t i = 0; i < t.wave.size(); ++i) a += t.wave[i] * theta[static_cast<int>(i)];
  return a;
}

std::string point_str(const Eigen::VectorXd& p) {
  std::ostringstream os;
  os << "(";
  for (int i = 0; i < p.size(); ++i) os << (i ? ", " : "") << p[i];
  os << ")";
  return os.str();
}

}  // namespace

ModelManifold::ModelManifold(int dim, Eigen::VectorXd kappa, std::vector<TrigTerm> terms,
                             Eigen::MatrixXd metric)
    : dim_(dim), kappa_(std::move(kappa)), terms_(std::move(terms)), metric_(std::move(metric)) {
  if (dim_ < 1) config_error("manifold dimension must be >= 1");
  if (kappa_.size() != dim_) config_error("kappa length does not match dimension");
  for (const auto& t : terms_) {
    if (t.wave.size() != static_cast<size_t>(dim_))
      config_error("trig term frequency vector has wrong length");
  }
  if (metric_.size() == 0) metric_ = Eigen::MatrixXd::Identity(dim_, dim_);
  if (metric_.rows() != dim_ || metric_.cols() != dim_) config_error("metric has wrong shape");
  if ((metric_ - metric_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + metric_.norm()))
    config_error("metric not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(metric_);
  if (es.eigenvalues().minCoeff() <= 1e-10) config_error("metric not positive definite");
  metric_inv_ = metric_.inverse();

  for (int i = 0; i < dim_; ++i)
    if (kappa_[i] != 0.0) deck_axes_.push_back(i);
  Eigen::VectorXd periods(static_cast<int>(deck_axes_.size()));
  for (size_t j = 0; j < deck_axes_.size(); ++j)
    periods[static_cast<int>(j)] = kTwoPi * std::abs(kappa_[deck_axes_[j]]);
  lattice_ = Lattice(static_cast<int>(deck_axes_.size()), periods);
}

double ModelManifold::F(const Eigen::VectorXd& theta) const {
  double v = 0.0;
  for (const auto& t : terms_) v += t.amplitude * std::cos(term_arg(t, theta));
  return v;
}

Eigen::VectorXd ModelManifold::grad_F(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
  for (const auto& t : terms_) {
    double s = -t.amplitude * std::sin(term_arg(t, theta));
    for (int i = 0; i < dim_; ++i) g[i] += s * t.wave[i];
  }
  return g;
}

Eigen::MatrixXd ModelManifold::hess_F(const Eigen::VectorXd& theta) const {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim_, dim_);
  for (const auto& t : terms_) {
    double c = -t.amplitude * std::cos(term_arg(t, theta));
    for (int i = 0; i < dim_; ++i)
      for (int j = 0; j < dim_; ++j) h(i, j) += c * t.wave[i] * t.wave[j];
  }
  return h;
}

double ModelManifold::h_lift(const Eigen::VectorXd& lifted) const {
  Eigen::VectorXd origin = Eigen::VectorXd::Zero(dim_);
  return kappa_.dot(lifted) + F(lifted) - F(origin);
}

double ModelManifold::deck_action(const IVec& winding) const {
  double a = 0.0;
  for (int i = 0; i < dim_; ++i) a += kTwoPi * kappa_[i] * winding[i];
  return a;
}

IVec ModelManifold::deck_project(const IVec& winding) const {
  IVec g(deck_axes_.size());
  for (size_t j = 0; j < deck_axes_.size(); ++j) {
    int axis = deck_axes_[j];
    g[j] = kappa_[axis] > 0 ? winding[axis] : -winding[axis];
  }
  return g;
}

std::uint64_t ModelManifold::config_hash() const {
  std::vector<unsigned char> buf;
  auto push = [&buf](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf.insert(buf.end(), b, b + n);
  };
  std::int64_t d = dim_;
  push(&d, sizeof d);
  for (int i = 0; i < dim_; ++i) push(&kappa_[i], sizeof(double));
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < dim_; ++j) push(&metric_(i, j), sizeof(double));
  for (const auto& t : terms_) {
    for (int w : t.wave) {
      std::int64_t wi = w;
      push(&wi, sizeof wi);
    }
    push(&t.amplitude, sizeof(double));
    push(&t.phase, sizeof(double));
  }
  return fnv1a64(std::string(buf.begin(), buf.end()));
}

ModelManifold ModelManifold::t1_exact() {
  Eigen::VectorXd k(1);
  k << 0.0;
  return ModelManifold(1, k, {TrigTerm{{1}, 1.0, 0.0}});
}

ModelManifold ModelManifold::t1_linear(double kappa) {
  Eigen::VectorXd k(1);
  k << kappa;
  return ModelManifold(1, k, {});
}

ModelManifold ModelManifold::t2_exact() {
  Eigen::VectorXd k(2);
  k << 0.0, 0.0;
  return ModelManifold(2, k, {TrigTerm{{1, 0}, 1.0, 0.0}, TrigTerm{{0, 1}, 1.0, 0.0}});
}

ModelManifold ModelManifold::t2_novikov(double k1, double amp) {
  Eigen::VectorXd k(2);
  k << k1, 0.0;
  return ModelManifold(2, k, {TrigTerm{{1, 0}, amp, 0.0}, TrigTerm{{0, 1}, amp, 0.0}});
}

ModelManifold ModelManifold::t4_product() {
  Eigen::VectorXd k = Eigen::VectorXd::Zero(4);
  std::vector<TrigTerm> terms;
  for (int i = 0; i < 4; ++i) {
    IVec w(4, 0);
    w[i] = 1;
    terms.push_back(TrigTerm{w, 1.0, 0.0});
  }
  return ModelManifold(4, k, terms);
}

std::pair<int, Eigen::MatrixXd> hessian_index(const ModelManifold& m, const Eigen::VectorXd& p,
                                              const ZeroTolerances& tol) {
  if (m.omega(p).norm() >= tol.newton_tol)
    config_error("hessian_index: point is not a zero of the form: " + point_str(p));
  Eigen::MatrixXd h = m.hess_F(p);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  double det = es.eigenvalues().prod();
  if (std::abs(det) <= tol.degeneracy_tol)
    numeric_error("degenerate Hessian at " + point_str(p));
  int idx = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()[i] < 0) ++idx;
  return {idx, h};
}

CriticalPoint make_critical_point(const ModelManifold& m, const Eigen::VectorXd& position,
                                  const ZeroTolerances& tol) {
  CriticalPoint cp;
  cp.position = wrap_2pi(position);
  // canonicalize coordinates that wrapped to just below 2pi
  for (int i = 0; i < cp.position.size(); ++i)
    if (cp.position[i] > kTwoPi - 1e-9) cp.position[i] = 0.0;
  auto [idx, hess] = hessian_index(m, cp.position, tol);
  cp.index = idx;
  cp.hessian = hess;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess);
  cp.eig_values = es.eigenvalues();
  cp.eig_vectors = es.eigenvectors();
  for (int c = 0; c < cp.eig_vectors.cols(); ++c) {
    for (int r = 0; r < cp.eig_vectors.rows(); ++r) {
      double v = cp.eig_vectors(r, c);
      if (std::abs(v) > 1e-12) {
        if (v < 0) cp.eig_vectors.col(c) *= -1.0;
        break;
      }
    }
  }
  cp.local_scale = 0.5 * std::exp(cp.eig_values.cwiseAbs().array().log().mean());

  cp.section_lift = cp.position;
  cp.section_deck.assign(m.dim(), 0);
  const Lattice& lat = m.lattice();
  if (lat.rank >= 1) {
    int axis = m.deck_axes()[0];
    double period = lat.periods[0];
    double h = m.h_lift(cp.section_lift);
    auto k = static_cast<long long>(std::floor(h / period));
    int dir = m.kappa()[axis] > 0 ? -1 : 1;
    cp.section_lift[axis] += kTwoPi * dir * static_cast<double>(k);
    cp.section_deck[axis] = dir * static_cast<int>(k);
    // guard the floor against rounding at the boundary
    while (m.h_lift(cp.section_lift) < 0.0) {
      cp.section_lift[axis] -= kTwoPi * dir;
      cp.section_deck[axis] -= dir;
    }
    while (m.h_lift(cp.section_lift) >= period) {
      cp.section_lift[axis] += kTwoPi * dir;
      cp.section_deck[axis] += dir;
    }
  }
  cp.h_section = m.h_lift(cp.section_lift);
  return cp;
}

LiftedCriticalPoint make_lift(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                              int cp, const IVec& winding) {
  LiftedCriticalPoint l;
  l.cp = cp;
  l.winding = winding;
  l.deck = m.deck_project(winding);
  Eigen::VectorXd lift = cps[cp].position;
  for (int i = 0; i < m.dim(); ++i) lift[i] += kTwoPi * winding[i];
  l.h_value = m.h_lift(lift);
  return l;
}

std::vector<CriticalPoint> find_zeros(const ModelManifold& m, int grid_per_axis,
                                      const ZeroTolerances& tol, int threads) {
  if (grid_per_axis < 8) config_error("find_zeros: grid_per_axis must be >= 8");
  int n = m.dim();
  long long n_seeds = 1;
  for (int i = 0; i < n; ++i) n_seeds *= grid_per_axis;

  struct SeedResult {
    bool converged = false;
    bool degenerate = false;
    Eigen::VectorXd point;
  };
  std::vector<SeedResult> results(static_cast<size_t>(n_seeds));

  parallel_for(static_cast<size_t>(n_seeds), static_cast<size_t>(std::max(1, threads)),
               [&](size_t seed) {
                 Eigen::VectorXd theta(n);
                 long long rem = static_cast<long long>(seed);
                 for (int i = 0; i < n; ++i) {
                   theta[i] = kTwoPi * (rem % grid_per_axis) / grid_per_axis;
                   rem /= grid_per_axis;
                 }
                 for (int it = 0; it < 60; ++it) {
                   Eigen::VectorXd w = m.omega(theta);
                   if (w.norm() < tol.newton_tol) {
                     Eigen::MatrixXd h = m.hess_F(theta);
                     double det = h.determinant();
                     if (std::abs(det) <= tol.degeneracy_tol) {
                       results[seed].degenerate = true;
                       results[seed].point = wrap_2pi(theta);
                       return;
                     }
                     // polish to machine precision so dedup/sort see one value
                     for (int extra = 0; extra < 2; ++extra)
                       theta -= h.fullPivLu().solve(m.omega(theta));
                     results[seed].converged = true;
                     results[seed].point = theta;
                     return;
                   }
                   Eigen::MatrixXd jac = m.hess_F(theta);
                   Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
                   if (lu.rank() < n) {
                     // singular Jacobian: a nearby zero would be degenerate
                     if (w.norm() < 1e-6) {
                       results[seed].degenerate = true;
                       results[seed].point = wrap_2pi(theta);
                     }
                     return;
                   }
                   Eigen::VectorXd step = lu.solve(w);
                   double cap = 0.5 * kTwoPi;
                   if (step.norm() > cap) step *= cap / step.norm();
                   theta -= step;
                 }
               });

  for (const auto& r : results)
    if (r.degenerate)
      numeric_error("find_zeros: degenerate zero near " + point_str(r.point) +
                    " (form is not Morse)");

  std::vector<Eigen::VectorXd> points;
  for (const auto& r : results) {
    if (!r.converged) continue;
    Eigen::VectorXd cand = wrap_2pi(r.point);
    bool dup = false;
    for (const auto& p : points)
      if (torus_dist(p, cand) < tol.dedup) {
        dup = true;
        break;
      }
    if (!dup) points.push_back(cand);
  }

  std::vector<CriticalPoint> cps;
  cps.reserve(points.size());
  for (const auto& p : points) cps.push_back(make_critical_point(m, p, tol));
  std::sort(cps.begin(), cps.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
    for (int i = 0; i < a.position.size(); ++i) {
      if (a.position[i] < b.position[i] - 1e-12) return true;
      if (a.position[i] > b.position[i] + 1e-12) return false;
    }
    return false;
  });
  return cps;
}

}  // namespace novlab
