#include "novlab/witten.hpp"

#include <algorithm>
#include <sstream>

#include <Eigen/Dense>

namespace novlab {

namespace {

void check_spectral_inputs(const ModelManifold& m, int N) {
  if (N < 8) config_error("spectral grid needs N >= 8");
  if (!m.metric().isIdentity(0.0))
    config_error("spectral operators support the flat identity metric only");
}

// Even grids carry an unpaired Nyquist mode that the antisymmetric derivative
// matrix must annihilate, which would hand Delta_t a spurious kernel. One
// extra node makes the frequency set symmetric and every discrete mode exact.
int odd_grid(int N) { return (N % 2 == 0) ? N + 1 : N; }

struct OmegaFields {
  std::vector<Eigen::VectorXd> w;  // per-axis component samples
  double max_w2 = 0.0;             // max |omega|^2 over the grid
  double max_hess = 0.0;           // max Hessian row norm, for scale estimates
};

OmegaFields omega_fields(const ModelManifold& m, int N) {
  OmegaFields f;
  int n = m.dim();
  f.w.resize(n);
  for (int a = 0; a < n; ++a)
    f.w[a] = sample_scalar(n, N, [&](const Eigen::VectorXd& th) { return m.omega(th)[a]; });
  Eigen::Index sz = f.w[0].size();
  for (Eigen::Index i = 0; i < sz; ++i) {
    double s = 0;
    for (int a = 0; a < n; ++a) s += f.w[a][i] * f.w[a][i];
    f.max_w2 = std::max(f.max_w2, s);
  }
  Eigen::VectorXd probe = Eigen::VectorXd::Constant(n, 0.37);
  for (int s = 0; s < 16; ++s) {
    f.max_hess = std::max(f.max_hess, m.hess_F(probe).cwiseAbs().rowwise().sum().maxCoeff());
    probe.array() += kTwoPi / 16.0;
  }
  return f;
}

double operator_scale(int n, int N, double t, const OmegaFields& f) {
  double kmax = (N - 1) / 2;
  return 2.0 * n * kmax * kmax + 2.0 * t * t * f.max_w2 + 2.0 * t * n * f.max_hess + 1.0;
}

std::string format_eigs(const Eigen::VectorXd& v) {
  std::ostringstream os;
  os << "[";
  for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << "]";
  return os.str();
}

// C^inf bump: 1 on [0, eta/2], 0 beyond eta
double cutoff(double u, double eta) {
  if (u <= 0.5 * eta) return 1.0;
  if (u >= eta) return 0.0;
  auto soft = [](double x) { return x > 0 ? std::exp(-1.0 / x) : 0.0; };
  double x = (eta - u) / (0.5 * eta);
  return soft(x) / (soft(x) + soft(1.0 - x));
}

}  // namespace

OperatorHandle build_d_t(const ModelManifold& m, double t, int degree, int N) {
  check_spectral_inputs(m, N);
  N = odd_grid(N);
  if (degree < 0 || degree > m.dim()) config_error("build_d_t: degree out of range");
  OperatorHandle h;
  h.kind = "d_t";
  h.t = t;
  h.degree = degree;
  h.n = m.dim();
  h.N = N;
  FormField probe = FormField::zero(h.n, N, degree);
  h.dim = probe.flat_dim();
  auto f = omega_fields(m, N);
  h.scale_estimate = operator_scale(h.n, N, t, f);
  h.apply = [w = f.w, t](const FormField& a) { return exterior_d(a) + t * wedge1(w, a); };
  return h;
}

OperatorHandle build_d_t_adjoint(const ModelManifold& m, double t, int degree, int N) {
  check_spectral_inputs(m, N);
  N = odd_grid(N);
  if (degree < 0 || degree > m.dim()) config_error("build_d_t_adjoint: degree out of range");
  OperatorHandle h;
  h.kind = "d_t_adjoint";
  h.t = t;
  h.degree = degree;
  h.n = m.dim();
  h.N = N;
  FormField probe = FormField::zero(h.n, N, degree);
  h.dim = probe.flat_dim();
  auto f = omega_fields(m, N);
  h.scale_estimate = operator_scale(h.n, N, t, f);
  h.apply = [w = f.w, t](const FormField& a) { return codifferential(a) + t * contract1(w, a); };
  return h;
}

OperatorHandle build_delta_t(const ModelManifold& m, double t, int degree, int N) {
  check_spectral_inputs(m, N);
  N = odd_grid(N);
  if (degree < 0 || degree > m.dim()) config_error("build_delta_t: degree out of range");
  OperatorHandle h;
  h.kind = "delta_t";
  h.t = t;
  h.degree = degree;
  h.n = m.dim();
  h.N = N;
  FormField probe = FormField::zero(h.n, N, degree);
  h.dim = probe.flat_dim();
  auto f = omega_fields(m, N);
  h.scale_estimate = operator_scale(h.n, N, t, f);
  h.apply = [w = f.w, t](const FormField& a) {
    FormField da = exterior_d(a) + t * wedge1(w, a);
    FormField up = codifferential(da) + t * contract1(w, da);
    FormField ca = codifferential(a) + t * contract1(w, a);
    FormField down = exterior_d(ca) + t * wedge1(w, ca);
    return up + down;
  };
  return h;
}

OperatorHandle build_local_model_operator(const ModelManifold& m,
                                          const std::vector<CriticalPoint>& cps, int cp,
                                          double t, int degree, int N) {
  check_spectral_inputs(m, N);
  N = odd_grid(N);
  if (cp < 0 || cp >= static_cast<int>(cps.size()))
    config_error("build_local_model_operator: bad cp id");
  if (degree < 0 || degree > m.dim())
    config_error("build_local_model_operator: degree out of range");
  const CriticalPoint& y = cps[cp];
  int n = m.dim();
  std::vector<Eigen::VectorXd> w(n);
  for (int a = 0; a < n; ++a)
    w[a] = sample_scalar(n, N, [&](const Eigen::VectorXd& th) {
      double s = 0;
      for (int b = 0; b < n; ++b) s += y.hessian(a, b) * min_image(th[b] - y.position[b]);
      return s;
    });
  OperatorHandle h;
  h.kind = "local_model";
  h.t = t;
  h.degree = degree;
  h.n = n;
  h.N = N;
  FormField probe = FormField::zero(n, N, degree);
  h.dim = probe.flat_dim();
  double kmax = (N - 1) / 2;
  double hn = y.hessian.cwiseAbs().rowwise().sum().maxCoeff();
  h.scale_estimate = 2.0 * n * kmax * kmax + 2.0 * t * t * hn * hn * kPi * kPi * n + 1.0;
  h.apply = [w, t](const FormField& a) {
    FormField da = exterior_d(a) + t * wedge1(w, a);
    FormField up = codifferential(da) + t * contract1(w, da);
    FormField ca = codifferential(a) + t * contract1(w, a);
    FormField down = exterior_d(ca) + t * wedge1(w, ca);
    return up + down;
  };
  return h;
}

Spectrum spectrum(const OperatorHandle& op, int k, std::uint64_t seed) {
  if (k < 1) config_error("spectrum: k must be positive");
  if (10 * static_cast<Eigen::Index>(k) > op.dim)
    config_error("spectrum: requested count exceeds a tenth of the discretized dimension");
  HermitianOp flat = [&op](const Eigen::VectorXcd& v) {
    return op.apply(FormField::unflatten(v, op.n, op.N, op.degree)).flatten();
  };
  EigOptions opts;
  opts.seed = seed;
  EigResult r = smallest_eigenpairs(flat, op.dim, k, opts);
  for (int i = 0; i < r.values.size(); ++i)
    if (r.values[i] < -1e-9)
      numeric_error("spectrum: eigenvalue " + std::to_string(r.values[i]) +
                    " below the positivity floor -1e-9");
  Spectrum s;
  s.values = r.values;
  s.residuals = r.residuals;
  s.iterations = r.iterations;
  s.dense = r.dense;
  s.vectors.reserve(k);
  for (int i = 0; i < k; ++i)
    s.vectors.push_back(FormField::unflatten(r.vectors.col(i), op.n, op.N, op.degree));
  return s;
}

std::vector<double> local_model_spectrum(const LocalModel& lm, int count) {
  if (lm.n < 1 || lm.q < 0 || lm.q > lm.n || lm.k < 0 || lm.k > lm.n)
    config_error("local_model_spectrum: invalid dimensions");
  if (lm.c <= 0 || lm.t <= 0) config_error("local_model_spectrum: c and t must be positive");
  if (count < 1) config_error("local_model_spectrum: count must be positive");
  // Each component multi-index I contributes a shifted oscillator ladder:
  // eigenvalues 4ct (m + p(I)) where p counts ascending axes inside I plus
  // descending axes outside I, and m runs over total occupation numbers with
  // multiplicity C(m + n - 1, n - 1).
  std::vector<int> shifts;
  for (const auto& I : multi_indices(lm.n, lm.q)) {
    int in_desc = 0, in_asc = 0;
    for (int a : I) (a < lm.k ? in_desc : in_asc) += 1;
    shifts.push_back(in_asc + (lm.k - in_desc));
  }
  std::vector<double> out;
  for (int level = 0; static_cast<int>(out.size()) < count; ++level) {
    for (int p : shifts) {
      if (level < p) continue;
      long mult = binomial(level - p + lm.n - 1, lm.n - 1);
      for (long i = 0; i < mult; ++i) out.push_back(4.0 * lm.c * lm.t * level);
    }
  }
  out.resize(count);
  return out;
}

FormField build_quasimode(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                          int cp, double t, int N, double eta, int degree) {
  check_spectral_inputs(m, N);
  N = odd_grid(N);
  if (cp < 0 || cp >= static_cast<int>(cps.size())) config_error("build_quasimode: bad cp id");
  if (t <= 0) config_error("build_quasimode: t must be positive");
  const CriticalPoint& y = cps[cp];
  int n = m.dim();
  int q = degree < 0 ? y.index : degree;
  if (q < 0 || q > n) config_error("build_quasimode: degree out of range");

  double min_dist = kTwoPi;
  for (size_t i = 0; i < cps.size(); ++i)
    for (size_t j = i + 1; j < cps.size(); ++j)
      min_dist = std::min(min_dist, torus_dist(cps[i].position, cps[j].position));
  if (eta <= 0) eta = 0.45 * min_dist;
  if (eta >= 0.5 * min_dist)
    config_error("build_quasimode: cutoff radius must stay below half the minimal "
                 "critical point distance " + std::to_string(min_dist));

  auto indices = multi_indices(n, q);
  std::vector<double> coef(indices.size());
  for (size_t c = 0; c < indices.size(); ++c) {
    Eigen::MatrixXd sub(q, q);
    for (int r = 0; r < q; ++r)
      for (int col = 0; col < q; ++col) sub(r, col) = y.eig_vectors(indices[c][r], col);
    coef[c] = q == 0 ? 1.0 : sub.determinant();
  }

  FormField out = FormField::zero(n, N, q);
  Eigen::Index sz = out.grid_size();
  Eigen::VectorXd d(n), xi(n);
  for (Eigen::Index idx = 0; idx < sz; ++idx) {
    Eigen::Index rem = idx;
    for (int a = n - 1; a >= 0; --a) {
      double th = kTwoPi * static_cast<double>(rem % N) / N;
      d[a] = min_image(th - y.position[a]);
      rem /= N;
    }
    double u = d.norm();
    if (u >= eta) continue;
    xi.noalias() = y.eig_vectors.transpose() * d;
    double expo = 0;
    for (int i = 0; i < n; ++i) expo += std::abs(y.eig_values[i]) * xi[i] * xi[i];
    double g = std::exp(-0.5 * t * expo) * cutoff(u, eta);
    for (size_t c = 0; c < indices.size(); ++c) out.components[c][idx] = coef[c] * g;
  }
  double nn = norm(out);
  if (nn <= 0) numeric_error("build_quasimode: vanishing discretization");
  for (auto& c : out.components) c /= nn;
  return out;
}

SpectrumReport verify_gap(const ModelManifold& m, int q, const std::vector<double>& t_grid,
                          int N, std::uint64_t seed) {
  check_spectral_inputs(m, N);
  N = odd_grid(N);
  if (q < 0 || q > m.dim()) config_error("verify_gap: degree out of range");
  if (t_grid.size() < 4) config_error("verify_gap: need at least 4 grid points");
  for (size_t i = 0; i < t_grid.size(); ++i) {
    if (t_grid[i] <= 0) config_error("verify_gap: t values must be positive");
    if (i > 0 && t_grid[i] <= t_grid[i - 1]) config_error("verify_gap: t grid must increase");
  }

  std::vector<CriticalPoint> cps = find_zeros(m, 24);
  int m_q = 0;
  for (const auto& c : cps) m_q += (c.index == q) ? 1 : 0;

  SpectrumReport rep;
  rep.q = q;
  rep.N = N;
  rep.crit_count = m_q;
  rep.t_grid = t_grid;

  OperatorHandle last_op;
  for (double t : t_grid) {
    OperatorHandle op = build_delta_t(m, t, q, N);
    int cap = static_cast<int>(op.dim / 10);
    int k = std::min(std::max(m_q + 1, 2), cap);
    if (k < m_q + 1)
      config_error("verify_gap: grid too coarse to resolve " + std::to_string(m_q) +
                   " small eigenvalues");
    Spectrum sp = spectrum(op, k, seed);
    // the gap endpoint must be visible above the candidate threshold
    while (sp.values[sp.values.size() - 1] < 1.0 && 2 * k <= cap) {
      k *= 2;
      sp = spectrum(op, k, seed);
    }
    SpectrumSlice sl;
    sl.t = t;
    sl.eigenvalues = sp.values;
    for (int i = 0; i < sp.values.size(); ++i) {
      if (sp.values[i] < 1.0) {
        sl.small_count += 1;
        sl.largest_small = std::max(sl.largest_small, sp.values[i]);
      } else if (sp.values[i] < sl.first_large) {
        sl.first_large = sp.values[i];
      }
    }
    if (!std::isfinite(sl.first_large))
      rep.warnings.push_back("t=" + std::to_string(t) +
                             ": gap endpoint above the computed window");
    rep.slices.push_back(std::move(sl));
    rep.floor = std::max(rep.floor, 1e-13 * op.scale_estimate);
    last_op = std::move(op);
  }

  const SpectrumSlice& final_slice = rep.slices.back();
  if (final_slice.small_count != m_q)
    numeric_error("verify_gap: small eigenvalue count " + std::to_string(final_slice.small_count) +
                  " != critical point count " + std::to_string(m_q) + " in degree " +
                  std::to_string(q) + " at t=" + std::to_string(final_slice.t) +
                  "; spectrum " + format_eigs(final_slice.eigenvalues));

  // decay of the largest small eigenvalue, unless it sits at the solver floor
  std::vector<double> ts, logs;
  for (const auto& sl : rep.slices)
    if (sl.small_count > 0 && sl.largest_small > rep.floor) {
      ts.push_back(sl.t);
      logs.push_back(std::log(sl.largest_small));
    }
  if (ts.size() >= 2) {
    double n_ = static_cast<double>(ts.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < ts.size(); ++i) {
      sx += ts[i]; sy += logs[i]; sxx += ts[i] * ts[i]; sxy += ts[i] * logs[i];
    }
    rep.decay_slope = (n_ * sxy - sx * sy) / (n_ * sxx - sx * sx);
  } else {
    rep.decay_at_floor = true;
    if (m_q > 0)
      rep.warnings.push_back("small eigenvalues at or below the solver floor " +
                             std::to_string(rep.floor) + "; decay slope not identifiable");
    else
      rep.warnings.push_back("no small eigenvalues in this degree; decay slope vacuous");
  }

  // linear growth of the gap endpoint
  {
    std::vector<double> gt, gv;
    for (const auto& sl : rep.slices)
      if (std::isfinite(sl.first_large)) {
        gt.push_back(sl.t);
        gv.push_back(sl.first_large);
      }
    if (gt.size() >= 2) {
      double n_ = static_cast<double>(gt.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
      for (size_t i = 0; i < gt.size(); ++i) {
        sx += gt[i]; sy += gv[i]; sxx += gt[i] * gt[i]; sxy += gt[i] * gv[i];
      }
      rep.growth_rate = (n_ * sxy - sx * sy) / (n_ * sxx - sx * sx);
      rep.growth_offset = (sy - rep.growth_rate * sx) / n_;
      for (size_t i = 0; i < gt.size(); ++i) {
        double fit = rep.growth_rate * gt[i] + rep.growth_offset;
        rep.growth_max_rel_dev = std::max(rep.growth_max_rel_dev,
                                          std::abs(fit - gv[i]) / std::max(1e-12, gv[i]));
      }
    }
  }

  // two-sided bracket at the largest t: quasimode span on the low side, its
  // orthogonal complement on the high side
  {
    double t_star = t_grid.back();
    Eigen::Index dim = last_op.dim;
    HermitianOp flat = [&last_op](const Eigen::VectorXcd& v) {
      return last_op.apply(FormField::unflatten(v, last_op.n, last_op.N, last_op.degree)).flatten();
    };
    if (m_q == 0) {
      rep.minimax_low = 0.0;
      rep.minimax_high = final_slice.eigenvalues[0];
      rep.minimax_pass = final_slice.small_count == 0;
    } else {
      Eigen::MatrixXcd Q(dim, m_q);
      int col = 0;
      for (size_t c = 0; c < cps.size(); ++c)
        if (cps[c].index == q)
          Q.col(col++) = build_quasimode(m, cps, static_cast<int>(c), t_star, N).flatten();
      Eigen::MatrixXcd AQ(dim, m_q);
      for (int j = 0; j < m_q; ++j) AQ.col(j) = flat(Q.col(j));
      Eigen::MatrixXcd G = Q.adjoint() * Q;
      Eigen::MatrixXcd A = Q.adjoint() * AQ;
      Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXcd> ges(
          0.5 * (A + A.adjoint()), 0.5 * (G + G.adjoint()));
      rep.minimax_low = ges.eigenvalues().maxCoeff();

      Eigen::HouseholderQR<Eigen::MatrixXcd> qr(Q);
      Eigen::MatrixXcd U = qr.householderQ() * Eigen::MatrixXcd::Identity(dim, m_q);
      double mu = 10.0 * std::max(1.0, std::isfinite(final_slice.first_large)
                                           ? final_slice.first_large
                                           : 1.0);
      HermitianOp shifted = [&](const Eigen::VectorXcd& v) {
        Eigen::VectorXcd pv = v - U * (U.adjoint() * v);
        Eigen::VectorXcd w = flat(pv);
        w -= U * (U.adjoint() * w);
        w += mu * (v - pv);
        return w;
      };
      EigOptions opts;
      opts.tol = 1e-5;
      opts.seed = seed + 1;
      EigResult low = smallest_eigenpairs(shifted, dim, 1, opts);
      rep.minimax_high = low.values[0];
      rep.minimax_pass = rep.minimax_low < rep.minimax_high;
    }
  }
  return rep;
}

}  // namespace novlab
