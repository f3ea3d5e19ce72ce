#include "novlab/bridge.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "novlab/forms.hpp"

namespace novlab {

namespace {

// Same C^inf profile as the spectral cutoffs: 1 on [0, eta/2], 0 beyond eta.
double cutoff(double u, double eta) {
  if (u <= 0.5 * eta) return 1.0;
  if (u >= eta) return 0.0;
  auto soft = [](double x) { return x > 0 ? std::exp(-1.0 / x) : 0.0; };
  double x = (eta - u) / (0.5 * eta);
  return soft(x) / (soft(x) + soft(1.0 - x));
}

// Dirichlet kernel weights for one axis of an odd-N collocation grid:
// w[j] = D_N(theta - 2 pi j / N) with D_N(u) = sin(N u / 2) / (N sin(u / 2)).
// Exact on band-limited samples; periodic, so lifted coordinates need no wrap.
void dirichlet_weights(int N, double theta, Eigen::VectorXd& w) {
  w.resize(N);
  for (int j = 0; j < N; ++j) {
    double u = theta - kTwoPi * j / N;
    double s2 = std::sin(0.5 * u);
    if (std::abs(s2) < 1e-12) {
      w[j] = 1.0;  // node hit; the odd-N kernel limit is exactly 1
      continue;
    }
    w[j] = std::sin(0.5 * N * u) / (N * s2);
  }
}

struct EvalScratch {
  Eigen::VectorXd w0, w1;
  Eigen::VectorXcd w0c, w1c, tmp;
  std::vector<Complex> comps;
};

// Point evaluator for a grid form: trigonometric interpolation of every
// component, plus the Cauchy-Schwarz bound used by the tail estimates.
class FieldEval {
 public:
  explicit FieldEval(const FormField& a) : a_(a) {
    if (a.n < 1 || a.n > 2) config_error("int_s: interpolation supports torus dimension 1 or 2");
    if (a.N % 2 == 0)
      config_error("int_s: grids must be odd (the spectral modules normalize even N away)");
    double mx = 0.0;
    for (Eigen::Index g = 0; g < a_.grid_size(); ++g) {
      double s = 0.0;
      for (const auto& c : a_.components) s += std::norm(c[g]);
      mx = std::max(mx, s);
    }
    bound_ = 2.0 * std::sqrt(mx);  // factor 2 covers interpolation overshoot
  }

  double bound() const { return bound_; }

  void components_at(const Eigen::VectorXd& pos, EvalScratch& ws) const {
    int N = a_.N;
    ws.comps.resize(a_.components.size());
    dirichlet_weights(N, pos[0], ws.w0);
    if (a_.n == 1) {
      ws.w0c = ws.w0.cast<Complex>();
      for (size_t c = 0; c < a_.components.size(); ++c)
        ws.comps[c] = ws.w0c.dot(a_.components[c]);
      return;
    }
    dirichlet_weights(N, pos[1], ws.w1);
    ws.w0c = ws.w0.cast<Complex>();
    ws.w1c = ws.w1.cast<Complex>();
    using RowMat = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (size_t c = 0; c < a_.components.size(); ++c) {
      Eigen::Map<const RowMat> mat(a_.components[c].data(), N, N);
      ws.tmp.noalias() = mat * ws.w1c;
      ws.comps[c] = ws.w0c.dot(ws.tmp);
    }
  }

  Complex scalar_at(const Eigen::VectorXd& pos, EvalScratch& ws) const {
    components_at(pos, ws);
    return ws.comps[0];
  }

  // 1-form on a vector
  Complex on_vector(const Eigen::VectorXd& pos, const Eigen::VectorXd& v, EvalScratch& ws) const {
    components_at(pos, ws);
    Complex out = 0.0;
    for (int i = 0; i < a_.n; ++i) out += ws.comps[i] * v[i];
    return out;
  }

  // 2-form on an ordered pair (n = 2: single component dtheta0 ^ dtheta1)
  Complex on_pair(const Eigen::VectorXd& pos, const Eigen::VectorXd& v, const Eigen::VectorXd& f,
                  EvalScratch& ws) const {
    components_at(pos, ws);
    return ws.comps[0] * (v[0] * f[1] - v[1] * f[0]);
  }

  Complex chart_integrand(const ChartNode& nd, int k, EvalScratch& ws) const {
    if (k == 1) return on_vector(nd.position, nd.velocity, ws);
    return on_pair(nd.position, nd.velocity, nd.frame, ws);
  }

 private:
  const FormField& a_;
  double bound_ = 0.0;
};

// ---------------------------------------------------------------------------
// Ray integration.

struct RayLabel {
  int kind = 1;  // 0 captured, 1 exhausted, 2 stalled
  int cp = -1;
  IVec winding;
  friend bool operator==(const RayLabel& a, const RayLabel& b) {
    return a.kind == b.kind && a.cp == b.cp && a.winding == b.winding;
  }
  friend bool operator!=(const RayLabel& a, const RayLabel& b) { return !(a == b); }
};

struct RayState {
  Eigen::VectorXd p;
  Eigen::VectorXd f;  // size 0 on 1-D charts
};

void ray_deriv(const ModelManifold& m, const RayState& s, RayState& out) {
  out.p = m.flow_field(s.p);
  if (s.f.size()) out.f.noalias() = m.flow_jacobian(s.p) * s.f;
}

RayState rk4_step(const ModelManifold& m, const RayState& s, double h) {
  RayState k1, k2, k3, k4, tmp;
  ray_deriv(m, s, k1);
  tmp.p = s.p + 0.5 * h * k1.p;
  if (s.f.size()) tmp.f = s.f + 0.5 * h * k1.f;
  ray_deriv(m, tmp, k2);
  tmp.p = s.p + 0.5 * h * k2.p;
  if (s.f.size()) tmp.f = s.f + 0.5 * h * k2.f;
  ray_deriv(m, tmp, k3);
  tmp.p = s.p + h * k3.p;
  if (s.f.size()) tmp.f = s.f + h * k3.f;
  ray_deriv(m, tmp, k4);
  RayState out;
  out.p = s.p + (h / 6.0) * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
  if (s.f.size()) out.f = s.f + (h / 6.0) * (k1.f + 2.0 * k2.f + 2.0 * k3.f + k4.f);
  return out;
}

ChartNode make_node(const ModelManifold& m, const RayState& s, double h0, double weight) {
  ChartNode nd;
  nd.position = s.p;
  nd.drop = h0 - m.h_lift(s.p);
  nd.velocity = m.flow_field(s.p);
  nd.frame = s.f;
  nd.weight = weight;
  return nd;
}

double det2(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a[0] * b[1] - a[1] * b[0];
}

// Flow a single ray of the chart, recording composite-Simpson nodes in flow
// time. Each accepted step is two RK4 half-steps so the Simpson triple
// (start, midpoint, end) matches the O(dt^5) accuracy of the states. Rays
// terminate inside the capture ball of an index-0 zero, at the h exhaustion
// level, or when the flow speed underflows (a launch direction that landed
// exactly on a separatrix and converges to a saddle).
void run_ray(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
             const std::vector<int>& sinks, const Eigen::VectorXd& start, double h0,
             const Eigen::VectorXd& f0, const ChartOptions& opts, double want_det_sign,
             ChartRay& ray, RayLabel& label) {
  int n = m.dim();
  RayState st;
  st.p = start;
  st.f = f0;
  double drop_step = 0.2 / std::max(opts.s_max, 1e-6);

  ray.nodes.clear();
  ray.nodes.push_back(make_node(m, st, h0, 0.0));

  auto finish = [&](int kind, int cp_id) {
    const ChartNode& last = ray.nodes.back();
    label.kind = kind;
    label.cp = cp_id;
    ray.captured = (kind == 0);
    ray.end_drop = last.drop;
    ray.end_frame_norm = st.f.size() ? st.f.norm() : 0.0;
    Eigen::VectorXd w = wrap_2pi(st.p);
    double dmin = kInf;
    int nearest = -1;
    for (size_t c = 0; c < cps.size(); ++c) {
      double d = torus_dist(w, cps[c].position);
      if (d < dmin) {
        dmin = d;
        nearest = static_cast<int>(c);
      }
    }
    ray.end_dist = dmin;
    if (kind == 0) ray.end_rate = cps[cp_id].eig_values.cwiseAbs().sum();
    if (kind == 1) return;  // exhausted rays all share one label
    int ref = cp_id >= 0 ? cp_id : nearest;
    label.winding.assign(n, 0);
    if (ref >= 0)
      for (int i = 0; i < n; ++i)
        label.winding[i] =
            static_cast<int>(std::llround((st.p[i] - cps[ref].position[i]) / kTwoPi));
    if (cp_id < 0) label.cp = nearest;
  };

  for (int step = 0; step < opts.max_steps; ++step) {
    Eigen::VectorXd v = m.flow_field(st.p);
    double speed = v.norm();
    if (speed < 1e-9) {
      finish(2, -1);
      return;
    }
    Eigen::VectorXd w = wrap_2pi(st.p);
    double dnear = kInf;
    for (const auto& cp : cps) dnear = std::min(dnear, torus_dist(w, cp.position));
    // never step across a capture ball
    double len_cap = std::max(0.5 * opts.capture_radius, dnear - 0.5 * opts.capture_radius);
    double dt = std::min(opts.dt_max, std::min(len_cap, opts.ds_max) / speed);
    dt = std::min(dt, drop_step / (speed * speed));
    if (st.f.size()) {
      double jn = m.flow_jacobian(st.p).cwiseAbs().rowwise().sum().maxCoeff();
      dt = std::min(dt, opts.dlog_frame / std::max(jn, 1e-12));
    }
    if (dt < 1e-13) {
      finish(2, -1);
      return;
    }

    RayState mid = rk4_step(m, st, 0.5 * dt);
    RayState end = rk4_step(m, mid, 0.5 * dt);
    ray.nodes.back().weight += dt / 6.0;
    ray.nodes.push_back(make_node(m, mid, h0, 4.0 * dt / 6.0));
    ray.nodes.push_back(make_node(m, end, h0, dt / 6.0));
    st = std::move(end);

    const ChartNode& nd = ray.nodes.back();
    if (nd.drop < ray.nodes[ray.nodes.size() - 3].drop - 1e-9 * (1.0 + std::abs(nd.drop)))
      numeric_error("chart ray: h increased along the flow");
    if (want_det_sign != 0.0 && nd.frame.size() == 2) {
      double d = det2(nd.velocity, nd.frame);
      if (std::abs(d) > 1e-18 && d * want_det_sign < 0)
        numeric_error("chart ray: parameterization Jacobian changed sign (fold)");
    }

    Eigen::VectorXd wr = wrap_2pi(st.p);
    for (int c : sinks) {
      if (torus_dist(wr, cps[c].position) < opts.capture_radius) {
        finish(0, c);
        return;
      }
    }
    if (nd.drop >= opts.exhaustion) {
      finish(1, -1);
      return;
    }
  }
  numeric_error("chart ray exceeded the step budget; raise max_steps or lower exhaustion");
}

}  // namespace

UnstableChart build_chart(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                          const ChartOptions& opts) {
  if (x < 0 || x >= static_cast<int>(cps.size())) config_error("build_chart: bad cp id");
  if (opts.n_directions < 8) config_error("build_chart: need at least 8 directions");
  if (!(opts.exhaustion > 0) || !(opts.capture_radius > 0))
    config_error("build_chart: exhaustion and capture radius must be positive");
  const CriticalPoint& cp = cps[x];
  int n = m.dim();
  int k = cp.index;

  UnstableChart chart;
  chart.cp = x;
  chart.index = k;
  chart.center = cp.position;
  chart.unstable = cp.eig_vectors.leftCols(k);
  chart.exhaustion = opts.exhaustion;
  double lmin = k > 0 ? cp.eig_values.cwiseAbs().minCoeff() : 1.0;
  chart.cap_radius = opts.r0 * std::min(1.0, lmin);
  if (k == 0) return chart;
  if (k > 2) config_error("build_chart: unstable dimension <= 2 only");

  std::vector<int> sinks;
  for (size_t c = 0; c < cps.size(); ++c)
    if (cps[c].index == 0) sinks.push_back(static_cast<int>(c));
  double h0 = m.h_lift(cp.position);
  double r = chart.cap_radius;

  if (k == 1) {
    chart.rays.resize(2);
    for (int i = 0; i < 2; ++i) {
      double sgn = (i == 0) ? 1.0 : -1.0;
      Eigen::VectorXd start = cp.position + r * sgn * chart.unstable.col(0);
      RayLabel lab;
      run_ray(m, cps, sinks, start, h0, Eigen::VectorXd(), opts, 0.0, chart.rays[i], lab);
      chart.rays[i].ray_sign = sgn;
      chart.rays[i].angle_weight = 1.0;
    }
    return chart;
  }

  // 2-D chart: launch circle plus geometric bisection wherever adjacent rays
  // terminate differently (a separatrix sits between them).
  double want_sign = (n == 2) ? (det2(chart.unstable.col(0), chart.unstable.col(1)) > 0 ? 1.0 : -1.0)
                              : 0.0;
  struct Shot {
    double angle = 0.0;
    ChartRay ray;
    RayLabel label;
  };
  auto shoot_at = [&](double phi, Shot& out) {
    out.angle = phi;
    Eigen::VectorXd dir = std::cos(phi) * chart.unstable.col(0) + std::sin(phi) * chart.unstable.col(1);
    Eigen::VectorXd f0 = r * (-std::sin(phi) * chart.unstable.col(0) + std::cos(phi) * chart.unstable.col(1));
    run_ray(m, cps, sinks, cp.position + r * dir, h0, f0, opts, want_sign, out.ray, out.label);
  };

  std::vector<Shot> shots(opts.n_directions);
  parallel_for(opts.n_directions, opts.threads, [&](int j) {
    shoot_at(kTwoPi * (j + 0.5) / opts.n_directions, shots[j]);
  });

  for (int depth = 0; depth < opts.refine_depth; ++depth) {
    std::vector<double> pending;
    size_t count = shots.size();
    for (size_t i = 0; i < count; ++i) {
      const Shot& a = shots[i];
      const Shot& b = shots[(i + 1) % count];
      double gap = (i + 1 < count) ? b.angle - a.angle : b.angle + kTwoPi - a.angle;
      if (a.label != b.label && gap > 1e-9) pending.push_back(a.angle + 0.5 * gap);
    }
    if (pending.empty()) break;
    std::vector<Shot> fresh(pending.size());
    parallel_for(static_cast<int>(pending.size()), opts.threads,
                 [&](int j) { shoot_at(pending[j], fresh[j]); });
    for (auto& s : fresh) shots.push_back(std::move(s));
    std::sort(shots.begin(), shots.end(),
              [](const Shot& a, const Shot& b) { return a.angle < b.angle; });
  }

  // periodic trapezoid weights on the (non-uniform) final angle mesh
  size_t M = shots.size();
  chart.rays.resize(M);
  for (size_t i = 0; i < M; ++i) {
    double prev = shots[(i + M - 1) % M].angle;
    double next = shots[(i + 1) % M].angle;
    double span = next - prev;
    if (span <= 0) span += kTwoPi;
    chart.rays[i] = std::move(shots[i].ray);
    chart.rays[i].angle_weight = 0.5 * span;
    chart.rays[i].ray_sign = 1.0;
  }
  return chart;
}

std::vector<UnstableChart> build_charts(const ModelManifold& m,
                                        const std::vector<CriticalPoint>& cps,
                                        const ChartOptions& opts) {
  std::vector<UnstableChart> out;
  out.reserve(cps.size());
  for (size_t i = 0; i < cps.size(); ++i) out.push_back(build_chart(m, cps, static_cast<int>(i), opts));
  return out;
}

IntResult int_s(const FormField& alpha, const UnstableChart& chart, Complex s, double tail_tol,
                double rho_hat, int threads) {
  IntResult res;
  if (chart.center.size() != alpha.n) config_error("int_s: dimension mismatch");
  if (alpha.degree != chart.index)
    config_error("int_s: form degree must equal the chart dimension");
  if (!(tail_tol > 0)) config_error("int_s: tail tolerance must be positive");
  if (s.real() <= rho_hat)
    res.warnings.push_back("Re(s) <= rho_hat: exhaustion integrals are not certified to converge");

  FieldEval field(alpha);
  EvalScratch scratch;
  int k = chart.index;
  if (k == 0) {
    res.value = field.scalar_at(chart.center, scratch);
    return res;
  }

  double r = chart.cap_radius;
  Complex cap;
  if (k == 1)
    cap = 2.0 * r * field.on_vector(chart.center, chart.unstable.col(0), scratch);
  else
    cap = kPi * r * r * field.on_pair(chart.center, chart.unstable.col(0), chart.unstable.col(1),
                                      scratch);

  double C = field.bound();
  int nrays = static_cast<int>(chart.rays.size());
  std::vector<Complex> sums(nrays, Complex(0.0, 0.0));
  std::vector<double> tails(nrays, 0.0);
  parallel_for(nrays, threads, [&](int i) {
    const ChartRay& ray = chart.rays[i];
    EvalScratch ws;
    Complex acc = 0.0;
    for (const ChartNode& nd : ray.nodes) {
      if (nd.weight == 0.0) continue;
      acc += nd.weight * std::exp(-s * nd.drop) * field.chart_integrand(nd, k, ws);
    }
    sums[i] = acc;
    double decay = std::exp(-s.real() * ray.end_drop);
    if (ray.captured) {
      // Remaining piece inside the sink ball. Bound the form by its value at
      // the endpoint plus a drift allowance, and the leftover measure by the
      // contraction geometry: remaining arclength ~ end_dist for a 1-D chart.
      // For a 2-D chart the frame norm is useless (it is dominated by
      // flow-parallel shear near separatrices, which the antisymmetric
      // pairing annihilates); the area form |det(v, f)| is the Liouville
      // quantity, and past the endpoint it decays at the sink's total
      // contraction rate, so the leftover area is bounded by its endpoint
      // value over that rate.
      const ChartNode& last = ray.nodes.back();
      field.components_at(last.position, ws);
      double loc = 0.0;
      for (const Complex& c : ws.comps) loc += std::norm(c);
      double c_end = 2.0 * std::sqrt(loc) + 1e-3 * C;
      double measure = (k == 1) ? ray.end_dist
                                : std::abs(last.velocity[0] * last.frame[1] -
                                           last.velocity[1] * last.frame[0]) /
                                      ray.end_rate;
      tails[i] = c_end * decay * measure * 2.0;
    } else {
      // Exhausted or stalled. The leftover wedge maps onto a strip around the
      // continuation of the flow; its measure per unit launch angle is a few
      // covers of the torus. Stalled rays are separatrix slivers whose frame
      // blowup is flow-parallel shear that the form pullback annihilates, so
      // no frame factor enters.
      tails[i] = C * decay * (4.0 * alpha.n * kTwoPi);
    }
  });
  Complex total = cap;
  double tail = C * alpha.N * alpha.N * r * r * r * 4.0;  // cap curvature remainder
  for (int i = 0; i < nrays; ++i) {
    total += chart.rays[i].ray_sign * chart.rays[i].angle_weight * sums[i];
    tail += chart.rays[i].angle_weight * tails[i];
  }
  res.value = total;
  res.tail_bound = tail;
  if (tail > tail_tol * std::max(1.0, std::abs(res.value))) {
    std::ostringstream os;
    os << "int_s: tail bound " << tail << " exceeds tolerance " << tail_tol
       << " (|value| = " << std::abs(res.value)
       << "); insufficient exhaustion for Re(s) = " << s.real();
    numeric_error(os.str());
  }
  return res;
}

FormField make_bump_form(const ModelManifold& m, const std::vector<CriticalPoint>& cps, int x,
                         Complex s, double lambda, int N, double eps) {
  if (x < 0 || x >= static_cast<int>(cps.size())) config_error("make_bump_form: bad cp id");
  if (!(lambda > 0) || !(eps > 0)) config_error("make_bump_form: widths must be positive");
  if (N < 8) config_error("make_bump_form: grid too small");
  if (N % 2 == 0) ++N;  // keep the odd-grid normalization of the spectral modules
  const CriticalPoint& cp = cps[x];
  int n = m.dim();
  int k = cp.index;
  if (eps >= kPi || lambda >= kPi)
    config_error("make_bump_form: support must fit inside the fundamental chart");

  // Unit weighted mass along the unstable directions: the inverse-Gaussian
  // profile cancels e^{s h} on the (linearized) unstable manifold, so the
  // normalizer is the plain cutoff volume.
  double Z = 1.0;
  if (k >= 1) {
    int steps = 4000;
    double h = eps / steps;
    double acc = 0.0;
    for (int i = 0; i <= steps; ++i) {
      double u = i * h;
      double g = cutoff(u, eps);
      double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      acc += w * (k == 1 ? g : g * u);
    }
    acc *= h / 3.0;
    Z = (k == 1) ? 2.0 * acc : kTwoPi * acc;
  }

  auto indices = multi_indices(n, k);
  std::vector<double> coef(indices.size());
  for (size_t c = 0; c < indices.size(); ++c) {
    Eigen::MatrixXd sub(k, k);
    for (int rr = 0; rr < k; ++rr)
      for (int cc = 0; cc < k; ++cc) sub(rr, cc) = cp.eig_vectors(indices[c][rr], cc);
    coef[c] = k == 0 ? 1.0 : sub.determinant();
  }

  FormField out = FormField::zero(n, N, k);
  Eigen::Index sz = out.grid_size();
  Eigen::VectorXd d(n), xi(n);
  for (Eigen::Index idx = 0; idx < sz; ++idx) {
    Eigen::Index rem = idx;
    for (int a = n - 1; a >= 0; --a) {
      double th = kTwoPi * static_cast<double>(rem % N) / N;
      d[a] = min_image(th - cp.position[a]);
      rem /= N;
    }
    xi.noalias() = cp.eig_vectors.transpose() * d;
    double ru = 0.0, rs = 0.0, quad = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i < k) {
        ru += xi[i] * xi[i];
        quad += std::abs(cp.eig_values[i]) * xi[i] * xi[i];
      } else {
        rs += xi[i] * xi[i];
      }
    }
    ru = std::sqrt(ru);
    rs = std::sqrt(rs);
    double gamma = cutoff(ru, eps);
    if (gamma == 0.0) continue;
    double beta = cutoff(rs, lambda);
    if (beta == 0.0) continue;
    Complex val = std::exp(0.5 * s * quad) * (gamma * beta / Z);
    for (size_t c = 0; c < indices.size(); ++c) out.components[c][idx] = coef[c] * val;
  }
  return out;
}

ChainMapReport verify_chain_map(const FormField& alpha, Complex s, const ModelManifold& m,
                                const std::vector<CriticalPoint>& cps, const NovikovComplex& nc,
                                const std::vector<UnstableChart>& charts, double fail_threshold,
                                int threads) {
  ChainMapReport rep;
  rep.q = alpha.degree;
  rep.s = s;
  int n = m.dim();
  if (alpha.n != n) config_error("verify_chain_map: form dimension mismatch");
  if (charts.size() != cps.size())
    config_error("verify_chain_map: need one chart per critical point");
  for (size_t i = 0; i < charts.size(); ++i)
    if (charts[i].cp != static_cast<int>(i))
      config_error("verify_chain_map: charts must be indexed by cp id");
  int q = alpha.degree;
  if (q + 1 > n || static_cast<int>(nc.generators.size()) <= q + 1 ||
      nc.generators[q + 1].empty()) {
    rep.warnings.push_back("no critical points of index q+1: identity is vacuous");
    return rep;
  }

  std::vector<Eigen::VectorXd> w(n);
  for (int a = 0; a < n; ++a)
    w[a] = sample_scalar(n, alpha.N, [&](const Eigen::VectorXd& th) { return m.omega(th)[a]; });
  FormField ds = exterior_d(alpha) + s * wedge1(w, alpha);

  SpecializedComplex spec = specialize(nc, s);
  for (const auto& msg : spec.warnings) rep.warnings.push_back(msg);
  const std::vector<int>& xs = nc.generators[q + 1];
  const std::vector<int>& ys = nc.generators[q];

  std::vector<Complex> int_y(ys.size(), Complex(0.0, 0.0));
  std::vector<double> tail_y(ys.size(), 0.0);
  for (size_t j = 0; j < ys.size(); ++j) {
    IntResult r = int_s(alpha, charts[ys[j]], s, kInf, -kInf, threads);
    int_y[j] = r.value;
    tail_y[j] = r.tail_bound;
  }
  std::vector<Complex> lhs(xs.size(), Complex(0.0, 0.0));
  std::vector<double> tail_x(xs.size(), 0.0);
  for (size_t i = 0; i < xs.size(); ++i) {
    IntResult r = int_s(ds, charts[xs[i]], s, kInf, -kInf, threads);
    lhs[i] = r.value;
    tail_x[i] = r.tail_bound;
  }

  const Eigen::MatrixXcd& mat = spec.matrices[q];
  double scale = 1e-12;
  for (size_t j = 0; j < ys.size(); ++j) scale = std::max(scale, std::abs(int_y[j]));
  rep.points.resize(xs.size());
  double worst_err = 0.0;
  for (size_t i = 0; i < xs.size(); ++i) {
    Complex rhs = 0.0;
    double rhs_tail = tail_x[i];
    for (size_t j = 0; j < ys.size(); ++j) {
      rhs += mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * int_y[j];
      rhs_tail += std::abs(mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) * tail_y[j];
    }
    ChainMapPoint& pt = rep.points[i];
    pt.cp = xs[i];
    pt.lhs = lhs[i];
    pt.rhs = rhs;
    pt.abs_residual = std::abs(lhs[i] - rhs);
    scale = std::max(scale, std::max(std::abs(lhs[i]), std::abs(rhs)));
    worst_err = std::max(worst_err, rhs_tail);
  }
  rep.scale = scale;
  for (const auto& pt : rep.points)
    rep.max_rel_residual = std::max(rep.max_rel_residual, pt.abs_residual / scale);
  rep.tail_bound = worst_err / scale;

  if (rep.max_rel_residual > fail_threshold) {
    std::ostringstream os;
    os << "chain map residual " << rep.max_rel_residual << " exceeds " << fail_threshold
       << " at q = " << q << ", s = (" << s.real() << ", " << s.imag() << "), scale = " << scale;
    for (const auto& pt : rep.points)
      os << "\n  x = " << pt.cp << ": lhs = (" << pt.lhs.real() << ", " << pt.lhs.imag()
         << "), rhs = (" << pt.rhs.real() << ", " << pt.rhs.imag()
         << "), |residual| = " << pt.abs_residual;
    numeric_error(os.str());
  }
  if (rep.tail_bound > fail_threshold)
    numeric_error("chain map: exhaustion tail bound " + std::to_string(rep.tail_bound) +
                  " exceeds the failure threshold; extend the charts");
  return rep;
}

namespace {

// Leading amplitude of the chart integral of a unit-norm quasimode: Gaussian
// normalization times the Gaussian mass over the unstable plane. The identity
// Int_t(R_t(delta_x)) = id holds only after dividing this factor out.
double quasimode_amplitude(int n, double t, const CriticalPoint& cp) {
  double af = 1.0;
  for (int i = 0; i < n; ++i) af *= std::pow(t * std::abs(cp.eig_values[i]) / kPi, 0.25);
  for (int i = 0; i < cp.index; ++i)
    af *= std::sqrt(kPi / (t * std::abs(cp.eig_values[i])));
  return af;
}

}  // namespace

SmallComplexBasis build_small_basis(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                                    const std::vector<UnstableChart>& charts, double t,
                                    const SmallBasisOptions& opts) {
  if (!(t > 0)) config_error("build_small_basis: t must be positive");
  if (charts.size() != cps.size())
    config_error("build_small_basis: need one chart per critical point");
  int n = m.dim();
  SmallComplexBasis basis;
  basis.t = t;

  for (int q = 0; q <= n; ++q) {
    DegreeBasis db;
    db.q = q;
    for (size_t c = 0; c < cps.size(); ++c)
      if (cps[c].index == q) db.cp_ids.push_back(static_cast<int>(c));
    int mq = static_cast<int>(db.cp_ids.size());

    OperatorHandle lap = build_delta_t(m, t, q, opts.N);
    basis.N = lap.N;
    int k = std::max(mq + 2, 2);
    if (10 * static_cast<Eigen::Index>(k) > lap.dim) {
      k = static_cast<int>(lap.dim / 10);
      if (k < mq + 1)
        config_error("build_small_basis: grid too small to bracket the spectral gap");
    }
    Spectrum sp = spectrum(lap, k, opts.seed + static_cast<std::uint64_t>(q));

    // gap precheck: exactly #Cr_q eigenvalues below the threshold
    if (sp.values[mq] < opts.gap_threshold) {
      std::ostringstream os;
      os << "build_small_basis: eigenvalue " << mq << " at degree " << q << " is "
         << sp.values[mq] << " < gap threshold " << opts.gap_threshold
         << " (small count exceeds the critical point count; t too small?)";
      numeric_error(os.str());
    }
    if (mq > 0 && sp.values[mq - 1] >= opts.gap_threshold) {
      std::ostringstream os;
      os << "build_small_basis: only " << mq - 1 << " eigenvalues below the gap at degree " << q
         << " but " << mq << " critical points (t too small?)";
      numeric_error(os.str());
    }

    db.eigenvalues.assign(sp.values.data(), sp.values.data() + mq);
    for (int j = 0; j < mq; ++j) {
      FormField f = sp.vectors[j];
      double nn = norm(f);
      if (nn <= 0) numeric_error("build_small_basis: degenerate eigenform");
      // unit volume-weighted L2 norm, matching the quasimode convention
      f = Complex(1.0 / nn, 0.0) * f;
      db.eigenforms.push_back(std::move(f));
    }

    if (mq > 0) {
      db.M.resize(mq, mq);
      struct Entry {
        int x, j;
      };
      std::vector<Entry> entries;
      for (int xi = 0; xi < mq; ++xi)
        for (int j = 0; j < mq; ++j) entries.push_back({xi, j});
      std::vector<Complex> vals(entries.size());
      if (entries.size() == 1) {
        vals[0] = int_s(db.eigenforms[0], charts[db.cp_ids[0]], Complex(t, 0.0), opts.tail_tol,
                        -kInf, opts.threads)
                      .value;
      } else {
        parallel_for(static_cast<int>(entries.size()), opts.threads, [&](int e) {
          vals[e] = int_s(db.eigenforms[entries[e].j], charts[db.cp_ids[entries[e].x]],
                          Complex(t, 0.0), opts.tail_tol, -kInf, 1)
                        .value;
        });
      }
      for (size_t e = 0; e < entries.size(); ++e) db.M(entries[e].x, entries[e].j) = vals[e];

      Eigen::JacobiSVD<Eigen::MatrixXcd> svd(db.M);
      double smin = svd.singularValues()(mq - 1);
      double smax = svd.singularValues()(0);
      db.cond_M = smin > 0 ? smax / smin : kInf;
      if (!(db.cond_M < opts.cond_limit)) {
        std::ostringstream os;
        os << "build_small_basis: integral matrix at degree " << q << " has condition "
           << db.cond_M << " > " << opts.cond_limit << " (usually t too small for the basis)";
        numeric_error(os.str());
      }
      db.E_coeff = db.M.inverse();

      // quasimode comparison: project, Loewdin-orthonormalize, integrate
      Eigen::MatrixXcd P(mq, mq);
      for (int j = 0; j < mq; ++j) {
        FormField qm = build_quasimode(m, cps, db.cp_ids[j], t, opts.N);
        for (int i = 0; i < mq; ++i) P(i, j) = inner(db.eigenforms[i], qm);
      }
      Eigen::MatrixXcd G = P.adjoint() * P;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(G);
      if (es.eigenvalues().minCoeff() < 1e-8)
        numeric_error("build_small_basis: quasimode projections are degenerate (gap too weak)");
      Eigen::MatrixXcd ginv =
          es.eigenvectors() *
          es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal().toDenseMatrix().cast<Complex>() *
          es.eigenvectors().adjoint();
      Eigen::MatrixXcd C = P * ginv;
      db.int_R = db.M * C;
      for (int xi = 0; xi < mq; ++xi)
        db.int_R.row(xi) /= quasimode_amplitude(n, t, cps[db.cp_ids[xi]]);
      db.rt_defect = (db.int_R - Eigen::MatrixXcd::Identity(mq, mq)).norm();
    }
    basis.degrees.push_back(std::move(db));
  }
  return basis;
}

RecoveredIncidence recover_incidence(const ModelManifold& m, const std::vector<CriticalPoint>& cps,
                                     const SmallComplexBasis& basis, const NovikovComplex& nc,
                                     double leak_tol) {
  int n = m.dim();
  if (static_cast<int>(basis.degrees.size()) != n + 1)
    config_error("recover_incidence: basis degree count mismatch");
  for (int q = 0; q <= n; ++q) {
    if (basis.degrees[q].cp_ids != nc.generators[q])
      config_error("recover_incidence: basis and complex disagree on the generators");
    for (int id : basis.degrees[q].cp_ids)
      if (id < 0 || id >= static_cast<int>(cps.size()) || cps[id].index != q)
        config_error("recover_incidence: basis cp ids do not match the critical point list");
  }

  RecoveredIncidence rec;
  rec.t = basis.t;
  SpecializedComplex spec = specialize(nc, Complex(basis.t, 0.0));
  rec.trajectory = spec.matrices;
  for (const auto& msg : spec.warnings) rec.warnings.push_back(msg);

  for (int q = 0; q < n; ++q) {
    const DegreeBasis& lo = basis.degrees[q];
    const DegreeBasis& hi = basis.degrees[q + 1];
    int rows = static_cast<int>(hi.cp_ids.size());
    int cols = static_cast<int>(lo.cp_ids.size());
    rec.spectral.push_back(Eigen::MatrixXcd::Zero(rows, cols));
    if (rows == 0 || cols == 0) continue;

    OperatorHandle dq = build_d_t(m, basis.t, q, basis.N);
    for (int y = 0; y < cols; ++y) {
      FormField ey = FormField::zero(n, basis.N, q);
      for (int i = 0; i < cols; ++i) ey = ey + lo.E_coeff(i, y) * lo.eigenforms[i];
      FormField dey = dq.apply(ey);

      Eigen::VectorXcd c(rows);
      FormField resid = dey;
      for (int j = 0; j < rows; ++j) {
        c[j] = inner(hi.eigenforms[j], dey);
        resid = resid - c[j] * hi.eigenforms[j];
      }
      double leak = norm(resid) / std::max(norm(dey), 1e-2 * std::max(1.0, norm(ey)));
      rec.max_leakage = std::max(rec.max_leakage, leak);
      if (leak > leak_tol) {
        std::ostringstream os;
        os << "recover_incidence: d_t E leaks " << leak << " outside the small subspace at q = "
           << q << ", y = " << lo.cp_ids[y] << " (eigensolve too loose or gap too weak)";
        numeric_error(os.str());
      }
      rec.spectral[q].col(y) = hi.M * c;
    }
  }

  double tmax = 0.0;
  for (const auto& mt : rec.trajectory)tmax = std::max(tmax, mt.size() ? mt.cwiseAbs().maxCoeff() : 0.0);
  rec.floor = 1e-3 * tmax + 1e-12;
  for (int q = 0; q < n; ++q) {
    const Eigen::MatrixXcd& a = rec.spectral[q];
    const Eigen::MatrixXcd& b = rec.trajectory[q];
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < a.cols(); ++j) {
        double tv = std::abs(b(i, j));
        double dv = std::abs(a(i, j) - b(i, j));
        if (tv >= rec.floor)
          rec.max_rel_error = std::max(rec.max_rel_error, dv / tv);
        else
          rec.max_abs_below_floor = std::max(rec.max_abs_below_floor, std::abs(a(i, j)));
      }
  }
  return rec;
}

IncidenceFitReport fit_recovered_integers(const NovikovComplex& nc,
                                          const std::vector<RecoveredIncidence>& samples) {
  if (samples.size() < 1) config_error("fit_recovered_integers: need at least one sample");
  IncidenceFitReport rep;
  int levels = static_cast<int>(nc.boundary.size());
  for (int q = 0; q < levels; ++q) {
    const RingMatrix& bd = nc.boundary[q];
    for (int i = 0; i < bd.rows; ++i)
      for (int j = 0; j < bd.cols; ++j) {
        const RingElement& e = bd.at(i, j);
        if (e.support.empty()) continue;
        EntryFit fit;
        fit.q = q;
        fit.x = nc.generators[q + 1][i];
        fit.y = nc.generators[q][j];
        for (const auto& [g, coeff] : e.support) {
          fit.exponents.push_back(nc.h_diff[q](i, j) + nc.lattice.action(g));
          if (coeff.den != 1)
            numeric_error("fit_recovered_integers: non-integer trajectory count");
          fit.oracle.push_back(coeff.num);
        }
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : samples) {
          if (static_cast<int>(r.spectral.size()) <= q)
            config_error("fit_recovered_integers: sample missing degree");
          Complex v = r.spectral[q](i, j);
          if (std::abs(v.imag()) > 1e-6 * std::max(1.0, std::abs(v)))
            numeric_error("fit_recovered_integers: recovered entry has a large imaginary part");
          pts.emplace_back(r.t, v.real());
        }
        IntegerFitOptions opts;
        // recovered samples carry quadrature-level defects well below the unit
        // coefficient gap but above the library default meant for exact series
        opts.residual_tol = 1e-3;
        IntegerFit f = fit_integer_coefficients(pts, fit.exponents, opts);
        fit.fitted = f.coefficients;
        fit.match = (fit.fitted == fit.oracle);
        rep.all_match = rep.all_match && fit.match;
        rep.entries.push_back(std::move(fit));
      }
  }
  return rep;
}

}  // namespace novlab
