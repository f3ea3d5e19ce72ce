#include <cstdio>
#include <cmath>
#include <complex>

#include "novlab/bridge.hpp"
#include "novlab/forms.hpp"
#include "novlab/manifold.hpp"

using namespace novlab;
using Eigen::VectorXd;

int main() {
  ModelManifold m = ModelManifold::t2_exact();
  auto cps = find_zeros(m, 24);
  ChartOptions o;
  o.n_directions = 512;
  o.threads = 4;
  auto chart = build_chart(m, cps, 0, o);

  auto fmag = [](double x, double y) {
    return std::abs(Complex(1.0 + 0.4 * std::cos(x) + 0.3 * std::sin(y) + 0.2 * std::cos(x) * std::cos(y),
                            0.25 * std::sin(x)));
  };
  double C = 0.0;
  for (int j0 = 0; j0 < 21; ++j0)
    for (int j1 = 0; j1 < 21; ++j1)
      C = std::max(C, fmag(kTwoPi * j0 / 21, kTwoPi * j1 / 21));
  C *= 2.0;

  double total = C * 21.0 * 21.0 * std::pow(chart.cap_radius, 3) * 4.0;
  std::printf("C = %.4f cap_radius = %.3e cap term = %.3e\n", C, chart.cap_radius, total);
  double worst = 0.0;
  int worst_i = -1;
  for (size_t i = 0; i < chart.rays.size(); ++i) {
    const auto& ray = chart.rays[i];
    double decay = std::exp(-2.0 * ray.end_drop);
    double t;
    if (ray.captured) {
      const auto& p = ray.nodes.back().position;
      double c_end = 2.0 * fmag(p[0], p[1]) + 1e-3 * C;
      double measure = ray.end_dist * std::max(ray.end_frame_norm, chart.cap_radius);
      t = c_end * decay * measure * 2.0;
    } else {
      t = C * decay * (4.0 * 2 * kTwoPi);
    }
    total += ray.angle_weight * t;
    if (ray.angle_weight * t > worst) {
      worst = ray.angle_weight * t;
      worst_i = static_cast<int>(i);
    }
  }
  std::printf("manual tail = %.6e, worst ray %d contributes %.3e\n", total, worst_i, worst);
  const auto& w = chart.rays[worst_i];
  std::printf("  worst: captured=%d end_drop=%.4f end_dist=%.3e fnorm=%.3e aw=%.3e\n",
              int(w.captured), w.end_drop, w.end_dist, w.end_frame_norm, w.angle_weight);
  return 0;
}
