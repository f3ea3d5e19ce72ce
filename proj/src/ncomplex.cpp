#include "novlab/ncomplex.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace novlab {

namespace {

std::string gamma_str(const IVec& g) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < g.size(); ++i) os << (i ? "," : "") << g[i];
  os << ")";
  return os.str();
}

}  // namespace

NovikovComplex assemble(const IncidenceTable& table, const ModelManifold& m,
                        const std::vector<CriticalPoint>& cps) {
  if (table.orientations.size() != cps.size())
    config_error("assemble: incidence table does not cover all critical points; "
                 "use a full table, not a pair slice");

  int n = m.dim();
  NovikovComplex c;
  c.lattice = m.lattice();
  c.action_bound = table.action_bound;
  c.generators.assign(static_cast<size_t>(n) + 1, {});
  for (size_t i = 0; i < cps.size(); ++i)
    c.generators[static_cast<size_t>(cps[i].index)].push_back(static_cast<int>(i));

  // position of a critical point id inside its degree list
  std::vector<int> slot(cps.size(), -1);
  for (const auto& level : c.generators)
    for (size_t j = 0; j < level.size(); ++j) slot[static_cast<size_t>(level[j])] = static_cast<int>(j);

  c.boundary.reserve(static_cast<size_t>(n));
  c.h_diff.reserve(static_cast<size_t>(n));
  for (int q = 0; q < n; ++q) {
    int rows = static_cast<int>(c.generators[static_cast<size_t>(q) + 1].size());
    int cols = static_cast<int>(c.generators[static_cast<size_t>(q)].size());
    RingMatrix mat = RingMatrix::filled(rows, cols, RingElement(c.lattice));
    Eigen::MatrixXd hd = Eigen::MatrixXd::Zero(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const CriticalPoint& x = cps[static_cast<size_t>(c.generators[static_cast<size_t>(q) + 1][static_cast<size_t>(i)])];
        const CriticalPoint& y = cps[static_cast<size_t>(c.generators[static_cast<size_t>(q)][static_cast<size_t>(j)])];
        hd(i, j) = x.h_section - y.h_section;
        mat.at(i, j).action_bound = table.action_bound - hd(i, j);
      }
    c.boundary.push_back(std::move(mat));
    c.h_diff.push_back(std::move(hd));
  }

  for (const auto& [key, val] : table.entries) {
    auto [xid, yid, w] = key;
    const CriticalPoint& x = cps[static_cast<size_t>(xid)];
    const CriticalPoint& y = cps[static_cast<size_t>(yid)];
    int q = y.index;
    IVec gamma_full(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) gamma_full[static_cast<size_t>(i)] = -w[static_cast<size_t>(i)] -
        x.section_deck[static_cast<size_t>(i)] + y.section_deck[static_cast<size_t>(i)];
    IVec g = m.deck_project(gamma_full);
    RingElement& e = c.boundary[static_cast<size_t>(q)].at(slot[static_cast<size_t>(xid)],
                                                           slot[static_cast<size_t>(yid)]);
    e.set(g, e.coeff(g) + Rational(val.first));
  }
  for (auto& mat : c.boundary)
    for (auto& e : mat.data) e.truncate();
  return c;
}

DSquaredReport verify_d_squared(const NovikovComplex& c) {
  DSquaredReport rep;
  int levels = static_cast<int>(c.boundary.size());
  for (int q = 0; q + 1 < levels; ++q) {
    const RingMatrix& hi = c.boundary[static_cast<size_t>(q) + 1];
    const RingMatrix& lo = c.boundary[static_cast<size_t>(q)];
    for (int i = 0; i < hi.rows; ++i)
      for (int j = 0; j < lo.cols; ++j) {
        RingElement sum(c.lattice);
        for (int k = 0; k < lo.rows; ++k) sum = add(sum, convolve(hi.at(i, k), lo.at(k, j)));
        sum.truncate();
        rep.honest_bound = std::min(rep.honest_bound, sum.action_bound);
        for (const auto& [g, coef] : sum.support)
          if (!(coef == Rational(0))) {
            std::ostringstream os;
            os << "d^2 violation at x id " << c.generators[static_cast<size_t>(q) + 2][static_cast<size_t>(i)]
               << ", z id " << c.generators[static_cast<size_t>(q)][static_cast<size_t>(j)]
               << ", gamma " << gamma_str(g) << ": coefficient " << coef.num << "/" << coef.den
               << " below bound " << sum.action_bound;
            numeric_error(os.str());
          }
      }
    ++rep.compositions;
  }
  return rep;
}

SpecializedComplex specialize(const NovikovComplex& c, Complex s, double rho_hat) {
  SpecializedComplex sc;
  sc.s = s;
  sc.generators = c.generators;
  if (!(s.real() > rho_hat)) {
    std::ostringstream os;
    os << "specialize: Re(s)=" << s.real() << " is not above the declared rho estimate "
       << rho_hat << "; truncated sums evaluated anyway";
    sc.warnings.push_back(os.str());
  }
  for (size_t q = 0; q < c.boundary.size(); ++q) {
    const RingMatrix& mat = c.boundary[q];
    Eigen::MatrixXcd out(mat.rows, mat.cols);
    for (int i = 0; i < mat.rows; ++i)
      for (int j = 0; j < mat.cols; ++j)
        out(i, j) = std::exp(-s * c.h_diff[q](i, j)) * evaluate(mat.at(i, j), s);
    sc.matrices.push_back(std::move(out));
  }
  return sc;
}

HomologyReport homology_ranks(const SpecializedComplex& sc) {
  HomologyReport rep;
  size_t degrees = sc.generators.size();
  std::vector<int> rank(sc.matrices.size(), 0);
  for (size_t q = 0; q < sc.matrices.size(); ++q) {
    const Eigen::MatrixXcd& m = sc.matrices[q];
    if (m.rows() == 0 || m.cols() == 0) continue;
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(m);
    const auto& sv = svd.singularValues();
    double smax = sv(0);
    if (smax == 0.0) continue;
    double thr = 1e-8 * smax;
    for (int i = 0; i < sv.size(); ++i) {
      if (sv(i) > thr) ++rank[q];
      if (sv(i) > 0 && sv(i) >= thr / 10 && sv(i) <= thr * 10) {
        std::ostringstream os;
        os << "homology_ranks: singular value " << sv(i) << " of boundary " << q
           << " is within 10x of the rank threshold " << thr;
        rep.warnings.push_back(os.str());
      }
    }
  }
  rep.betti.assign(degrees, 0);
  for (size_t q = 0; q < degrees; ++q) {
    int b = static_cast<int>(sc.generators[q].size());
    if (q < rank.size()) b -= rank[q];
    if (q > 0 && q - 1 < rank.size()) b -= rank[q - 1];
    rep.betti[q] = b;
  }
  return rep;
}

}  // namespace novlab
