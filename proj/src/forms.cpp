#include "novlab/forms.hpp"

#include <map>
#include <mutex>

namespace novlab {

long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long r = 1;
  for (int i = 0; i < k; ++i) r = r * (n - i) / (i + 1);
  return r;
}

std::vector<std::vector<int>> multi_indices(int n, int q) {
  std::vector<std::vector<int>> out;
  if (q < 0 || q > n) return out;
  std::vector<int> idx(q);
  for (int i = 0; i < q; ++i) idx[i] = i;
  for (;;) {
    out.push_back(idx);
    if (q == 0) break;
    int i = q - 1;
    while (i >= 0 && idx[i] == n - q + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < q; ++j) idx[j] = idx[j - 1] + 1;
  }
  return out;
}

namespace {

// position of each sorted subset within multi_indices(n, q)
std::map<std::vector<int>, int> index_table(int n, int q) {
  std::map<std::vector<int>, int> t;
  auto all = multi_indices(n, q);
  for (int i = 0; i < static_cast<int>(all.size()); ++i) t[all[i]] = i;
  return t;
}

// (-1)^{#(i in I : i < a)}, the sign of moving dtheta_a past the head of I
int insert_sign(int a, const std::vector<int>& I) {
  int c = 0;
  for (int i : I) c += (i < a) ? 1 : 0;
  return (c % 2 == 0) ? 1 : -1;
}

std::vector<int> insert_axis(int a, const std::vector<int>& I) {
  std::vector<int> J = I;
  J.insert(std::upper_bound(J.begin(), J.end(), a), a);
  return J;
}

}  // namespace

FormField FormField::zero(int n, int N, int degree) {
  FormField f;
  f.n = n;
  f.N = N;
  f.degree = degree;
  Eigen::Index sz = 1;
  for (int i = 0; i < n; ++i) sz *= N;
  f.components.assign(binomial(n, degree), Eigen::VectorXcd::Zero(sz));
  return f;
}

Eigen::Index FormField::grid_size() const {
  Eigen::Index sz = 1;
  for (int i = 0; i < n; ++i) sz *= N;
  return sz;
}

Eigen::VectorXcd FormField::flatten() const {
  Eigen::VectorXcd v(flat_dim());
  Eigen::Index sz = grid_size();
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(components.size()); ++c)
    v.segment(c * sz, sz) = components[c];
  return v;
}

FormField FormField::unflatten(const Eigen::VectorXcd& v, int n, int N, int degree) {
  FormField f = zero(n, N, degree);
  Eigen::Index sz = f.grid_size();
  if (v.size() != f.flat_dim()) config_error("unflatten: size mismatch");
  for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(f.components.size()); ++c)
    f.components[c] = v.segment(c * sz, sz);
  return f;
}

const Eigen::MatrixXd& derivative_matrix(int N) {
  static std::map<int, Eigen::MatrixXd> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;
  if (N < 2) config_error("derivative_matrix: N must be >= 2");
  // D = Re(F^* diag(ik) F), frequencies symmetric about zero; for even N the
  // unpaired Nyquist mode is annihilated, which keeps D real antisymmetric and
  // exact on modes |k| <= (N-1)/2.
  Eigen::MatrixXd D(N, N);
  int kmax = (N - 1) / 2;
  for (int j = 0; j < N; ++j) {
    for (int l = 0; l < N; ++l) {
      double s = 0;
      for (int k = 1; k <= kmax; ++k)
        s += -2.0 * k * std::sin(k * kTwoPi * (j - l) / N);
      D(j, l) = s / N;
    }
  }
  return cache.emplace(N, std::move(D)).first->second;
}

Eigen::VectorXcd axis_derivative(const Eigen::VectorXcd& field, int n, int N, int axis) {
  const Eigen::MatrixXd& D = derivative_matrix(N);
  Eigen::Index stride = 1;
  for (int a = axis + 1; a < n; ++a) stride *= N;
  Eigen::Index block = stride * N;
  Eigen::VectorXcd out(field.size());
  Eigen::VectorXcd line(N), dline(N);
  for (Eigen::Index base = 0; base < field.size(); base += block) {
    for (Eigen::Index inner = 0; inner < stride; ++inner) {
      for (int i = 0; i < N; ++i) line[i] = field[base + inner + i * stride];
      dline.noalias() = D * line;
      for (int i = 0; i < N; ++i) out[base + inner + i * stride] = dline[i];
    }
  }
  return out;
}

Eigen::VectorXd sample_scalar(int n, int N, const std::function<double(const Eigen::VectorXd&)>& f) {
  Eigen::Index sz = 1;
  for (int i = 0; i < n; ++i) sz *= N;
  Eigen::VectorXd out(sz);
  Eigen::VectorXd theta(n);
  for (Eigen::Index idx = 0; idx < sz; ++idx) {
    Eigen::Index rem = idx;
    for (int a = n - 1; a >= 0; --a) {
      theta[a] = kTwoPi * static_cast<double>(rem % N) / N;
      rem /= N;
    }
    out[idx] = f(theta);
  }
  return out;
}

FormField exterior_d(const FormField& a) {
  FormField out = FormField::zero(a.n, a.N, a.degree + 1);
  if (out.components.empty()) return out;
  auto in_idx = multi_indices(a.n, a.degree);
  auto out_table = index_table(a.n, a.degree + 1);
  for (size_t c = 0; c < in_idx.size(); ++c) {
    const auto& I = in_idx[c];
    for (int ax = 0; ax < a.n; ++ax) {
      if (std::binary_search(I.begin(), I.end(), ax)) continue;
      int sgn = insert_sign(ax, I);
      int tgt = out_table.at(insert_axis(ax, I));
      out.components[tgt] += double(sgn) * axis_derivative(a.components[c], a.n, a.N, ax);
    }
  }
  return out;
}

FormField codifferential(const FormField& a) {
  FormField out = FormField::zero(a.n, a.N, a.degree - 1);
  if (out.components.empty() || a.components.empty()) return out;
  auto out_idx = multi_indices(a.n, a.degree - 1);
  auto in_table = index_table(a.n, a.degree);
  for (size_t c = 0; c < out_idx.size(); ++c) {
    const auto& I = out_idx[c];
    for (int ax = 0; ax < a.n; ++ax) {
      if (std::binary_search(I.begin(), I.end(), ax)) continue;
      int sgn = insert_sign(ax, I);
      int src = in_table.at(insert_axis(ax, I));
      out.components[c] -= double(sgn) * axis_derivative(a.components[src], a.n, a.N, ax);
    }
  }
  return out;
}

FormField wedge1(const std::vector<Eigen::VectorXd>& w, const FormField& a) {
  if (static_cast<int>(w.size()) != a.n) config_error("wedge1: expected one field per axis");
  FormField out = FormField::zero(a.n, a.N, a.degree + 1);
  if (out.components.empty()) return out;
  auto in_idx = multi_indices(a.n, a.degree);
  auto out_table = index_table(a.n, a.degree + 1);
  for (size_t c = 0; c < in_idx.size(); ++c) {
    const auto& I = in_idx[c];
    for (int ax = 0; ax < a.n; ++ax) {
      if (std::binary_search(I.begin(), I.end(), ax)) continue;
      int sgn = insert_sign(ax, I);
      int tgt = out_table.at(insert_axis(ax, I));
      out.components[tgt].array() += double(sgn) * w[ax].array() * a.components[c].array();
    }
  }
  return out;
}

FormField contract1(const std::vector<Eigen::VectorXd>& w, const FormField& a) {
  if (static_cast<int>(w.size()) != a.n) config_error("contract1: expected one field per axis");
  FormField out = FormField::zero(a.n, a.N, a.degree - 1);
  if (out.components.empty() || a.components.empty()) return out;
  auto out_idx = multi_indices(a.n, a.degree - 1);
  auto in_table = index_table(a.n, a.degree);
  for (size_t c = 0; c < out_idx.size(); ++c) {
    const auto& I = out_idx[c];
    for (int ax = 0; ax < a.n; ++ax) {
      if (std::binary_search(I.begin(), I.end(), ax)) continue;
      int sgn = insert_sign(ax, I);
      int src = in_table.at(insert_axis(ax, I));
      out.components[c].array() += double(sgn) * w[ax].array() * a.components[src].array();
    }
  }
  return out;
}

Complex inner(const FormField& a, const FormField& b) {
  if (a.n != b.n || a.N != b.N || a.degree != b.degree)
    config_error("inner: mismatched forms");
  Complex s = 0;
  for (size_t c = 0; c < a.components.size(); ++c) s += a.components[c].dot(b.components[c]);
  double weight = std::pow(kTwoPi / a.N, a.n);
  return weight * s;
}

double norm(const FormField& a) {
  double s = 0;
  for (const auto& c : a.components) s += c.squaredNorm();
  return std::sqrt(s * std::pow(kTwoPi / a.N, a.n));
}

FormField operator+(const FormField& a, const FormField& b) {
  FormField out = a;
  for (size_t c = 0; c < out.components.size(); ++c) out.components[c] += b.components[c];
  return out;
}

FormField operator-(const FormField& a, const FormField& b) {
  FormField out = a;
  for (size_t c = 0; c < out.components.size(); ++c) out.components[c] -= b.components[c];
  return out;
}

FormField operator*(Complex c, const FormField& a) {
  FormField out = a;
  for (auto& comp : out.components) comp *= c;
  return out;
}

FormField random_band_limited(int n, int N, int degree, int band, std::uint64_t seed) {
  if (band < 0 || 2 * band + 1 > N) config_error("random_band_limited: band exceeds grid");
  FormField out = FormField::zero(n, N, degree);
  std::uint64_t state = seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL;
  for (int burn = 0; burn < 8; ++burn) rand_u01(state);
  Eigen::Index sz = out.grid_size();
  std::vector<int> freq(n, -band);
  for (auto& comp : out.components) {
    // sum of random plane waves over the frequency box
    for (;;) {
      Complex coef(rand_u01(state) - 0.5, rand_u01(state) - 0.5);
      for (Eigen::Index idx = 0; idx < sz; ++idx) {
        Eigen::Index rem = idx;
        double phase = 0;
        for (int a = n - 1; a >= 0; --a) {
          phase += freq[a] * kTwoPi * static_cast<double>(rem % N) / N;
          rem /= N;
        }
        comp[idx] += coef * Complex(std::cos(phase), std::sin(phase));
      }
      int a = n - 1;
      while (a >= 0 && freq[a] == band) { freq[a] = -band; --a; }
      if (a < 0) break;
      ++freq[a];
    }
  }
  return out;
}

}  // namespace novlab
