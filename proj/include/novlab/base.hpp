#pragma once
// Shared basics: error taxonomy, exact rationals, small numeric helpers.
// Everything numeric in this library is double/complex<double> plus exact
// int64 rationals where trajectory counts must stay exact.

#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace novlab {

using Complex = std::complex<double>;
using IVec = std::vector<int>;  // lattice / winding vectors, lexicographic order via std::vector

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Error kinds map onto process exit codes (config=4, numeric=3) at the CLI.
enum class ErrKind { config, numeric };

struct Error : std::runtime_error {
  ErrKind kind;
  Error(ErrKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

[[noreturn]] inline void config_error(const std::string& msg) { throw Error(ErrKind::config, msg); }
[[noreturn]] inline void numeric_error(const std::string& msg) { throw Error(ErrKind::numeric, msg); }

// ---------------------------------------------------------------------------
// Exact rational arithmetic on int64 with __int128 intermediates.
// Incidence coefficients are small integers; convolution sums stay well inside
// int64, but we still guard every product/sum so a silent wrap is impossible.

struct Rational {
  long long num = 0;
  long long den = 1;  // > 0 always

  Rational() = default;
  Rational(long long n) : num(n), den(1) {}
  Rational(long long n, long long d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den == 0) numeric_error("rational with zero denominator");
    if (den < 0) { num = -num; den = -den; }
    long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) { num /= g; den /= g; }
    if (num == 0) den = 1;
  }

  static long long clamp128(__int128 v) {
    if (v > std::numeric_limits<long long>::max() || v < std::numeric_limits<long long>::min())
      numeric_error("rational overflow");
    return static_cast<long long>(v);
  }

  friend Rational operator+(const Rational& a, const Rational& b) {
    __int128 n = (__int128)a.num * b.den + (__int128)b.num * a.den;
    __int128 d = (__int128)a.den * b.den;
    return Rational(clamp128(n), clamp128(d));
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    __int128 n = (__int128)a.num * b.den - (__int128)b.num * a.den;
    __int128 d = (__int128)a.den * b.den;
    return Rational(clamp128(n), clamp128(d));
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    __int128 n = (__int128)a.num * b.num;
    __int128 d = (__int128)a.den * b.den;
    return Rational(clamp128(n), clamp128(d));
  }
  Rational operator-() const { Rational r; r.num = -num; r.den = den; return r; }
  friend bool operator==(const Rational& a, const Rational& b) { return a.num == b.num && a.den == b.den; }
  friend bool operator!=(const Rational& a, const Rational& b) { return !(a == b); }

  bool is_zero() const { return num == 0; }
  bool is_integer() const { return den == 1; }
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// ---------------------------------------------------------------------------
// Torus helpers.

inline double wrap_2pi(double x) {
  double y = std::fmod(x, kTwoPi);
  if (y < 0) y += kTwoPi;
  return y;
}

inline Eigen::VectorXd wrap_2pi(const Eigen::VectorXd& x) {
  Eigen::VectorXd y(x.size());
  for (int i = 0; i < x.size(); ++i) y[i] = wrap_2pi(x[i]);
  return y;
}

// representative of x in (-pi, pi]
inline double min_image(double x) {
  double y = std::remainder(x, kTwoPi);
  if (y <= -kPi) y += kTwoPi;
  return y;
}

inline double torus_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0;
  for (int i = 0; i < a.size(); ++i) {
    double d = min_image(a[i] - b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Deterministic RNG helpers. uniform_real_distribution is implementation
// defined, so tests and pipelines draw through these instead.

inline double rand_u01(std::uint64_t& state) {
  // xorshift* stream; stable across platforms
  state ^= state >> 12;
  state ^= state << 25;
  state ^= state >> 27;
  std::uint64_t z = state * 0x2545F4914F6CDD1DULL;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

inline long long rand_int(std::uint64_t& state, long long lo, long long hi) {
  return lo + static_cast<long long>(rand_u01(state) * static_cast<double>(hi - lo + 1));
}

// ---------------------------------------------------------------------------
// Slot-parallel loop: results land in caller-owned slots indexed by i, so the
// output is identical for any thread count.

inline void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  int nt = std::min<int>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(nt);
  std::atomic<int> next{0};
  for (int w = 0; w < nt; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        int i = next.fetch_add(1);
        if (i >= n) return;
        body(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace novlab
