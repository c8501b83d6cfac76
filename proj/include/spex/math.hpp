#pragma once

// Scalar math shared across the library: standard normal distribution
// functions, a 3-component forward-mode dual number used to differentiate
// the pair-likelihood kernels, and deterministic per-stream RNG.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>

namespace spex {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Standard normal CDF via erfc; accurate to ~1e-15 over the real line.
// This is the single Phi used by the exponential measure and its partials.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_pdf(double z) {
  static const double inv_sqrt_2pi = 0.3989422804014326779399461;
  return inv_sqrt_2pi * std::exp(-0.5 * z * z);
}

// Inverse standard normal CDF (Acklam's rational approximation followed by
// one Halley refinement step).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -kInf;
    if (p == 1.0) return kInf;
    return kNaN;
  }
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement
  double e = normal_cdf(x) - p;
  double u = e / normal_pdf(x);
  x = x - u / (1.0 + 0.5 * x * u);
  return x;
}

// ---------------------------------------------------------------------------
// Forward-mode dual number with three derivative slots. The censored pair
// likelihood depends on the parameter vector only through three scalars per
// evaluation site (the two Frechet-scale coordinates and the dependence
// scalar a), so three slots suffice regardless of the model dimension.
struct Dual3 {
  double v = 0.0;
  std::array<double, 3> d{{0.0, 0.0, 0.0}};

  Dual3() = default;
  Dual3(double value) : v(value) {}
  Dual3(double value, int slot) : v(value) { d[slot] = 1.0; }
};

inline Dual3 operator+(const Dual3& a, const Dual3& b) {
  Dual3 r(a.v + b.v);
  for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] + b.d[i];
  return r;
}
inline Dual3 operator-(const Dual3& a, const Dual3& b) {
  Dual3 r(a.v - b.v);
  for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] - b.d[i];
  return r;
}
inline Dual3 operator-(const Dual3& a) {
  Dual3 r(-a.v);
  for (int i = 0; i < 3; ++i) r.d[i] = -a.d[i];
  return r;
}
inline Dual3 operator*(const Dual3& a, const Dual3& b) {
  Dual3 r(a.v * b.v);
  for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
inline Dual3 operator/(const Dual3& a, const Dual3& b) {
  Dual3 r(a.v / b.v);
  double ib2 = 1.0 / (b.v * b.v);
  for (int i = 0; i < 3; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * ib2;
  return r;
}

inline Dual3 exp(const Dual3& a) {
  Dual3 r(std::exp(a.v));
  for (int i = 0; i < 3; ++i) r.d[i] = r.v * a.d[i];
  return r;
}
inline Dual3 log(const Dual3& a) {
  Dual3 r(std::log(a.v));
  for (int i = 0; i < 3; ++i) r.d[i] = a.d[i] / a.v;
  return r;
}
inline Dual3 sqrt(const Dual3& a) {
  Dual3 r(std::sqrt(a.v));
  double s = 0.5 / r.v;
  for (int i = 0; i < 3; ++i) r.d[i] = s * a.d[i];
  return r;
}

inline double value(double x) { return x; }
inline double value(const Dual3& x) { return x.v; }

template <class T>
T normal_cdf_t(const T& z);
template <>
inline double normal_cdf_t<double>(const double& z) { return normal_cdf(z); }
template <>
inline Dual3 normal_cdf_t<Dual3>(const Dual3& z) {
  Dual3 r(normal_cdf(z.v));
  double p = normal_pdf(z.v);
  for (int i = 0; i < 3; ++i) r.d[i] = p * z.d[i];
  return r;
}

template <class T>
T normal_pdf_t(const T& z);
template <>
inline double normal_pdf_t<double>(const double& z) { return normal_pdf(z); }
template <>
inline Dual3 normal_pdf_t<Dual3>(const Dual3& z) {
  Dual3 r(normal_pdf(z.v));
  for (int i = 0; i < 3; ++i) r.d[i] = -z.v * r.v * z.d[i];
  return r;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. Streams are keyed by (seed, stream, substream) through
// SplitMix64 so that per-replicate generation is reproducible no matter how
// replicates are distributed over workers.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t s) : state(s) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
};

// xoshiro256** core; small, fast, and fully specified here so output is
// bit-identical across platforms.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t substream = 0) {
    SplitMix64 sm(seed ^ (0x9e3779b97f4a7c15ull * (stream + 1)) ^
                  (0xc2b2ae3d27d4eb4full * (substream + 1)));
    for (auto& s : s_) s = sm.next();
  }

  std::uint64_t next_u64() {
    std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on (0,1)
  double uniform() {
    double u = (next_u64() >> 11) * 0x1.0p-53;
    return u > 0.0 ? u : 0x1.0p-53;
  }

  double normal() { return normal_quantile(uniform()); }
  double exponential() { return -std::log(uniform()); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<std::uint64_t, 4> s_;
};

}  // namespace spex
