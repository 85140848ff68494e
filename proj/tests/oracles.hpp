#pragma once

// Independent oracles for the test suites. Everything here deliberately
// avoids the library's evaluation paths: weights come from direct products,
// integrals from Simpson quadrature, retarded times from bisection. Direct
// sector sums are exact only within the double-precision cancellation budget
// (~N log10|<v>_w| digits for sign-alternating postselections), so tests
// using them stick to small N or same-sign amplitudes.

#include <cmath>
#include <complex>
#include <functional>
#include <vector>

namespace oracles {

using cplx = std::complex<double>;
inline constexpr double kPi = 3.14159265358979323846264338327950288;

// C(N,n) by direct multiplication
inline double binom(int N, int n) {
  double c = 1.0;
  for (int i = 0; i < n; ++i) c = c * double(N - i) / double(i + 1);
  return c;
}

// sector weights 2^{-N/2} au^n ad^{N-n} C(N,n) by direct products
inline std::vector<double> sector_weights(int N, double au, double ad) {
  std::vector<double> w(N + 1);
  const double root_half = 1.0 / std::sqrt(2.0);
  for (int n = 0; n <= N; ++n)
    w[n] = std::pow(root_half, N) * std::pow(au, n) * std::pow(ad, N - n) * binom(N, n);
  return w;
}

inline double eigenvalue(int N, int n) { return double(2 * n - N) / N; }

// sum_n w_n v_n^m e^{-i p v_n T}
inline cplx moment_sum(int N, double au, double ad, int m, double p, double T) {
  const auto w = sector_weights(N, au, ad);
  cplx acc(0.0, 0.0);
  for (int n = 0; n <= N; ++n) {
    const double v = eigenvalue(N, n);
    acc += w[n] * std::pow(v, m) * std::exp(cplx(0.0, -p * v * T));
  }
  return acc;
}

// sum_n w_n G(z - v_n t), unit-norm width-eps Gaussian profile
inline cplx packet_sum(int N, double au, double ad, double t, double eps, double z) {
  const auto w = sector_weights(N, au, ad);
  const double pref = std::pow(eps * eps * kPi, -0.25);
  cplx acc(0.0, 0.0);
  for (int n = 0; n <= N; ++n) {
    const double x = z - eigenvalue(N, n) * t;
    acc += w[n] * pref * std::exp(-x * x / (2.0 * eps * eps));
  }
  return acc;
}

// Simpson quadrature
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// bisection root of g(tau) = t - tau - sqrt(rho^2 + (z - v tau)^2) on [a,b]
inline double bisect_retarded(double v, double t, double rho, double z, double a, double b) {
  auto g = [&](double tau) {
    const double dz = z - v * tau;
    return t - tau - std::sqrt(rho * rho + dz * dz);
  };
  double fa = g(a), fb = g(b);
  if (fa * fb > 0.0) throw std::runtime_error("bisection bracket does not straddle a root");
  for (int i = 0; i < 200; ++i) {
    const double m = 0.5 * (a + b);
    const double fm = g(m);
    if (fa * fm <= 0.0) {
      b = m;
      fb = fm;
    } else {
      a = m;
      fa = fm;
    }
  }
  return 0.5 * (a + b);
}

inline double normal_cdf(double x, double mu, double sigma) {
  return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0)));
}

}  // namespace oracles
