#include "weakflow/coin.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace weakflow::coin {

namespace {

constexpr double kOverlapTol = 1e-14;
constexpr double kHalfLog2 = 0.34657359027997264;  // log(sqrt(2))

// log C(N,n)
double log_binom(int N, int n) {
  return std::lgamma(N + 1.0) - std::lgamma(n + 1.0) - std::lgamma(N - n + 1.0);
}

int sign_of(double x) { return x > 0 ? 1 : (x < 0 ? -1 : 0); }

}  // namespace

CoinState::CoinState(int n, double up, double down) : n_spins(n), amp_up(up), amp_down(down) {
  if (n < 1) throw std::invalid_argument("n_spins must be >= 1");
  if (!std::isfinite(up) || !std::isfinite(down))
    throw std::invalid_argument("coin amplitudes must be finite reals");
  if (std::abs(up * up + down * down - 1.0) > 1e-12)
    throw std::invalid_argument("coin amplitudes must satisfy amp_up^2 + amp_down^2 = 1");
}

bool CoinState::has_zero_overlap() const { return std::abs(amp_up + amp_down) < kOverlapTol; }

double CoinState::weak_velocity() const {
  if (has_zero_overlap()) throw ZeroOverlapError();
  return (amp_up - amp_down) / (amp_up + amp_down);
}

double weak_velocity(const CoinState& post) { return post.weak_velocity(); }

double log_abs_overlap(const CoinState& post) {
  return post.n_spins * (std::log(std::abs(post.amp_up + post.amp_down)) - kHalfLog2);
}

int overlap_sign(const CoinState& post) {
  int s = sign_of(post.amp_up + post.amp_down);
  return (post.n_spins % 2 == 0) ? (s == 0 ? 0 : 1) : s;
}

double overlap(const CoinState& post) {
  double s = (post.amp_up + post.amp_down) / std::sqrt(2.0);
  return std::pow(s, post.n_spins);
}

double log_postselect_probability_static(const CoinState& post) {
  double base = 0.5 + post.amp_up * post.amp_down;
  // base = ((amp_up + amp_down)/sqrt(2))^2 >= 0 for normalized real amplitudes
  if (base <= 0.0) return -std::numeric_limits<double>::infinity();
  return post.n_spins * std::log(base);
}

WeakValueReport weak_value_report(const CoinState& post) {
  WeakValueReport r;
  r.weak_velocity = post.weak_velocity();
  r.overlap_amplitude = overlap(post);
  r.log_postselect_probability_static = log_postselect_probability_static(post);
  r.postselect_probability_static = exp_floor(r.log_postselect_probability_static);
  return r;
}

std::vector<VelocitySector> sector_decomposition(const CoinState& post) {
  const int N = post.n_spins;
  std::vector<VelocitySector> out(N + 1);
  const double lau = std::log(std::abs(post.amp_up));
  const double lad = std::log(std::abs(post.amp_down));
  for (int n = 0; n <= N; ++n) {
    VelocitySector& s = out[n];
    s.index = n;
    s.eigenvalue = double(2 * n - N) / N;
    int sgn = 1;
    if (post.amp_up < 0 && (n % 2)) sgn = -sgn;
    if (post.amp_down < 0 && ((N - n) % 2)) sgn = -sgn;
    if (post.amp_up == 0.0 && n > 0) sgn = 0;
    if (post.amp_down == 0.0 && n < N) sgn = 0;
    s.sign = sgn;
    if (sgn == 0) {
      s.log_abs_weight = -std::numeric_limits<double>::infinity();
      s.weight = 0.0;
    } else {
      // n or N-n can be zero with a zero amplitude on the other leg; keep
      // 0 * log(0) out of the sum
      s.log_abs_weight = -N * kHalfLog2 + (n > 0 ? n * lau : 0.0) +
                         (N - n > 0 ? (N - n) * lad : 0.0) + log_binom(N, n);
      s.weight = sgn * exp_floor(s.log_abs_weight);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ReducedEvolution::ReducedEvolution(const CoinState& post)
    : n_(post.n_spins),
      w_(post.weak_velocity()),
      log_overlap_(coin::log_abs_overlap(post)),
      overlap_sign_(coin::overlap_sign(post)) {}

cplx ReducedEvolution::log_gf(double u) const {
  const double th = u / n_;
  // |u| beyond N*pi/2 would cross a zero of the base; no physical use case
  // gets near that (u = p*t with p inside the Gaussian momentum window).
  return double(n_) * std::log(cplx(std::cos(th), -w_ * std::sin(th)));
}

void ReducedEvolution::derivative_stack(double u, Eigen::Ref<Eigen::VectorXcd> out) const {
  const int M = int(out.size()) - 1;
  if (M < 0) return;
  const double th = u / n_;
  const cplx beta(std::cos(th), -w_ * std::sin(th));
  const cplx betap(-std::sin(th), -w_ * std::cos(th));

  // theta-derivative stack of s = beta'/beta, which obeys s' = -(1 + s^2).
  Eigen::VectorXcd s(std::max(M, 1));
  s[0] = betap / beta;
  if (M >= 2) s[1] = -(1.0 + s[0] * s[0]);

  // Pascal triangle once; exact in double for M <= 64.
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(M + 1, M + 1);
  for (int i = 0; i <= M; ++i) {
    C(i, 0) = 1.0;
    for (int j = 1; j <= i; ++j) C(i, j) = C(i - 1, j - 1) + (j <= i - 1 ? C(i - 1, j) : 0.0);
  }
  for (int k = 1; k + 1 <= M - 1; ++k) {
    cplx acc(0.0, 0.0);
    for (int j = 0; j <= k; ++j) acc += C(k, j) * s[j] * s[k - j];
    s[k + 1] = -acc;
  }

  // L_j = (d/du)^j h = s^{(j-1)}(theta) / N^{j-1}; F_m = sum C(m-1,k) F_k L_{m-k}.
  Eigen::VectorXcd L(M + 1);
  double npow = 1.0;
  for (int j = 1; j <= M; ++j) {
    L[j] = s[j - 1] / npow;
    npow *= n_;
  }
  out[0] = cplx(1.0, 0.0);
  for (int m = 1; m <= M; ++m) {
    cplx acc(0.0, 0.0);
    for (int k = 0; k <= m - 1; ++k) acc += C(m - 1, k) * out[k] * L[m - k];
    out[m] = acc;
  }
}

void ReducedEvolution::reduced_moments(double u, Eigen::Ref<Eigen::VectorXcd> out) const {
  derivative_stack(u, out);
  cplx ipow(1.0, 0.0);
  const cplx I(0.0, 1.0);
  for (int m = 0; m < out.size(); ++m) {
    out[m] *= ipow;
    ipow *= I;
  }
}

// ---------------------------------------------------------------------------

MomentElement moment_element(const CoinState& post, int n, double p, double T) {
  if (n < 0 || n > 10) throw std::invalid_argument("moment order n must be in [0, 10]");
  ReducedEvolution ev(post);

  const double u = p * T;
  Eigen::VectorXcd mom(n + 1);
  ev.reduced_moments(u, mom);
  const cplx h = ev.log_gf(u);
  const double w = ev.weak_velocity();

  MomentElement r;
  // exact = overlap * e^{h(u)} * mom[n]; weak = overlap * w^n e^{-i u w}
  const double log_ov = ev.log_abs_overlap();
  const double sign_arg = ev.overlap_sign() < 0 ? kPi : 0.0;

  const cplx red_exact = mom[n];
  r.log_abs_exact = log_ov + h.real() + std::log(std::abs(red_exact));
  r.arg_exact = sign_arg + h.imag() + std::arg(red_exact);
  r.exact = std::polar(exp_floor(r.log_abs_exact), r.arg_exact);

  const double wn = std::pow(w, n);
  r.log_abs_weak = log_ov + std::log(std::abs(wn));
  r.arg_weak = sign_arg - u * w + (wn < 0 ? kPi : 0.0);
  r.weak = std::polar(exp_floor(r.log_abs_weak), r.arg_weak);

  // relative error in reduced space: |exact/weak - 1|
  const cplx ratio = red_exact / std::abs(wn) *
                     std::exp(cplx(h.real(), h.imag() + u * w - (wn < 0 ? kPi : 0.0)));
  r.relative_error = std::abs(ratio - 1.0);
  return r;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd born_sample(int n_spins, std::uint64_t seed, std::int64_t count) {
  if (n_spins < 1) throw std::invalid_argument("n_spins must be >= 1");
  if (count < 0) throw std::invalid_argument("count must be >= 0");

  // Exact binomial CDF, built in log space then normalized; inverse-CDF draws
  // keep the stream implementation-independent and bit-reproducible.
  const int N = n_spins;
  Eigen::ArrayXd cdf(N + 1);
  double logZ = -std::numeric_limits<double>::infinity();
  Eigen::ArrayXd logp(N + 1);
  for (int n = 0; n <= N; ++n) {
    logp[n] = log_binom(N, n) - N * std::log(2.0);
    logZ = log_add(logZ, logp[n]);
  }
  double acc = 0.0;
  for (int n = 0; n <= N; ++n) {
    acc += std::exp(logp[n] - logZ);
    cdf[n] = acc;
  }
  cdf[N] = 1.0;

  std::mt19937_64 rng(seed);
  Eigen::VectorXd out(count);
  for (std::int64_t i = 0; i < count; ++i) {
    // 53-bit uniform in [0,1)
    const double u = (rng() >> 11) * 0x1.0p-53;
    const double* lo = std::upper_bound(cdf.data(), cdf.data() + N + 1, u);
    const int n = int(lo - cdf.data());
    out[i] = double(2 * std::min(n, N) - N) / N;
  }
  return out;
}

}  // namespace weakflow::coin
