#include "weakflow/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "weakflow/wavepacket.hpp"

namespace weakflow::ensemble {

namespace {

constexpr std::int64_t kShardSize = 1 << 16;

double uniform53(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

// Box-Muller on explicit 53-bit uniforms keeps the stream platform-stable.
double normal_draw(std::mt19937_64& rng) {
  double u1 = uniform53(rng);
  while (u1 == 0.0) u1 = uniform53(rng);
  const double u2 = uniform53(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

struct Moments {
  double sum = 0.0;
  double sumsq = 0.0;
  std::int64_t n = 0;
};

}  // namespace

ExperimentConfig::ExperimentConfig(const coin::CoinState& post, double eps, double time,
                                   std::int64_t n, std::uint64_t s)
    : coin_post(post), epsilon(eps), t(time), trials(n), seed(s) {
  if (!(eps > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (time < 0.0) throw std::invalid_argument("t must be >= 0");
  if (n < 1) throw std::invalid_argument("trials must be >= 1");
}

ProbabilityLedger probability_ledger(const ExperimentConfig& config) {
  const auto& post = config.coin_post;
  if (post.has_zero_overlap()) throw ZeroOverlapError();
  const double w = post.weak_velocity();

  ProbabilityLedger l;
  l.log_p_error_analytic = -w * w * config.t * config.t / (config.epsilon * config.epsilon);
  l.log_p_postselect_static = coin::log_postselect_probability_static(post);
  l.log_floor = -double(post.n_spins);

  wavepacket::SpectralEvolution ev(post, config.epsilon, config.t);
  l.log_p_postselect_evolved = 2.0 * coin::log_abs_overlap(post) + std::log(ev.norm_reduced_sq());

  l.p_error_analytic = exp_floor(l.log_p_error_analytic);
  l.p_postselect_static = exp_floor(l.log_p_postselect_static);
  l.p_postselect_evolved = exp_floor(l.log_p_postselect_evolved);
  l.floor_e_minus_n = exp_floor(l.log_floor);
  return l;
}

Eigen::ArrayXd Histogram::density() const {
  if (total == 0) return Eigen::ArrayXd::Zero(counts.size());
  return counts / (double(total) * bin_width());
}

DisplacementSample sample_displacements(const ExperimentConfig& config, bool postselect,
                                        int nbins, int threads) {
  if (nbins < 1) throw std::invalid_argument("nbins must be >= 1");
  if (threads <= 0) threads = default_threads();
  const auto& post = config.coin_post;
  const int N = post.n_spins;
  const double t = config.t, eps = config.epsilon;

  // Expected-count floor: every requested bin should average >= 10 samples.
  if (config.trials < 10 * std::int64_t(nbins))
    throw std::invalid_argument("trials too small for the requested bin count");

  double lo, hi;
  Eigen::ArrayXd cdf;      // sector CDF (no postselection)
  Eigen::ArrayXd pos_cdf;  // position CDF on the sampling grid (postselected)
  Eigen::ArrayXd pos_z;
  if (!postselect) {
    lo = -(t + 8.0 * eps);
    hi = t + 8.0 * eps;
    cdf.resize(N + 1);
    double logZ = -std::numeric_limits<double>::infinity();
    Eigen::ArrayXd logp(N + 1);
    for (int n = 0; n <= N; ++n) {
      logp[n] = std::lgamma(N + 1.0) - std::lgamma(n + 1.0) - std::lgamma(N - n + 1.0) -
                N * std::log(2.0);
      logZ = log_add(logZ, logp[n]);
    }
    double acc = 0.0;
    for (int n = 0; n <= N; ++n) {
      acc += std::exp(logp[n] - logZ);
      cdf[n] = acc;
    }
    cdf[N] = 1.0;
  } else {
    if (post.has_zero_overlap()) throw ZeroOverlapError();
    const double w = post.weak_velocity();
    lo = std::min(-t, std::min(0.0, w * t)) - 8.0 * eps;
    hi = std::max(t, std::max(0.0, w * t)) + 8.0 * eps;
    const int ng = 1 << 14;
    wavepacket::SpectralEvolution ev(post, eps, t);
    pos_z.resize(ng);
    Eigen::ArrayXd dens(ng);
    const double dzg = (hi - lo) / (ng - 1);
    if (dzg > eps / 8.0)
      throw GridTooCoarseError("postselected sampling grid coarser than eps/8");
    for (int i = 0; i < ng; ++i) {
      pos_z[i] = lo + i * dzg;
      dens[i] = std::norm(ev.amplitude(pos_z[i]));
    }
    pos_cdf.resize(ng);
    double acc = 0.0;
    pos_cdf[0] = 0.0;
    for (int i = 1; i < ng; ++i) {
      acc += 0.5 * (dens[i] + dens[i - 1]) * dzg;
      pos_cdf[i] = acc;
    }
    if (!(acc > 0.0)) throw ZeroNormError();
    pos_cdf /= acc;
  }

  Histogram hist;
  hist.edges = Eigen::ArrayXd::LinSpaced(nbins + 1, lo, hi);
  const double bw = (hi - lo) / nbins;

  const std::int64_t nshards = (config.trials + kShardSize - 1) / kShardSize;
  std::vector<Eigen::ArrayXd> shard_counts(nshards);
  std::vector<Moments> shard_moments(nshards);

  parallel_for(0, nshards, threads, [&](std::int64_t s0, std::int64_t s1) {
    for (std::int64_t s = s0; s < s1; ++s) {
      std::mt19937_64 rng(derive_seed(config.seed, std::uint64_t(s)));
      const std::int64_t begin = s * kShardSize;
      const std::int64_t count = std::min<std::int64_t>(kShardSize, config.trials - begin);
      Eigen::ArrayXd local = Eigen::ArrayXd::Zero(nbins);
      Moments m;
      for (std::int64_t i = 0; i < count; ++i) {
        double z;
        if (!postselect) {
          const double u = uniform53(rng);
          const double* it = std::upper_bound(cdf.data(), cdf.data() + N + 1, u);
          const int n = std::min<int>(int(it - cdf.data()), N);
          const double v = double(2 * n - N) / N;
          z = v * t + (eps / std::sqrt(2.0)) * normal_draw(rng);
        } else {
          const double u = uniform53(rng);
          const double* it =
              std::upper_bound(pos_cdf.data(), pos_cdf.data() + pos_cdf.size(), u);
          int k = int(it - pos_cdf.data());
          k = std::clamp(k, 1, int(pos_cdf.size()) - 1);
          const double c0 = pos_cdf[k - 1], c1 = pos_cdf[k];
          const double f = (c1 > c0) ? (u - c0) / (c1 - c0) : 0.5;
          z = pos_z[k - 1] + f * (pos_z[k] - pos_z[k - 1]);
        }
        m.sum += z;
        m.sumsq += z * z;
        ++m.n;
        const int b = int(std::floor((z - lo) / bw));
        if (b >= 0 && b < nbins) local[b] += 1.0;
      }
      shard_counts[s] = std::move(local);
      shard_moments[s] = m;
    }
  });

  DisplacementSample out;
  out.hist.edges = hist.edges;
  out.hist.counts = Eigen::ArrayXd::Zero(nbins);
  Moments m;
  for (std::int64_t s = 0; s < nshards; ++s) {  // fixed merge order
    out.hist.counts += shard_counts[s];
    m.sum += shard_moments[s].sum;
    m.sumsq += shard_moments[s].sumsq;
    m.n += shard_moments[s].n;
  }
  out.hist.total = m.n;
  out.trials = m.n;
  out.mean = m.sum / double(m.n);
  out.stddev = std::sqrt(std::max(0.0, m.sumsq / double(m.n) - out.mean * out.mean));
  return out;
}

// ---------------------------------------------------------------------------

double regularized_gamma_q(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q needs a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) {
    // series for P(a,x), return 1 - P
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    const double logp = -x + a * std::log(x) - std::lgamma(a);
    return 1.0 - sum * std::exp(logp);
  }
  // continued fraction for Q(a,x)
  double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 500; ++i) {
    const double an = -double(i) * (double(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double chi_square_pvalue(const Eigen::ArrayXd& observed, const Eigen::ArrayXd& expected) {
  if (observed.size() != expected.size() || observed.size() < 2)
    throw std::invalid_argument("chi-square needs matching cell counts (>= 2 cells)");
  double chi2 = 0.0;
  int df = -1;  // totals constrained to match
  for (int i = 0; i < observed.size(); ++i) {
    if (expected[i] <= 0.0) throw std::invalid_argument("expected counts must be positive");
    chi2 += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    ++df;
  }
  return regularized_gamma_q(df / 2.0, chi2 / 2.0);
}

double mixture_cdf(int n_spins, double t, double eps, double x) {
  const int N = n_spins;
  const double sig = eps / std::sqrt(2.0);
  double logZ = -std::numeric_limits<double>::infinity();
  Eigen::ArrayXd logp(N + 1);
  for (int n = 0; n <= N; ++n) {
    logp[n] = std::lgamma(N + 1.0) - std::lgamma(n + 1.0) - std::lgamma(N - n + 1.0) -
              N * std::log(2.0);
    logZ = log_add(logZ, logp[n]);
  }
  double acc = 0.0;
  for (int n = 0; n <= N; ++n) {
    const double v = double(2 * n - N) / N;
    acc += std::exp(logp[n] - logZ) * 0.5 * std::erfc(-(x - v * t) / (sig * std::sqrt(2.0)));
  }
  return acc;
}

}  // namespace weakflow::ensemble
