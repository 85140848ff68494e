#include "weakflow/wavepacket.hpp"

#include <algorithm>
#include <cmath>

namespace weakflow::wavepacket {

namespace {

// pi^{-1/2} integral s^j e^{-s^2} ds: 0 for odd j, (j-1)!!/2^{j/2} for even.
double gauss_moment(int j) {
  if (j % 2) return 0.0;
  double m = 1.0;
  for (int k = 2; k <= j; k += 2) m *= (k - 1) / 2.0;
  return m;
}

double binom_small(int n, int k) {
  double c = 1.0;
  for (int i = 0; i < k; ++i) c = c * (n - i) / (i + 1);
  return c;
}

// <term(k at a) | term(l at b)> for unit-norm width-eps Gaussians carrying
// monomial factors ((z-a)/eps)^k and ((z-b)/eps)^l.
double term_overlap(int k, int l, double a, double b, double eps) {
  const double delta = (a - b) / (2.0 * eps);
  double sum = 0.0;
  for (int i = 0; i <= k; ++i)
    for (int j = 0; j <= l; ++j) {
      const double m = gauss_moment(i + j);
      if (m == 0.0) continue;
      sum += binom_small(k, i) * binom_small(l, j) * std::pow(-delta, k - i) *
             std::pow(delta, l - j) * m;
    }
  return std::exp(-delta * delta) * sum;
}

}  // namespace

GaussianPacket::GaussianPacket(const Eigen::Vector3d& c, double w, cplx a)
    : center(c), width(w), amplitude(a) {
  if (!(w > 0.0) || !std::isfinite(w)) throw std::invalid_argument("packet width must be positive");
}

cplx evaluate(const GaussianPacket& p, double z) {
  const double x = z - p.center.z();
  return p.amplitude * std::pow(p.width * p.width * kPi, -0.25) *
         std::exp(-x * x / (2.0 * p.width * p.width));
}

cplx evaluate(const PacketSuperposition& s, double z) {
  const double eps = s.base.width;
  const double zc = s.base.center.z();
  const double pref = std::pow(eps * eps * kPi, -0.25);
  cplx acc(0.0, 0.0);
  for (const PacketTerm& t : s.terms) {
    const double x = z - zc - t.displacement;
    double mono = 1.0;
    for (int d = 0; d < t.degree; ++d) mono *= x / eps;
    acc += t.coeff * mono * pref * std::exp(-x * x / (2.0 * eps * eps));
  }
  return s.base.amplitude * acc;
}

PacketSuperposition evolve_exact(const GaussianPacket& packet, const coin::CoinState& post,
                                 double t) {
  if (t < 0.0) throw std::invalid_argument("evolution time must be >= 0");
  if (post.has_zero_overlap()) throw ZeroOverlapError();
  PacketSuperposition out;
  out.base = packet;
  out.duration = t;
  const auto sectors = coin::sector_decomposition(post);
  out.terms.reserve(sectors.size());
  for (const auto& s : sectors) out.terms.push_back({cplx(s.weight, 0.0), s.eigenvalue * t, 0});
  return out;
}

GaussianPacket evolve_weak(const GaussianPacket& packet, double w, double t) {
  if (t < 0.0) throw std::invalid_argument("evolution time must be >= 0");
  GaussianPacket out = packet;
  out.center.z() += w * t;
  return out;
}

PacketSuperposition correction_factor(const GaussianPacket& packet, const coin::CoinState& post,
                                      double t) {
  if (post.has_zero_overlap()) throw ZeroOverlapError();
  const double w = post.weak_velocity();
  const double eps = packet.width;
  const double kappa = w * w * t * t / (2.0 * post.n_spins);
  // p^2 G = G (1/eps^2 - x^2/eps^4) applied to the displaced Gaussian
  PacketSuperposition out;
  out.base = packet;
  out.duration = t;
  out.terms.push_back({cplx(1.0 + kappa / (eps * eps), 0.0), w * t, 0});
  out.terms.push_back({cplx(-kappa / (eps * eps), 0.0), w * t, 2});
  return out;
}

cplx inner_product(const PacketSuperposition& a, const PacketSuperposition& b) {
  if (std::abs(a.base.width - b.base.width) > 1e-12 * a.base.width)
    throw std::invalid_argument("inner products require equal packet widths");
  const double eps = a.base.width;
  const double za = a.base.center.z(), zb = b.base.center.z();
  cplx acc(0.0, 0.0);
  for (const PacketTerm& ta : a.terms)
    for (const PacketTerm& tb : b.terms)
      acc += std::conj(ta.coeff) * tb.coeff *
             term_overlap(ta.degree, tb.degree, za + ta.displacement, zb + tb.displacement, eps);
  return std::conj(a.base.amplitude) * b.base.amplitude * acc;
}

double fidelity(const PacketSuperposition& a, const PacketSuperposition& b) {
  const double na = inner_product(a, a).real();
  const double nb = inner_product(b, b).real();
  if (!(na > 0.0) || !(nb > 0.0)) throw ZeroNormError();
  return std::norm(inner_product(a, b)) / (na * nb);
}

// ---------------------------------------------------------------------------

SpectralEvolution::SpectralEvolution(const coin::CoinState& post, double width, double t)
    : engine_(post), eps_(width), t_(t) {
  if (!(width > 0.0)) throw std::invalid_argument("packet width must be positive");
  if (t < 0.0) throw std::invalid_argument("evolution time must be >= 0");

  // Momentum window: widen until the integrand exponent at the edge has
  // dropped 60 nats below its value at p=0. The product form is trustworthy
  // only while P t stays well below N pi/2; beyond that, or if the integrand
  // refuses to decay (shape-unstable regime), throw instead of guessing.
  double P = 10.0 / eps_;
  auto edge_drop = [&](double p) {
    return (-eps_ * eps_ * p * p + 2.0 * engine_.log_gf(p * t_).real());
  };
  auto in_window = [&](double p) { return p * t_ < 1.4 * engine_.n_spins(); };
  // at most one doubling: with eps*P <= 20 every stored factor e^{h} stays
  // finite in double (Re h <= (eps^2 P^2 - 60)/2 = 170)
  if (in_window(P) && edge_drop(P) > -60.0) P *= 2.0;
  if (!in_window(P) || edge_drop(P) > -60.0)
    throw UnsupportedRegimeError(
        "postselected evolution outside the shape-stability regime: momentum integrand "
        "does not decay (distortion too large for this N)");

  const int np = 4001;
  const double hp = 2.0 * P / (np - 1);
  p_.resize(np);
  amp_weights_.resize(np);
  meas_.resize(np);
  gf_.resize(np);
  const double mpref = std::sqrt(eps_ * eps_ / kPi);          // |phi|^2 prefactor
  const double apref = std::pow(eps_ * eps_ / kPi, 0.25);     // phi prefactor
  for (int i = 0; i < np; ++i) {
    const double p = -P + i * hp;
    const double trap = (i == 0 || i == np - 1) ? 0.5 : 1.0;
    p_[i] = p;
    gf_[i] = std::exp(engine_.log_gf(p * t_));
    meas_[i] = trap * hp * mpref * std::exp(-eps_ * eps_ * p * p);
    amp_weights_[i] = trap * hp / std::sqrt(2.0 * kPi) * apref *
                      std::exp(-eps_ * eps_ * p * p / 2.0) * gf_[i];
  }
  norm_reduced_sq_ = (meas_ * gf_.abs2()).sum();
  if (!std::isfinite(norm_reduced_sq_) || !(norm_reduced_sq_ > 0.0))
    throw UnsupportedRegimeError("postselected evolution norm is not a finite positive number");
}

cplx SpectralEvolution::amplitude(double z) const {
  const cplx acc = (amp_weights_ * (cplx(0.0, 1.0) * z * p_.cast<cplx>()).exp()).sum();
  return acc;
}

double SpectralEvolution::norm_reduced_sq() const { return norm_reduced_sq_; }

double SpectralEvolution::fidelity_weak() const {
  const double w = engine_.weak_velocity();
  // <weak|exact> = integral |phi|^2 e^{i p w t} e^{h(p t)}
  const cplx we = (meas_.cast<cplx>() * gf_ *
                   (cplx(0.0, 1.0) * (w * t_) * p_.cast<cplx>()).exp())
                      .sum();
  const double ww = meas_.sum();
  return std::norm(we) / (norm_reduced_sq_ * ww);
}

double SpectralEvolution::fidelity_corrected() const {
  const double w = engine_.weak_velocity();
  const double kappa = w * w * t_ * t_ / (2.0 * engine_.n_spins());
  Eigen::ArrayXcd corr =
      (1.0 + kappa * p_.square()).cast<cplx>() * (cplx(0.0, -1.0) * (w * t_) * p_.cast<cplx>()).exp();
  const cplx ce = (meas_.cast<cplx>() * corr.conjugate() * gf_).sum();
  const double cc = (meas_ * corr.abs2()).sum();
  return std::norm(ce) / (norm_reduced_sq_ * cc);
}

double SpectralEvolution::weak_overlap_deficit() const {
  const double w = engine_.weak_velocity();
  const cplx we = (meas_.cast<cplx>() * gf_ *
                   (cplx(0.0, 1.0) * (w * t_) * p_.cast<cplx>()).exp())
                      .sum();
  const double ww = meas_.sum();
  return std::abs(1.0 - we / ww);
}

double SpectralEvolution::peak_position() const {
  const double w = engine_.weak_velocity();
  const double lo = std::min({0.0, w * t_}) - 4.0 * eps_;
  const double hi = std::max({0.0, w * t_}) + 4.0 * eps_;
  const double step = eps_ / 20.0;
  double best_z = lo, best = -1.0;
  for (double z = lo; z <= hi; z += step) {
    const double a = std::norm(amplitude(z));
    if (a > best) {
      best = a;
      best_z = z;
    }
  }
  // golden-section refine on [-step, +step] around the scan winner
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = best_z - step, b = best_z + step;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = std::norm(amplitude(x1)), f2 = std::norm(amplitude(x2));
  while (b - a > 1e-10 * eps_) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = std::norm(amplitude(x2));
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = std::norm(amplitude(x1));
    }
  }
  return 0.5 * (a + b);
}

double distortion_parameter(const coin::CoinState& post, double t, double eps) {
  const double w = post.weak_velocity();
  return w * w * t * t / (post.n_spins * eps * eps);
}

ConvergenceReport convergence_report(const GaussianPacket& packet, const coin::CoinState& post,
                                     double t) {
  SpectralEvolution ev(post, packet.width, t);
  ConvergenceReport r;
  r.n_spins = post.n_spins;
  r.fidelity = ev.fidelity_weak();
  r.peak_position = ev.peak_position();
  r.peak_error = std::abs(r.peak_position - post.weak_velocity() * t);
  r.distortion_parameter = distortion_parameter(post, t, packet.width);
  r.weak_overlap_deficit = ev.weak_overlap_deficit();
  return r;
}

// ---------------------------------------------------------------------------

TruncatedProfile make_truncated_gaussian(double eps, double cutoff, double dz, double extent) {
  if (!(eps > 0.0) || !(cutoff > 0.0) || !(dz > 0.0) || !(extent > cutoff))
    throw std::invalid_argument("invalid truncated-profile parameters");
  TruncatedProfile p;
  p.width = eps;
  p.dz = dz;
  const int n = int(std::ceil(2.0 * extent / dz)) + 1;
  p.z0 = -extent;
  p.amp.resize(n);
  const double pref = std::pow(eps * eps * kPi, -0.25);
  for (int i = 0; i < n; ++i) {
    const double z = p.z0 + i * dz;
    p.amp[i] = (std::abs(z) <= cutoff) ? cplx(pref * std::exp(-z * z / (2.0 * eps * eps)), 0.0)
                                       : cplx(0.0, 0.0);
  }
  return p;
}

LightConeReport light_cone_check(const TruncatedProfile& profile, const coin::CoinState& post,
                                 double t) {
  if (t < 0.0) throw std::invalid_argument("evolution time must be >= 0");
  if (profile.dz > profile.width / 8.0 * (1.0 + 1e-12))
    throw GridTooCoarseError("light-cone grid spacing must be <= width/8");
  if (post.has_zero_overlap()) throw ZeroOverlapError();

  const int n = int(profile.amp.size());
  // input support from the nonzero samples
  int first = -1, last = -1;
  for (int i = 0; i < n; ++i)
    if (profile.amp[i] != cplx(0.0, 0.0)) {
      if (first < 0) first = i;
      last = i;
    }
  if (first < 0) throw ZeroNormError();

  const auto sectors = coin::sector_decomposition(post);
  const int pad = int(std::ceil(t / profile.dz)) + 1;
  Eigen::ArrayXcd evolved = Eigen::ArrayXcd::Zero(n + 2 * pad);
  for (const auto& s : sectors) {
    if (s.weight == 0.0) continue;
    // snap toward zero: |shift*dz| <= |v t|, so support never leaks past +-t
    const int shift = int(std::trunc(s.eigenvalue * t / profile.dz));
    for (int i = first; i <= last; ++i) evolved[i + pad + shift] += s.weight * profile.amp[i];
  }

  LightConeReport r;
  r.z0 = profile.z0 - pad * profile.dz;
  r.dz = profile.dz;
  r.support_lo = profile.z0 + first * profile.dz;
  r.support_hi = profile.z0 + last * profile.dz;
  r.allowed_lo = r.support_lo - t;
  r.allowed_hi = r.support_hi + t;
  r.evolved = evolved;
  for (int i = 0; i < evolved.size(); ++i) {
    const double z = r.z0 + i * profile.dz;
    const double a = std::abs(evolved[i]);
    constexpr double half_cell = 0.5;
    if (z < r.allowed_lo - half_cell * profile.dz || z > r.allowed_hi + half_cell * profile.dz)
      r.max_abs_outside = std::max(r.max_abs_outside, a);
    else
      r.max_abs_inside = std::max(r.max_abs_inside, a);
  }
  return r;
}

ScalarExpansion scalar_expansion(double s, int N) {
  ScalarExpansion r;
  r.exact = std::pow(1.0 + s / N, N);
  r.second_order = std::exp(s) * (1.0 - s * s / (2.0 * N));
  r.residual = r.exact - r.second_order;
  r.next_term = std::exp(s) * (3.0 * std::pow(s, 4) + 8.0 * std::pow(s, 3)) / (24.0 * double(N) * N);
  return r;
}

}  // namespace weakflow::wavepacket
