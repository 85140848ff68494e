#pragma once

// Gaussian wavepackets and their postselected evolution under H = p_z v_z.
// Dynamics is strictly one-dimensional (x and y are inert constants of
// motion), so packets are represented by their z-profile; transverse factors
// are common to every term and cancel in all normalized quantities.
//
// Two evaluation routes coexist:
//  * the closed-form term list (PacketSuperposition) with pairwise Gaussian
//    overlaps -- exact, but usable only while the sign-alternating sector
//    sums stay within the double-precision cancellation budget;
//  * the spectral route (SpectralEvolution) through the reduced generating
//    function -- stable at any N, used for all large-N metrics.

#include <vector>

#include <Eigen/Core>

#include "weakflow/coin.hpp"
#include "weakflow/common.hpp"

namespace weakflow::wavepacket {

// Isotropic Gaussian, norm convention (eps^2 pi)^{-3/4} exp(-x^2/2 eps^2);
// the z-profile carries (eps^2 pi)^{-1/4} and has unit L2 norm.
struct GaussianPacket {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  double width = 1.0;
  cplx amplitude{1.0, 0.0};

  GaussianPacket() = default;
  GaussianPacket(const Eigen::Vector3d& c, double w, cplx a = cplx(1.0, 0.0));
};

// One term: coeff * ((z - zc - displacement)/eps)^degree * G(z - zc - displacement).
// degree > 0 terms arise from momentum-space polynomial corrections.
struct PacketTerm {
  cplx coeff{0.0, 0.0};
  double displacement = 0.0;
  int degree = 0;
};

struct PacketSuperposition {
  GaussianPacket base;
  std::vector<PacketTerm> terms;
  double duration = 0.0;  // evolution time that produced the terms
};

// z-profile value (transverse factors omitted).
cplx evaluate(const GaussianPacket& p, double z);
cplx evaluate(const PacketSuperposition& s, double z);

// Unnormalized postselected packet: sum_n w_n Phi(z - v_n t). Coefficients
// come from the sector decomposition; every displacement obeys |d| <= t.
PacketSuperposition evolve_exact(const GaussianPacket& packet, const coin::CoinState& post,
                                 double t);

// Rigid displacement by w*t (weak-substituted evolution, up to normalization).
GaussianPacket evolve_weak(const GaussianPacket& packet, double w, double t);

// First-order finite-N correction: e^{-i p w t} [1 + p^2 w^2 t^2 / 2N] Phi,
// applied analytically (a degree-2 polynomial times the displaced Gaussian).
PacketSuperposition correction_factor(const GaussianPacket& packet, const coin::CoinState& post,
                                      double t);

// Closed-form inner products over the shared-width Gaussian term basis.
// <G_k(a)|G_l(b)> = e^{-(a-b)^2/4eps^2} * sum over binomial Gaussian moments.
cplx inner_product(const PacketSuperposition& a, const PacketSuperposition& b);
double fidelity(const PacketSuperposition& a, const PacketSuperposition& b);  // ZeroNormError

// ---------------------------------------------------------------------------
// Spectral route. All quantities are "reduced": the postselected state is
// overlap * psi~, and psi~ is evaluated through e^{h(u)} so nothing ever
// multiplies the (possibly e^{-2000}-scale) overlap until asked for in log
// form. Valid whenever the momentum integrand e^{-eps^2 p^2 + 2 Re h(p t)}
// decays inside the window -- essentially the shape-stability regime; an
// UnsupportedRegimeError is thrown otherwise instead of returning noise.

class SpectralEvolution {
 public:
  SpectralEvolution(const coin::CoinState& post, double width, double t);

  double weak_velocity() const { return engine_.weak_velocity(); }
  int n_spins() const { return engine_.n_spins(); }
  double width() const { return eps_; }
  double time() const { return t_; }

  // Reduced position amplitude psi~(z) (exact state divided by the overlap).
  cplx amplitude(double z) const;

  // <psi~|psi~>; the physical postselection norm^2 is overlap^2 times this.
  double norm_reduced_sq() const;

  // Fidelity between the exact evolution and the rigid weak displacement.
  double fidelity_weak() const;

  // Fidelity against the first-order corrected packet.
  double fidelity_corrected() const;

  // First-order overlap deficit |1 - <weak|exact>/<weak|weak>|; scales ~ 1/N.
  double weak_overlap_deficit() const;

  // argmax_z |psi~(z)|^2 by coarse scan at eps/20 plus golden-section refine.
  double peak_position() const;

 private:
  coin::ReducedEvolution engine_;
  double eps_;
  double t_;
  // trapezoid nodes and per-node weights c_k = w_q phi(p_k) e^{h(p_k t)}
  Eigen::ArrayXd p_;
  Eigen::ArrayXcd amp_weights_;
  Eigen::ArrayXd meas_;      // |phi|^2 measure weights (with trapezoid factor)
  Eigen::ArrayXcd gf_;       // e^{h(p t)} at nodes
  double norm_reduced_sq_ = 0.0;
};

// distortion = w^2 t^2 / (N eps^2): the shape-stability smallness parameter.
double distortion_parameter(const coin::CoinState& post, double t, double eps);

struct ConvergenceReport {
  int n_spins = 0;
  double fidelity = 0.0;
  double peak_error = 0.0;
  double distortion_parameter = 0.0;
  double weak_overlap_deficit = 0.0;
  double peak_position = 0.0;
};

ConvergenceReport convergence_report(const GaussianPacket& packet, const coin::CoinState& post,
                                     double t);

// ---------------------------------------------------------------------------
// Strict light cone for compactly supported data. The truncated profile is
// displaced sector-by-sector on its grid (shifts snapped toward zero to whole
// cells, so the support bound is exact); amplitude outside
// [lo - t, hi + t] must vanish identically.

struct TruncatedProfile {
  double z0 = 0.0;       // coordinate of sample 0
  double dz = 0.0;       // grid spacing; must be <= width/8
  double width = 1.0;    // underlying packet width (for the spacing contract)
  Eigen::ArrayXcd amp;   // compactly supported samples
};

// Gaussian hard-truncated at |z| <= cutoff, sampled on [-extent, extent].
TruncatedProfile make_truncated_gaussian(double eps, double cutoff, double dz, double extent);

struct LightConeReport {
  double support_lo = 0.0, support_hi = 0.0;   // input support
  double allowed_lo = 0.0, allowed_hi = 0.0;   // input support widened by t
  double max_abs_outside = 0.0;                // must be exactly 0
  double max_abs_inside = 0.0;
  double z0 = 0.0, dz = 0.0;
  Eigen::ArrayXcd evolved;                     // evolved profile (padded grid)
};

LightConeReport light_cone_check(const TruncatedProfile& profile, const coin::CoinState& post,
                                 double t);  // GridTooCoarseError

// Scalar identity behind the finite-N correction:
// (1+s/N)^N = e^s (1 - s^2/2N + (3s^4+8s^3)/24N^2 + ...).
struct ScalarExpansion {
  double exact = 0.0;           // (1+s/N)^N
  double second_order = 0.0;    // e^s (1 - s^2/2N)
  double residual = 0.0;        // exact - second_order
  double next_term = 0.0;       // e^s (3s^4+8s^3)/24N^2
};
ScalarExpansion scalar_expansion(double s, int N);

}  // namespace weakflow::wavepacket
