#pragma once

// Charge / test-particle kick experiment: the source evolves under H = p_z v_z,
// an instantaneous interaction H' = (p' - q'A)^2/2m + q'V is applied at time
// T, and the coin is postselected. States live on a 2D (z, z') grid with the
// transverse separation (dx, dy) held fixed as parameters.
//
// The exact postselected state is a sector sum
//   sum_n w_n Phi(z - v_n T) e^{-i q' V(zeta; v_n)} Omega(z'),  zeta = z' - z.
// Route selection mirrors the cancellation structure:
//  * direct summation whenever N ln(max(|<v>_w|,1)) <= 23 nats (all same-sign
//    postselections, mixed-sign at small N);
//  * otherwise a spectral route: the kick factor is expanded as a Taylor
//    series in v (exact coefficient recursion, relative accuracy preserved)
//    and paired with packet moments sum_n b_n v_n^m Phi(z - v_n T) obtained
//    from the generating function's derivative stack. The series converges
//    iff the branch radius v_b(zeta) = sqrt(1 + zeta^2/rho^2) exceeds |<v>_w|,
//    i.e. the test particle must sit in the wake, strictly outside the Mach
//    cone; outside this envelope the call throws UnsupportedRegimeError.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "weakflow/coin.hpp"
#include "weakflow/common.hpp"
#include "weakflow/fields.hpp"
#include "weakflow/wavepacket.hpp"

namespace weakflow::coupling {

struct TestParticleSpec {
  double charge = 0.0;  // q'
  double mass = std::numeric_limits<double>::infinity();
  wavepacket::GaussianPacket packet;  // Omega; center.z() is the z' center

  bool infinite_mass() const { return std::isinf(mass); }
};

struct KickGrid {
  double z_lo = 0.0, z_hi = 1.0;
  int n_z = 2;
  double zp_lo = 0.0, zp_hi = 1.0;
  int n_zp = 2;
  double dx = 0.0, dy = 0.0;  // fixed transverse separation

  double dz() const { return (z_hi - z_lo) / (n_z - 1); }
  double dzp() const { return (zp_hi - zp_lo) / (n_zp - 1); }
  double rho() const { return std::hypot(dx, dy); }
  double z(int i) const { return z_lo + i * dz(); }
  double zp(int j) const { return zp_lo + j * dzp(); }
  void validate() const;
};

// amp(i, j) is the z_i, z'_j amplitude; physical amplitude = e^{log_scale} amp.
// Exact postselected states carry log_scale = log|<fin|in>| so the stored
// table stays O(1) even when the overlap underflows doubles.
struct JointState2D {
  KickGrid grid;
  Eigen::MatrixXcd amp;
  double log_scale = 0.0;
  std::int64_t flagged_cells = 0;    // per-sector potential singularities hit
  std::int64_t zero_field_cells = 0; // weak branch: no field support (phase 1)

  double cell_area() const { return grid.dz() * grid.dzp(); }
};

// norm^2 in log form: 2*log_scale + log(sum |amp|^2 dA)
double log_norm_sq(const JointState2D& s);

// |<a|b>|^2 / (<a|a><b|b>): normalization- and scale-invariant.
double fidelity(const JointState2D& a, const JointState2D& b);

// Descending Schmidt coefficients lambda_k = sigma_k^2 of the normalized
// amplitude table (sum lambda = 1).
Eigen::ArrayXd schmidt_values(const JointState2D& s, int k_max = 16);

// Exact postselected kick, infinite-mass test particle.
JointState2D joint_kick_exact(const wavepacket::GaussianPacket& charge_packet,
                              const coin::CoinState& post, double source_charge,
                              const TestParticleSpec& test, double T, const KickGrid& grid,
                              int threads = 0);

// Weak-substituted product state. field_mode selects the |w| > 1 prescription
// (closed_form: analytic continuation, both cones; retarded_sum: causal wake).
JointState2D joint_kick_weak(const wavepacket::GaussianPacket& charge_packet, double w,
                             double source_charge, const TestParticleSpec& test, double T,
                             const KickGrid& grid, fields::FieldMode field_mode,
                             int threads = 0);

// Finite-mass kick: split-step with the vector potential folded in through
// the exact 1D minimal-coupling gauge phase. Both branches are returned.
// Substeps double until the norm distance moves < 1e-6, else
// SplitStepUnconvergedError. n_zp must be a power of two.
struct FiniteMassKick {
  JointState2D exact;
  JointState2D weak;
  double fidelity_exact_weak = 0.0;
  int substeps_used = 0;
};

FiniteMassKick joint_kick_finite_m(const wavepacket::GaussianPacket& charge_packet,
                                   const coin::CoinState& post, double source_charge,
                                   const TestParticleSpec& test, double T, const KickGrid& grid,
                                   fields::FieldMode field_mode, int threads = 0);

// ---------------------------------------------------------------------------
// Weak-substitution theorem, numerically: relative error of the exact vs
// weak-substituted moment elements across an N ladder.

struct MomentCell {
  int order = 0;
  double p = 0.0;
  int n_spins = 0;
  double relative_error = 0.0;
};

struct MomentTable {
  std::vector<MomentCell> cells;  // ordered by (order, p, N)
  bool strictly_decreasing = true;  // in N, for every (order, p)
  double max_loglog_slope = 0.0;    // least negative d log err / d log N
};

MomentTable moment_replacement_check(double alpha_up, double alpha_down, int n_max,
                                     const std::vector<double>& p_values, double T,
                                     const std::vector<int>& n_ladder);

// ---------------------------------------------------------------------------
// Causality inequalities for an observer probing the charge's field.

struct CausalityQuery {
  double observer_distance = 1.0;  // D
  double field_uncertainty = 0.0;  // Delta E; <= 0 means vacuum default 1/D^2
  int n_spins = 1;
  double charge = 1.0;             // q, natural units (q^2 against hbar c = 1)
  double horizon = 1.0;            // T
};

struct CausalityReport {
  double position_blur = 0.0;       // Delta z = (D^3 / 2q) Delta E
  double blur_ratio = 0.0;          // sqrt(N) Delta z / |w| T
  bool blur_dominates = false;      // ratio >= 10 (the ">>" reading)
  double fluctuation_margin = 0.0;  // N hbar c / 4 q^2
  bool fluctuation_pass = false;
  double charge_margin = 0.0;       // same, with q^2 counted in units of e^2
  bool charge_pass = false;
  bool causal_contact = false;      // D <= c T
};

CausalityReport causality_check(const CausalityQuery& query, double w);

}  // namespace weakflow::coupling
