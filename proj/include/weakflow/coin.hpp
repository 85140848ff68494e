#pragma once

// Internal N-spin "coin" space of a particle whose velocity operator is the
// mean of N Pauli-z operators. Both the fixed preselected state and any
// postselected state are symmetric product states, so the 2^N-dimensional
// space reduces exactly to N+1 velocity sectors with binomial amplitudes.
// Everything here works in that reduction; weights are carried in log space
// with sign tracking because amplitude products reach e^{-2000} at N ~ 10^3.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "weakflow/common.hpp"

namespace weakflow::coin {

// Symmetric product state with real per-spin amplitudes (amp_up, amp_down).
// Normalization amp_up^2 + amp_down^2 = 1 is enforced to 1e-12.
struct CoinState {
  int n_spins = 1;
  double amp_up = 1.0;
  double amp_down = 0.0;

  CoinState(int n, double up, double down);

  // Weak velocity of the fixed preselected ensemble postselected on *this,
  // in units of c. Independent of n_spins.
  double weak_velocity() const;

  bool has_zero_overlap() const;
};

// Fixed preselected state: every spin in (|up> + |down>)/sqrt(2).
inline CoinState preselected(int n_spins) {
  return CoinState(n_spins, 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0));
}

// One velocity eigenspace: v_n = (2n - N)/N with its postselected amplitude.
// weight = 2^{-N/2} amp_up^n amp_down^{N-n} C(N,n); sign/log kept separately
// so the decomposition stays meaningful when the linear value underflows.
struct VelocitySector {
  int index = 0;
  double eigenvalue = 0.0;
  double weight = 0.0;
  double log_abs_weight = 0.0;
  int sign = 0;
};

struct WeakValueReport {
  double weak_velocity = 0.0;
  double overlap_amplitude = 0.0;
  double postselect_probability_static = 0.0;
  double log_postselect_probability_static = 0.0;
};

// <post|pre> = ((amp_up + amp_down)/sqrt(2))^N, and its log/sign pieces.
double overlap(const CoinState& post);
double log_abs_overlap(const CoinState& post);
int overlap_sign(const CoinState& post);

double weak_velocity(const CoinState& post);  // throws ZeroOverlapError

WeakValueReport weak_value_report(const CoinState& post);

std::vector<VelocitySector> sector_decomposition(const CoinState& post);

// Exact vs weak-substituted matrix element of v^n e^{-i p v T} between the
// preselected and postselected states. Exact values can underflow the double
// range at large N; log-magnitude/phase forms and the relative error are
// computed in reduced space and remain valid there.
struct MomentElement {
  cplx exact{0.0, 0.0};
  cplx weak{0.0, 0.0};
  double log_abs_exact = 0.0;
  double arg_exact = 0.0;
  double log_abs_weak = 0.0;
  double arg_weak = 0.0;
  double relative_error = 0.0;  // |exact - weak| / |weak|
};

// n <= 10 (documented range). Throws ZeroOverlapError.
MomentElement moment_element(const CoinState& post, int n, double p, double T);

// Velocity eigenvalues sampled with the Born weights of the preselected
// state alone (a fair N-step quantum coin). Deterministic for a given seed;
// parallel shards must use derive_seed.
Eigen::VectorXd born_sample(int n_spins, std::uint64_t seed, std::int64_t count);

// ---------------------------------------------------------------------------
// Reduced generating-function engine.
//
// For the postselected evolution all sector sums reduce to
//   sum_n b_n e^{-i u v_n} = e^{h(u)},  b_n = w_n / sum_k w_k,
//   h(u) = N Log(cos(u/N) - i <v>_w sin(u/N)),
// a pure product form with no cancellation, stable at any N. Derivatives of
// e^{h} give the reduced velocity moments
//   sum_n b_n v_n^m e^{-i u v_n} = i^m (d/du)^m e^{h(u)},
// computed by a Bell-polynomial recursion on the log-derivative stack.
// This is the only evaluation path that survives sign-alternating weights at
// large N (direct summation loses ~N log10|<v>_w| digits to cancellation).

class ReducedEvolution {
 public:
  explicit ReducedEvolution(const CoinState& post);  // throws ZeroOverlapError

  int n_spins() const { return n_; }
  double weak_velocity() const { return w_; }
  double log_abs_overlap() const { return log_overlap_; }
  int overlap_sign() const { return overlap_sign_; }

  // h(u); Re h is the log-magnitude of the reduced sector sum.
  cplx log_gf(double u) const;

  // out[m] = (d/du)^m e^{h(u)} / e^{h(u)}, m = 0..out.size()-1.
  void derivative_stack(double u, Eigen::Ref<Eigen::VectorXcd> out) const;

  // Reduced phase-weighted moments D_m(u) = sum_n b_n v_n^m e^{-i u v_n},
  // divided by e^{h(u)}: out[m] = i^m * derivative_stack[m].
  void reduced_moments(double u, Eigen::Ref<Eigen::VectorXcd> out) const;

 private:
  int n_;
  double w_;
  double log_overlap_;
  int overlap_sign_;
};

// log(  (1/2 + amp_up*amp_down)^N  ): static postselection probability.
double log_postselect_probability_static(const CoinState& post);

}  // namespace weakflow::coin
