#pragma once

// Electromagnetic potentials of a point charge on the trajectory z = v t,
// with superluminal v allowed. Two independent evaluation routes:
//  * closed form: the boosted Coulomb potential
//      V = q [ rho^2 (1 - v^2) + (z' - v t)^2 ]^{-1/2},
//    analytically continued to |v| > 1 (undefined where the radicand <= 0);
//  * retarded sum: solve c(t - tau) = |x' - x(tau)| for tau <= t and sum
//    q / (R |g'(tau)|) over the roots. Subluminal: one root, equal to the
//    closed form. Superluminal: zero or two roots, supported only on the
//    trailing (Mach) cone.
// The retarded route is the physical ground truth for |v| > 1.

#include <vector>

#include <Eigen/Core>

#include "weakflow/common.hpp"

namespace weakflow::fields {

struct SourceSpec {
  double charge = 1.0;
  double speed = 0.0;  // units of c; any real value
  double time = 0.0;
};

enum class SampleStatus { defined, on_worldline, undefined };

struct PotentialValue {
  double value = 0.0;
  SampleStatus status = SampleStatus::defined;
};

PotentialValue scalar_potential_closed(const SourceSpec& src, const Eigen::Vector3d& x);

// A_z = v V wherever V is defined.
inline PotentialValue vector_potential_closed(const SourceSpec& src, const Eigen::Vector3d& x) {
  PotentialValue v = scalar_potential_closed(src, x);
  v.value *= src.speed;
  return v;
}

// All retarded times tau <= t with c(t - tau) = |x' - x(tau)|, ascending.
// |v| = 1 degenerates to a linear equation (single root branch).
std::vector<double> retarded_roots(const SourceSpec& src, const Eigen::Vector3d& x);

struct RetardedPotential {
  double value = 0.0;
  int n_roots = 0;
  SampleStatus status = SampleStatus::defined;  // undefined: no causal root
  double max_residual = 0.0;                    // max |g(tau)| over the roots
};

RetardedPotential lienard_wiechert(const SourceSpec& src, const Eigen::Vector3d& x);

// Half-angle (degrees) of the field-support cone about the trajectory,
// atan(1/sqrt(v^2-1)). Throws SubluminalInputError for |v| <= 1.
double mach_cone_half_angle_deg(double speed);

// ---------------------------------------------------------------------------

struct GridSpec2D {
  double rho_lo = 0.0, rho_hi = 1.0;
  int n_rho = 2;
  double z_lo = 0.0, z_hi = 1.0;
  int n_z = 2;

  void validate() const;
  double drho() const { return (rho_hi - rho_lo) / (n_rho - 1); }
  double dz() const { return (z_hi - z_lo) / (n_z - 1); }
};

enum class FieldMode { closed_form, retarded_sum };

struct FieldSample {
  double rho = 0.0, z = 0.0;
  double V = 0.0, A_z = 0.0;
  int n_roots = 0;
  SampleStatus status = SampleStatus::defined;
};

struct FieldMap {
  GridSpec2D grid;
  FieldMode mode = FieldMode::closed_form;
  SourceSpec source;
  std::vector<FieldSample> samples;  // rho-major: samples[i_rho * n_z + i_z]
  std::int64_t flagged = 0;          // samples with status != defined
};

// Per-sample failures are flagged, never thrown; rows evaluate in parallel.
FieldMap field_map(const SourceSpec& src, const GridSpec2D& grid, FieldMode mode,
                   int threads = 0);

// Support disagreement between modes (used with a closed-form map and a
// retarded map on the same grid): cells where exactly one mode is defined.
struct SupportComparison {
  std::int64_t both = 0;
  std::int64_t closed_only = 0;    // expected: the leading (acausal) cone
  std::int64_t retarded_only = 0;  // expected: none
  double max_rel_diff = 0.0;       // over cells defined in both
};

SupportComparison compare_support(const FieldMap& closed, const FieldMap& retarded);

}  // namespace weakflow::fields
