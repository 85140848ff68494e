#include "weakflow/fields.hpp"

#include <algorithm>
#include <cmath>

namespace weakflow::fields {

namespace {

constexpr double kWorldlineTol = 1e-30;  // on the radicand
constexpr double kLuminalTol = 1e-12;    // |1 - v^2| below this: linear branch

double radicand(const SourceSpec& src, const Eigen::Vector3d& x) {
  const double rho2 = x.x() * x.x() + x.y() * x.y();
  const double dz = x.z() - src.speed * src.time;
  return rho2 * (1.0 - src.speed * src.speed) + dz * dz;
}

double g_of_tau(const SourceSpec& src, const Eigen::Vector3d& x, double tau) {
  const double rho2 = x.x() * x.x() + x.y() * x.y();
  const double dz = x.z() - src.speed * tau;
  return src.time - tau - std::sqrt(rho2 + dz * dz);
}

}  // namespace

PotentialValue scalar_potential_closed(const SourceSpec& src, const Eigen::Vector3d& x) {
  const double rad = radicand(src, x);
  PotentialValue out;
  if (rad > kWorldlineTol) {
    out.value = src.charge / std::sqrt(rad);
    out.status = SampleStatus::defined;
  } else if (std::abs(src.speed) <= 1.0) {
    out.status = SampleStatus::on_worldline;
  } else {
    out.status = SampleStatus::undefined;  // outside the superluminal support
  }
  return out;
}

std::vector<double> retarded_roots(const SourceSpec& src, const Eigen::Vector3d& x) {
  const double v = src.speed, t = src.time;
  const double rho2 = x.x() * x.x() + x.y() * x.y();
  const double z = x.z();
  // c^2 (t - tau)^2 = rho^2 + (z - v tau)^2, i.e.
  // (1 - v^2) tau^2 + 2 (v z - t) tau + (t^2 - rho^2 - z^2) = 0, with tau <= t.
  const double a = 1.0 - v * v;
  const double b = 2.0 * (v * z - t);
  const double c = t * t - rho2 - z * z;

  std::vector<double> roots;
  if (std::abs(a) < kLuminalTol) {
    if (std::abs(b) > 0.0) {
      const double tau = -c / b;
      if (tau <= t) roots.push_back(tau);
    }
  } else {
    const double disc = b * b - 4.0 * a * c;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      const double q = -0.5 * (b + (b >= 0.0 ? sq : -sq));
      double r1 = q / a;
      double r2 = (q != 0.0) ? c / q : (-b / a - r1);
      if (r1 > r2) std::swap(r1, r2);
      for (double tau : {r1, r2}) {
        if (tau > t + 1e-12 * std::max(1.0, std::abs(t))) continue;
        // one Newton polish on g keeps residuals at machine level
        const double dz0 = z - v * tau;
        const double R = std::sqrt(rho2 + dz0 * dz0);
        if (R > 0.0) {
          const double gp = -1.0 + v * dz0 / R;
          if (std::abs(gp) > 1e-14) tau -= g_of_tau(src, x, tau) / gp;
        }
        if (tau <= t + 1e-12 * std::max(1.0, std::abs(t))) roots.push_back(tau);
      }
      if (roots.size() == 2 && roots[0] > roots[1]) std::swap(roots[0], roots[1]);
      // collapse a double root (tangent cone) to one entry
      if (roots.size() == 2 &&
          std::abs(roots[1] - roots[0]) < 1e-12 * std::max(1.0, std::abs(roots[0])))
        roots.pop_back();
    }
  }
  return roots;
}

RetardedPotential lienard_wiechert(const SourceSpec& src, const Eigen::Vector3d& x) {
  RetardedPotential out;
  const auto roots = retarded_roots(src, x);
  out.n_roots = int(roots.size());
  if (roots.empty()) {
    out.status = (std::abs(src.speed) > 1.0) ? SampleStatus::undefined
                                             : SampleStatus::on_worldline;
    return out;
  }
  const double rho2 = x.x() * x.x() + x.y() * x.y();
  for (double tau : roots) {
    const double dz = x.z() - src.speed * tau;
    const double R = std::sqrt(rho2 + dz * dz);
    out.max_residual = std::max(out.max_residual, std::abs(g_of_tau(src, x, tau)));
    // delta-function rule: 1/(R |g'|) per root; g' = -1 + v (z - v tau)/R
    const double denom = std::abs(-R + src.speed * dz);
    if (R < kWorldlineTol || denom < 1e-14) {
      out.status = SampleStatus::on_worldline;  // field point on the cone/worldline
      continue;
    }
    out.value += src.charge / denom;
  }
  return out;
}

double mach_cone_half_angle_deg(double speed) {
  if (std::abs(speed) <= 1.0) throw SubluminalInputError();
  return std::atan(1.0 / std::sqrt(speed * speed - 1.0)) * 180.0 / kPi;
}

// ---------------------------------------------------------------------------

void GridSpec2D::validate() const {
  if (n_rho < 2 || n_z < 2) throw std::invalid_argument("grid needs at least 2 points per axis");
  if (!(rho_hi > rho_lo) || !(z_hi > z_lo))
    throw std::invalid_argument("grid extents must be increasing");
  if (rho_lo < 0.0) throw std::invalid_argument("rho must be >= 0");
}

FieldMap field_map(const SourceSpec& src, const GridSpec2D& grid, FieldMode mode, int threads) {
  grid.validate();
  if (threads <= 0) threads = default_threads();
  FieldMap map;
  map.grid = grid;
  map.mode = mode;
  map.source = src;
  map.samples.resize(std::size_t(grid.n_rho) * grid.n_z);

  parallel_for(0, grid.n_rho, threads, [&](std::int64_t r0, std::int64_t r1) {
    for (std::int64_t ir = r0; ir < r1; ++ir) {
      const double rho = grid.rho_lo + ir * grid.drho();
      for (int iz = 0; iz < grid.n_z; ++iz) {
        const double z = grid.z_lo + iz * grid.dz();
        const Eigen::Vector3d x(rho, 0.0, z);
        FieldSample& s = map.samples[std::size_t(ir) * grid.n_z + iz];
        s.rho = rho;
        s.z = z;
        if (mode == FieldMode::closed_form) {
          const PotentialValue pv = scalar_potential_closed(src, x);
          s.V = pv.value;
          s.status = pv.status;
          s.n_roots = 0;
        } else {
          const RetardedPotential rp = lienard_wiechert(src, x);
          s.V = rp.value;
          s.status = rp.status;
          s.n_roots = rp.n_roots;
        }
        s.A_z = src.speed * s.V;
        if (s.status != SampleStatus::defined) s.V = s.A_z = 0.0;
      }
    }
  });
  for (const auto& s : map.samples)
    if (s.status != SampleStatus::defined) ++map.flagged;
  return map;
}

SupportComparison compare_support(const FieldMap& closed, const FieldMap& retarded) {
  if (closed.samples.size() != retarded.samples.size())
    throw std::invalid_argument("support comparison requires identical grids");
  SupportComparison cmp;
  for (std::size_t i = 0; i < closed.samples.size(); ++i) {
    const bool dc = closed.samples[i].status == SampleStatus::defined;
    const bool dr = retarded.samples[i].status == SampleStatus::defined;
    if (dc && dr) {
      ++cmp.both;
      const double denom = std::abs(closed.samples[i].V);
      if (denom > 0.0)
        cmp.max_rel_diff = std::max(
            cmp.max_rel_diff, std::abs(closed.samples[i].V - retarded.samples[i].V) / denom);
    } else if (dc) {
      ++cmp.closed_only;
    } else if (dr) {
      ++cmp.retarded_only;
    }
  }
  return cmp;
}

}  // namespace weakflow::fields
