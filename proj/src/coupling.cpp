#include "weakflow/coupling.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace weakflow::coupling {

namespace {

constexpr double kDirectBudgetNats = 26.0;  // cancellation digits a double can absorb
constexpr double kWakeMarginFactor = 1.12;  // required v_b / |w| in the spectral route
constexpr int kTaylorDegree = 64;

// The derivative-stack recursion is reliable for moment orders up to ~N;
// beyond that the log-derivative factorials outrun the 1/N^j suppression.
int taylor_degree_for(int n_spins) {
  int m = std::min(kTaylorDegree, n_spins);
  return m - (m % 2);  // even degree: the kick factor is even in v
}

// Largest even degree whose stack recursion stays inside the double range:
// the midpoint product C(M, M/2) s_{M/2}^2 is the overflow driver, with
// s_j ~ j! / atanh(1/|w|)^{j+1}.
int stable_stack_degree(double w, int cap) {
  const double rho_s = std::atanh(1.0 / std::max(std::abs(w), 1.0 + 1e-9));
  int best = 2;
  for (int M = 2; M <= cap; M += 2) {
    const double mid = M / 2.0;
    const double log_smid = std::lgamma(mid + 1.0) + (mid + 1.0) * std::log(1.0 / rho_s);
    if (2.0 * log_smid + M * std::log(2.0) > 690.0) break;
    best = M;
  }
  return best;
}

double cancellation_nats(const coin::CoinState& post) {
  const double num = std::abs(post.amp_up) + std::abs(post.amp_down);
  const double den = std::abs(post.amp_up + post.amp_down);
  return post.n_spins * std::log(num / den);
}

// min |zeta| over the grid's zeta interval [zp_lo - z_hi, zp_hi - z_lo]
double min_abs_zeta(const KickGrid& g) {
  const double lo = g.zp_lo - g.z_hi, hi = g.zp_hi - g.z_lo;
  if (lo <= 0.0 && hi >= 0.0) return 0.0;
  return std::min(std::abs(lo), std::abs(hi));
}

// Taylor coefficients (even orders) of exp(-i a (1 - kap v^2)^{-1/2}) in v.
// g-series is the binomial (1-x)^{-1/2} expansion; f = e^g by the standard
// series-exponential recursion, which preserves relative accuracy.
void kick_taylor(double a, double kap, int M, Eigen::VectorXcd& f) {
  Eigen::VectorXcd g = Eigen::VectorXcd::Zero(M + 1);
  double binc = 1.0;  // C(2j,j) / 4^j
  double kpow = 1.0;
  for (int j = 0; 2 * j <= M; ++j) {
    if (j > 0) {
      binc *= (2.0 * j - 1.0) / (2.0 * j);
      kpow *= kap;
    }
    g[2 * j] = cplx(0.0, -a) * binc * kpow;
  }
  f.setZero(M + 1);
  f[0] = std::exp(g[0]);
  for (int m = 1; m <= M; ++m) {
    cplx acc(0.0, 0.0);
    for (int j = 2; j <= m; j += 2) acc += double(j) * g[j] * f[m - j];
    f[m] = acc / double(m);
  }
}

Eigen::ArrayXd grid_zs(const KickGrid& g) {
  return Eigen::ArrayXd::LinSpaced(g.n_z, g.z_lo, g.z_hi);
}

// Packet moments M_m(z) = sum_n b_n v_n^m Phi(z - v_n T), m = 0..M, as an
// (n_z x M+1) table, via the momentum-space quadrature of the derivative
// stack. Reduced scale: the physical state carries e^{log overlap} extra.
Eigen::MatrixXcd packet_moments(const coin::ReducedEvolution& engine, double eps, double T,
                                const Eigen::ArrayXd& zs, int M, int threads) {
  // widen the window until the integrand has dropped 60 nats at the edge
  double P = 10.0 / eps;
  auto edge = [&](double p) { return -eps * eps * p * p + 2.0 * engine.log_gf(p * T).real(); };
  auto in_window = [&](double p) { return p * T < 1.4 * engine.n_spins(); };
  if (in_window(P) && edge(P) > -60.0) P *= 2.0;  // one doubling keeps e^{h} finite
  if (!in_window(P) || edge(P) > -60.0)
    throw UnsupportedRegimeError("kick evolution outside the shape-stability regime");

  const int np = 3001;
  const double hp = 2.0 * P / (np - 1);
  const double apref = std::pow(eps * eps / kPi, 0.25);
  const int nz = int(zs.size());

  Eigen::MatrixXcd Q = Eigen::MatrixXcd::Zero(nz, M + 1);
  const int nchunks = std::max(1, threads * 4);
  std::vector<Eigen::MatrixXcd> partial(nchunks);

  parallel_for(0, nchunks, threads, [&](std::int64_t c0, std::int64_t c1) {
    Eigen::VectorXcd stack(M + 1);
    for (std::int64_t c = c0; c < c1; ++c) {
      const std::int64_t lo = c * np / nchunks, hi = (c + 1) * np / nchunks;
      Eigen::MatrixXcd R(hi - lo, M + 1);   // per-node moment rows
      Eigen::MatrixXcd E(nz, hi - lo);      // e^{i p z} factors
      for (std::int64_t k = lo; k < hi; ++k) {
        const double p = -P + k * hp;
        const double trap = (k == 0 || k == np - 1) ? 0.5 : 1.0;
        engine.derivative_stack(p * T, stack);
        const cplx base = trap * hp / std::sqrt(2.0 * kPi) * apref *
                          std::exp(-eps * eps * p * p / 2.0) * std::exp(engine.log_gf(p * T));
        cplx ipow(1.0, 0.0);
        const cplx I(0.0, 1.0);
        for (int m = 0; m <= M; ++m) {
          R(k - lo, m) = base * ipow * stack[m];
          ipow *= I;
        }
        E.col(k - lo) = (cplx(0.0, 1.0) * p * zs.cast<cplx>()).exp();
      }
      partial[c] = E * R;
    }
  });
  for (int c = 0; c < nchunks; ++c)
    if (partial[c].size() > 0) Q += partial[c];
  return Q;
}

void apply_test_profile(JointState2D& s, const TestParticleSpec& test) {
  const double epst = test.packet.width;
  const double zpc = test.packet.center.z();
  const double pref = std::pow(epst * epst * kPi, -0.25);
  for (int j = 0; j < s.grid.n_zp; ++j) {
    const double x = s.grid.zp(j) - zpc;
    s.amp.col(j) *= test.packet.amplitude * pref * std::exp(-x * x / (2.0 * epst * epst));
  }
}

}  // namespace

void KickGrid::validate() const {
  if (n_z < 8 || n_zp < 8) throw std::invalid_argument("kick grid needs >= 8 points per axis");
  if (!(z_hi > z_lo) || !(zp_hi > zp_lo))
    throw std::invalid_argument("kick grid extents must be increasing");
}

double log_norm_sq(const JointState2D& s) {
  const double q = s.amp.squaredNorm() * s.cell_area();
  if (!(q > 0.0)) throw ZeroNormError();
  return 2.0 * s.log_scale + std::log(q);
}

double fidelity(const JointState2D& a, const JointState2D& b) {
  if (a.amp.rows() != b.amp.rows() || a.amp.cols() != b.amp.cols())
    throw std::invalid_argument("fidelity requires identical grids");
  const double na = a.amp.squaredNorm(), nb = b.amp.squaredNorm();
  if (!(na > 0.0) || !(nb > 0.0)) throw ZeroNormError();
  const cplx ab = (a.amp.conjugate().cwiseProduct(b.amp)).sum();
  return std::norm(ab) / (na * nb);
}

Eigen::ArrayXd schmidt_values(const JointState2D& s, int k_max) {
  Eigen::BDCSVD<Eigen::MatrixXcd> svd(s.amp);
  Eigen::ArrayXd sv = svd.singularValues().array().square();
  const double tot = sv.sum();
  if (!(tot > 0.0)) throw ZeroNormError();
  sv /= tot;
  const int k = std::min<int>(k_max, int(sv.size()));
  return sv.head(k);
}

// ---------------------------------------------------------------------------

JointState2D joint_kick_exact(const wavepacket::GaussianPacket& charge_packet,
                              const coin::CoinState& post, double source_charge,
                              const TestParticleSpec& test, double T, const KickGrid& grid,
                              int threads) {
  grid.validate();
  if (!test.infinite_mass())
    throw std::invalid_argument("joint_kick_exact is the infinite-mass branch");
  if (T < 0.0) throw std::invalid_argument("T must be >= 0");
  if (post.has_zero_overlap()) throw ZeroOverlapError();
  if (threads <= 0) threads = default_threads();

  const double eps = charge_packet.width;
  const double zc = charge_packet.center.z();
  const double rho = grid.rho();
  const double qq = source_charge * test.charge;

  // resolution and coverage contract
  if (grid.dz() > eps / 4.0 || grid.dzp() > test.packet.width / 4.0)
    throw GridTooCoarseError("kick grid spacing must be <= width/4 on both axes");

  JointState2D out;
  out.grid = grid;
  out.amp.setZero(grid.n_z, grid.n_zp);

  if (cancellation_nats(post) <= kDirectBudgetNats) {
    // direct sector sum; exact to within the stated cancellation budget
    const auto sectors = coin::sector_decomposition(post);
    const double pref = std::pow(eps * eps * kPi, -0.25);
    std::vector<std::int64_t> flagged(std::max(1, threads * 4), 0);
    const int nchunks = std::max(1, threads * 4);
    parallel_for(0, nchunks, threads, [&](std::int64_t c0, std::int64_t c1) {
      for (std::int64_t c = c0; c < c1; ++c) {
        const int jlo = int(c * grid.n_zp / nchunks), jhi = int((c + 1) * grid.n_zp / nchunks);
        for (int j = jlo; j < jhi; ++j) {
          for (int i = 0; i < grid.n_z; ++i) {
            const double z = grid.z(i), zeta = grid.zp(j) - z;
            cplx acc(0.0, 0.0);
            for (const auto& s : sectors) {
              if (s.weight == 0.0) continue;
              const double rad = rho * rho * (1.0 - s.eigenvalue * s.eigenvalue) + zeta * zeta;
              if (rad <= 1e-30) {
                ++flagged[c];
                continue;  // per-sector singular cell; term dropped
              }
              const double x = z - zc - s.eigenvalue * T;
              acc += s.weight * pref * std::exp(-x * x / (2.0 * eps * eps)) *
                     std::polar(1.0, -qq / std::sqrt(rad));
            }
            out.amp(i, j) = acc;
          }
        }
      }
    });
    for (auto f : flagged) out.flagged_cells += f;
    out.log_scale = 0.0;
  } else {
    // spectral route; needs the wake-side analyticity margin
    coin::ReducedEvolution engine(post);
    const double w = engine.weak_velocity();
    const double zmin = min_abs_zeta(grid);
    const double vb_min = (rho > 0.0) ? std::sqrt(1.0 + zmin * zmin / (rho * rho))
                                      : (zmin > 0.0 ? std::numeric_limits<double>::infinity() : 1.0);
    if (vb_min < kWakeMarginFactor * std::abs(w))
      throw UnsupportedRegimeError(
          "exact kick at large N with sign-alternating postselection requires the test "
          "particle strictly inside the wake: need sqrt(1 + zeta^2/rho^2) >= " +
          std::to_string(kWakeMarginFactor) + " * |<v>_w| over the whole grid");

    const int degree = std::min(taylor_degree_for(engine.n_spins()),
                                stable_stack_degree(w, kTaylorDegree));
    const Eigen::ArrayXd zs = grid_zs(grid) - zc;
    const Eigen::MatrixXcd Q = packet_moments(engine, eps, T, zs, degree, threads);

    std::vector<double> tail_ratio(std::max(1, threads * 4), 0.0);
    const int nchunks = std::max(1, threads * 4);
    parallel_for(0, nchunks, threads, [&](std::int64_t c0, std::int64_t c1) {
      Eigen::VectorXcd f(degree + 1);
      for (std::int64_t c = c0; c < c1; ++c) {
        const int jlo = int(c * grid.n_zp / nchunks), jhi = int((c + 1) * grid.n_zp / nchunks);
        for (int j = jlo; j < jhi; ++j) {
          for (int i = 0; i < grid.n_z; ++i) {
            const double zeta = grid.zp(j) - grid.z(i);
            const double r2 = rho * rho + zeta * zeta;
            kick_taylor(qq / std::sqrt(r2), rho * rho / r2, degree, f);
            cplx acc(0.0, 0.0);
            for (int m = 0; m <= degree; m += 2) acc += f[m] * Q(i, m);
            out.amp(i, j) = acc;
            const double tail = std::abs(f[degree] * Q(i, degree));
            const double scale = std::abs(Q(i, 0)) + 1e-300;
            tail_ratio[c] = std::max(tail_ratio[c], tail / scale);
          }
        }
      }
    });
    double worst = 0.0;
    for (double r : tail_ratio) worst = std::max(worst, r);
    if (worst > 1e-6)
      throw UnsupportedRegimeError("kick Taylor pairing did not converge (tail ratio " +
                                   std::to_string(worst) + "); move the grid deeper into the wake");
    out.log_scale = engine.log_abs_overlap();
    if (engine.overlap_sign() < 0) out.amp = -out.amp;
  }

  apply_test_profile(out, test);
  return out;
}

JointState2D joint_kick_weak(const wavepacket::GaussianPacket& charge_packet, double w,
                             double source_charge, const TestParticleSpec& test, double T,
                             const KickGrid& grid, fields::FieldMode field_mode, int threads) {
  grid.validate();
  if (!test.infinite_mass())
    throw std::invalid_argument("joint_kick_weak is the infinite-mass branch");
  if (T < 0.0) throw std::invalid_argument("T must be >= 0");
  if (threads <= 0) threads = default_threads();

  const double eps = charge_packet.width;
  const double zc = charge_packet.center.z();
  const double rho2 = grid.rho() * grid.rho();
  const double pref = std::pow(eps * eps * kPi, -0.25);

  JointState2D out;
  out.grid = grid;
  out.amp.setZero(grid.n_z, grid.n_zp);
  std::vector<std::int64_t> zero_cells(std::max(1, threads * 4), 0);
  const int nchunks = std::max(1, threads * 4);
  parallel_for(0, nchunks, threads, [&](std::int64_t c0, std::int64_t c1) {
    for (std::int64_t c = c0; c < c1; ++c) {
      const int jlo = int(c * grid.n_zp / nchunks), jhi = int((c + 1) * grid.n_zp / nchunks);
      for (int j = jlo; j < jhi; ++j) {
        for (int i = 0; i < grid.n_z; ++i) {
          const double z = grid.z(i), zeta = grid.zp(j) - z;
          double V = 0.0;
          if (field_mode == fields::FieldMode::closed_form) {
            const double rad = rho2 * (1.0 - w * w) + zeta * zeta;
            if (rad > 1e-30) V = source_charge / std::sqrt(rad);
            else ++zero_cells[c];
          } else {
            const auto rp = fields::lienard_wiechert({source_charge, w, 0.0},
                                                     {grid.dx, grid.dy, zeta});
            if (rp.status == fields::SampleStatus::defined) V = rp.value;
            else ++zero_cells[c];
          }
          const double x = z - zc - w * T;
          out.amp(i, j) = pref * std::exp(-x * x / (2.0 * eps * eps)) *
                          std::polar(1.0, -test.charge * V);
        }
      }
    }
  });
  for (auto zc_ : zero_cells) out.zero_field_cells += zc_;
  apply_test_profile(out, test);
  return out;
}

// ---------------------------------------------------------------------------
// Finite mass: split-step with the exact 1D minimal-coupling gauge phase.

namespace {

struct ColumnContext {
  int n = 0;
  double dzp = 0.0;
  Eigen::ArrayXd p;  // FFT momenta, wrap order
};

ColumnContext make_column_context(const KickGrid& g) {
  ColumnContext ctx;
  ctx.n = g.n_zp;
  ctx.dzp = g.dzp();
  if (!is_pow2(ctx.n))
    throw std::invalid_argument("finite-mass kick needs a power-of-two z' grid");
  ctx.p.resize(ctx.n);
  const double L = ctx.n * ctx.dzp;
  for (int k = 0; k < ctx.n; ++k) {
    const int kk = (k <= ctx.n / 2) ? k : k - ctx.n;
    ctx.p[k] = 2.0 * kPi * kk / L;
  }
  return ctx;
}

// Apply the kick operator on one column given the potential samples V[j] at
// zeta_j = zp_j - z and the velocity v entering A_z = v V. Lambda is the
// cumulative-trapezoid antiderivative of A_z along the column (branch-safe);
// the kinetic factor is gauge-dressed, which is the exact 1D minimal coupling.
void kick_column(const ColumnContext& ctx, const Eigen::ArrayXcd& V, double qprime,
                 double inv_two_m, cplx v, int substeps, Eigen::VectorXcd& column) {
  const int n = ctx.n;
  Eigen::ArrayXcd Lambda(n);
  Lambda[0] = cplx(0.0, 0.0);
  for (int j = 1; j < n; ++j)
    Lambda[j] = Lambda[j - 1] + 0.5 * (V[j] + V[j - 1]) * v * ctx.dzp;

  const double dt = 1.0 / substeps;
  const Eigen::ArrayXcd phaseV = (cplx(0.0, -qprime * dt) * V).exp();
  const Eigen::ArrayXcd gaugeP = (cplx(0.0, +qprime) * Lambda).exp();
  const Eigen::ArrayXcd gaugeM = (cplx(0.0, -qprime) * Lambda).exp();
  const Eigen::ArrayXcd kinHalf =
      (cplx(0.0, -0.5 * dt * inv_two_m) * ctx.p.square().cast<cplx>()).exp();

  auto half_kinetic = [&](Eigen::VectorXcd& psi) {
    psi.array() *= gaugeM;
    fft_pow2(psi, -1);
    psi.array() *= kinHalf;
    fft_pow2(psi, +1);
    psi.array() *= gaugeP;
  };
  for (int s = 0; s < substeps; ++s) {
    half_kinetic(column);
    column.array() *= phaseV;
    half_kinetic(column);
  }
}

// One full finite-mass state for a list of (coefficient, velocity) branches.
// weak_mode: for a single real |v| > 1 branch the potential follows the field
// mode (zero outside support); otherwise the closed form, which stays in the
// right half plane for the complex-circle velocities inside the envelope.
JointState2D finite_m_state(const wavepacket::GaussianPacket& charge_packet,
                            const std::vector<std::pair<cplx, cplx>>& branches,  // (coeff, v)
                            double source_charge, const TestParticleSpec& test, double T,
                            const KickGrid& grid, fields::FieldMode mode, bool weak_mode,
                            int substeps, int threads, double log_scale) {
  const ColumnContext ctx = make_column_context(grid);
  const double eps = charge_packet.width;
  const double zc = charge_packet.center.z();
  const double rho2 = grid.rho() * grid.rho();
  const double pref = std::pow(eps * eps * kPi, -0.25);
  const double epst = test.packet.width;
  const double zpc = test.packet.center.z();
  const double tpref = std::pow(epst * epst * kPi, -0.25);
  const double inv_two_m = test.infinite_mass() ? 0.0 : 0.5 / test.mass;

  Eigen::VectorXcd omega(ctx.n);
  for (int j = 0; j < ctx.n; ++j) {
    const double x = grid.zp(j) - zpc;
    omega[j] = test.packet.amplitude * tpref * std::exp(-x * x / (2.0 * epst * epst));
  }

  JointState2D out;
  out.grid = grid;
  out.amp.setZero(grid.n_z, grid.n_zp);
  out.log_scale = log_scale;

  parallel_for(0, grid.n_z, threads, [&](std::int64_t i0, std::int64_t i1) {
    Eigen::ArrayXcd V(ctx.n);
    Eigen::VectorXcd col(ctx.n);
    for (std::int64_t i = i0; i < i1; ++i) {
      const double z = grid.z(i);
      for (const auto& [coeff, v] : branches) {
        if (coeff == cplx(0.0, 0.0)) continue;
        for (int j = 0; j < ctx.n; ++j) {
          const double zeta = grid.zp(j) - z;
          if (weak_mode && std::abs(v.real()) > 1.0) {
            double Vr = 0.0;
            if (mode == fields::FieldMode::closed_form) {
              const double rad = rho2 * (1.0 - v.real() * v.real()) + zeta * zeta;
              if (rad > 1e-30) Vr = source_charge / std::sqrt(rad);
            } else {
              const auto rp = fields::lienard_wiechert({source_charge, v.real(), 0.0},
                                                       {grid.dx, grid.dy, zeta});
              if (rp.status == fields::SampleStatus::defined) Vr = rp.value;
            }
            V[j] = cplx(Vr, 0.0);
          } else {
            const cplx rad = rho2 * (1.0 - v * v) + zeta * zeta;
            V[j] = (std::abs(rad) > 1e-30) ? source_charge / std::sqrt(rad) : cplx(0.0, 0.0);
          }
        }
        col = omega;
        kick_column(ctx, V, test.charge, inv_two_m, v, substeps, col);
        const cplx xarg = (z - zc - v * T) / eps;
        const cplx phi = pref * std::exp(-xarg * xarg / 2.0);
        out.amp.row(i) += (coeff * phi) * col.transpose();
      }
    }
  });
  return out;
}

double normalized_distance(const JointState2D& a, const JointState2D& b) {
  const double na = std::sqrt(a.amp.squaredNorm()), nb = std::sqrt(b.amp.squaredNorm());
  if (!(na > 0.0) || !(nb > 0.0)) throw ZeroNormError();
  return (a.amp / na - b.amp / nb).norm();
}

}  // namespace

FiniteMassKick joint_kick_finite_m(const wavepacket::GaussianPacket& charge_packet,
                                   const coin::CoinState& post, double source_charge,
                                   const TestParticleSpec& test, double T, const KickGrid& grid,
                                   fields::FieldMode field_mode, int threads) {
  grid.validate();
  if (T < 0.0) throw std::invalid_argument("T must be >= 0");
  if (post.has_zero_overlap()) throw ZeroOverlapError();
  if (threads <= 0) threads = default_threads();

  coin::ReducedEvolution engine(post);
  const double w = engine.weak_velocity();
  const double rho = grid.rho();
  const double eps = charge_packet.width;

  // exact branch: per-sector velocities, either real (direct) or on a complex
  // circle (Cauchy-coefficient reconstruction paired with the bare moments)
  const bool direct = cancellation_nats(post) <= kDirectBudgetNats;
  double radius = 0.0;
  int ncirc = 0;
  if (!direct) {
    const double zmin = min_abs_zeta(grid);
    const double vb_min = (rho > 0.0) ? std::sqrt(1.0 + zmin * zmin / (rho * rho)) : 1.0;
    if (vb_min < 1.4 * std::abs(w))
      throw UnsupportedRegimeError(
          "finite-mass exact kick at large N needs the test particle deep in the wake: "
          "sqrt(1 + zeta^2/rho^2) >= 1.4 |<v>_w| over the whole grid");
    radius = 0.8 * vb_min;
    // keep the continued Gaussian factor |exp(-(z - vT)^2/2eps^2)| bounded
    if (T > 0.0) radius = std::min(radius, std::max(1.12 * std::abs(w), 6.0 * eps / T));
    if (radius < 1.1 * std::abs(w))
      throw UnsupportedRegimeError("finite-mass exact kick: contour radius below |<v>_w|");
    ncirc = 128;
  }

  auto build = [&](int substeps) -> FiniteMassKick {
    FiniteMassKick r;
    // weak branch: one velocity w, potential per the field mode
    r.weak = finite_m_state(charge_packet, {{cplx(1.0, 0.0), cplx(w, 0.0)}}, source_charge, test,
                            T, grid, field_mode, /*weak_mode=*/true, substeps, threads, 0.0);
    if (direct) {
      const auto sectors = coin::sector_decomposition(post);
      std::vector<std::pair<cplx, cplx>> branches;
      branches.reserve(sectors.size());
      for (const auto& s : sectors)
        branches.push_back({cplx(s.weight, 0.0), cplx(s.eigenvalue, 0.0)});
      r.exact = finite_m_state(charge_packet, branches, source_charge, test, T, grid, field_mode,
                               /*weak_mode=*/false, substeps, threads, 0.0);
    } else {
      // S = sum_k W_k State(v_k),   v_k = radius e^{i th_k},
      // W_k = (1/n_c) sum_m e^{-i m th_k} R_m / radius^m,  R_m = sum_n b_n v_n^m.
      const int M = std::min({ncirc - 1, engine.n_spins(), stable_stack_degree(w, 112)});
      Eigen::VectorXcd stack(M + 1);
      engine.reduced_moments(0.0, stack);
      const double trunc = std::abs(stack[M]) / std::pow(radius, M);
      if (trunc > 1e-6)
        throw UnsupportedRegimeError(
            "finite-mass exact kick: moment series truncates too early (tail " +
            std::to_string(trunc) + "); move the grid deeper into the wake");
      std::vector<std::pair<cplx, cplx>> branches;
      branches.reserve(ncirc);
      for (int k = 0; k < ncirc; ++k) {
        const double th = 2.0 * kPi * k / ncirc;
        cplx acc(0.0, 0.0);
        double rpow = 1.0;
        for (int m = 0; m <= M; ++m) {
          acc += std::polar(1.0, -m * th) * stack[m] / rpow;
          rpow *= radius;
        }
        branches.push_back({acc / double(ncirc), std::polar(radius, th)});
      }
      r.exact = finite_m_state(charge_packet, branches, source_charge, test, T, grid, field_mode,
                               /*weak_mode=*/false, substeps, threads, engine.log_abs_overlap());
      if (engine.overlap_sign() < 0) r.exact.amp = -r.exact.amp;
    }
    r.substeps_used = substeps;
    return r;
  };

  FiniteMassKick coarse = build(2);
  FiniteMassKick fine = build(4);
  const double dist = std::max(normalized_distance(coarse.exact, fine.exact),
                               normalized_distance(coarse.weak, fine.weak));
  if (dist > 1e-6) {
    FiniteMassKick finer = build(8);
    const double dist2 = std::max(normalized_distance(fine.exact, finer.exact),
                                  normalized_distance(fine.weak, finer.weak));
    if (dist2 > 1e-6) throw SplitStepUnconvergedError(dist2);
    finer.fidelity_exact_weak = fidelity(finer.exact, finer.weak);
    return finer;
  }
  fine.fidelity_exact_weak = fidelity(fine.exact, fine.weak);
  return fine;
}

// ---------------------------------------------------------------------------

MomentTable moment_replacement_check(double alpha_up, double alpha_down, int n_max,
                                     const std::vector<double>& p_values, double T,
                                     const std::vector<int>& n_ladder) {
  if (n_max < 0 || n_max > 10) throw std::invalid_argument("n_max must be in [0, 10]");
  if (p_values.empty() || n_ladder.empty())
    throw std::invalid_argument("need at least one p and one N");
  MomentTable table;
  table.max_loglog_slope = -std::numeric_limits<double>::infinity();
  for (int order = 0; order <= n_max; ++order) {
    for (double p : p_values) {
      double prev_err = -1.0;
      int prev_n = 0;
      for (int N : n_ladder) {
        coin::CoinState post(N, alpha_up, alpha_down);
        const auto me = coin::moment_element(post, order, p, T);
        table.cells.push_back({order, p, N, me.relative_error});
        if (prev_err > 0.0 && me.relative_error > 0.0) {
          const double slope = (std::log(me.relative_error) - std::log(prev_err)) /
                               (std::log(double(N)) - std::log(double(prev_n)));
          table.max_loglog_slope = std::max(table.max_loglog_slope, slope);
        }
        if (prev_err >= 0.0 && me.relative_error >= prev_err && prev_err > 1e-15)
          table.strictly_decreasing = false;
        prev_err = me.relative_error;
        prev_n = N;
      }
    }
  }
  return table;
}

CausalityReport causality_check(const CausalityQuery& query, double w) {
  if (!(query.observer_distance > 0.0) || !(query.horizon > 0.0))
    throw std::invalid_argument("observer distance and horizon must be positive");
  if (query.n_spins < 1) throw std::invalid_argument("n_spins must be >= 1");

  const double D = query.observer_distance;
  const double T = query.horizon;
  const double q = query.charge;
  const double dE = (query.field_uncertainty > 0.0) ? query.field_uncertainty : 1.0 / (D * D);

  CausalityReport r;
  r.position_blur = (q != 0.0) ? (D * D * D / (2.0 * q)) * dE
                               : std::numeric_limits<double>::infinity();
  const double signal = std::abs(w) * T;
  r.blur_ratio = (signal > 0.0) ? std::sqrt(double(query.n_spins)) * r.position_blur / signal
                                : std::numeric_limits<double>::infinity();
  r.blur_dominates = r.blur_ratio >= 10.0;

  const double q2 = q * q;
  r.fluctuation_margin = (q2 > 0.0) ? double(query.n_spins) / (4.0 * q2)
                                    : std::numeric_limits<double>::infinity();
  r.fluctuation_pass = r.fluctuation_margin > 1.0;
  // same condition with the charge counted against the elementary charge
  r.charge_margin = (q2 > 0.0) ? double(query.n_spins) * kAlpha / (4.0 * q2)
                               : std::numeric_limits<double>::infinity();
  r.charge_pass = r.charge_margin > 1.0;
  r.causal_contact = D <= T;
  return r;
}

}  // namespace weakflow::coupling
