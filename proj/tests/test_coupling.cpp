#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "oracles.hpp"
#include "weakflow/coupling.hpp"
#include "weakflow/io.hpp"

using namespace weakflow;
using namespace weakflow::coupling;
using coin::CoinState;
using wavepacket::GaussianPacket;

namespace {

const double kRoot2Inv = 1.0 / std::sqrt(2.0);

// wake-side geometry: test particle well behind the charge at rho = 3
KickGrid wake_grid(double w, double T, int n_z = 96, int n_zp = 128, double zp_center = -50.0) {
  KickGrid g;
  g.z_lo = -T - 8.0;
  g.z_hi = std::max(T, std::max(0.0, w * T)) + 8.0;
  g.n_z = n_z;
  g.zp_lo = zp_center - 8.0;
  g.zp_hi = zp_center + 8.0;
  g.n_zp = n_zp;
  g.dx = 3.0;
  g.dy = 0.0;
  return g;
}

TestParticleSpec heavy_test_particle(double qprime, double zp_center = -50.0) {
  TestParticleSpec t;
  t.charge = qprime;
  t.mass = std::numeric_limits<double>::infinity();
  t.packet = GaussianPacket(Eigen::Vector3d(0, 0, zp_center), 1.0);
  return t;
}

// brute-force cell value: sum_n w_n Phi(z - v_n T) e^{-i q q' V(zeta, v_n)} Omega(z').
// Long double buys ~3 extra decimal digits against the sign-alternating
// cancellation, extending the oracle a few N past the double budget.
cplx brute_cell(int N, double au, double ad, double q, double qprime, double rho, double T,
                double z, double zp, double zp_center) {
  using ld = long double;
  const ld pref = std::pow(ld(oracles::kPi), ld(-0.25));
  std::complex<ld> acc(0.0L, 0.0L);
  for (int n = 0; n <= N; ++n) {
    ld w = std::pow(ld(1) / std::sqrt(ld(2)), N) * oracles::binom(N, n);
    for (int i = 0; i < n; ++i) w *= ld(au);
    for (int i = 0; i < N - n; ++i) w *= ld(ad);
    const ld v = ld(2 * n - N) / N;
    const ld x = ld(z) - v * ld(T);
    const ld zeta = ld(zp) - ld(z);
    const ld rad = ld(rho) * ld(rho) * (1.0L - v * v) + zeta * zeta;
    const ld phase = -ld(q) * ld(qprime) / std::sqrt(rad);
    acc += w * pref * std::exp(-x * x / 2.0L) *
           std::complex<ld>(std::cos(phase), std::sin(phase));
  }
  const ld xo = ld(zp) - ld(zp_center);
  acc *= pref * std::exp(-xo * xo / 2.0L);
  return {double(acc.real()), double(acc.imag())};
}

}  // namespace

TEST_CASE("uncoupled kick is a product state") {
  const double T = 0.4;
  for (int n : {6, 250}) {  // direct route and spectral route
    CoinState post(n, 0.8, -0.6);
    const auto grid = wake_grid(post.weak_velocity(), T);
    const auto st = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                     heavy_test_particle(0.0), T, grid);
    const auto schmidt = schmidt_values(st, 4);
    CHECK(schmidt[0] >= 1.0 - 1e-10);
  }
}

TEST_CASE("uncoupled kick equals the evolved packet times the test profile") {
  CoinState post(8, 0.8, -0.6);
  const double T = 0.4;
  const auto grid = wake_grid(7.0, T);
  const auto st = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                   heavy_test_particle(0.0), T, grid);
  for (int i : {10, 40, 80}) {
    for (int j : {5, 64, 120}) {
      const cplx expect = oracles::packet_sum(8, 0.8, -0.6, T, 1.0, grid.z(i)) *
                          std::pow(oracles::kPi, -0.25) *
                          std::exp(-std::pow(grid.zp(j) + 50.0, 2) / 2.0);
      CHECK(std::abs(st.amp(i, j) - expect) < 1e-10);
    }
  }
}

TEST_CASE("instantaneous kick at T=0 with one coin") {
  CoinState post(1, kRoot2Inv, kRoot2Inv);
  const auto grid = wake_grid(0.0, 0.0);
  const double q = 1.0, qp = 2.0;
  const auto st = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, q,
                                   heavy_test_particle(qp), 0.0, grid);
  // both sectors sit at v = +-1; the potential depends on v^2 so the two kick
  // phases coincide and the state stays a phase-dressed product
  for (int i : {12, 48}) {
    for (int j : {20, 100}) {
      const double zeta = grid.zp(j) - grid.z(i);
      const double V = 1.0 / std::sqrt(zeta * zeta);  // rho^2 (1 - v^2) = 0 at v = +-1
      const cplx phase = std::exp(cplx(0.0, -qp * V));
      const cplx expect = std::pow(oracles::kPi, -0.25) * std::exp(-grid.z(i) * grid.z(i) / 2.0) *
                          phase * std::pow(oracles::kPi, -0.25) *
                          std::exp(-std::pow(grid.zp(j) + 50.0, 2) / 2.0);
      CHECK(std::abs(st.amp(i, j) - expect) < 1e-12);
    }
  }
}

TEST_CASE("spectral route matches brute force just past the direct budget") {
  // N=14 at <v>_w = 7 exceeds the direct-route budget, so the spectral path
  // runs; the long-double brute force still holds ~7 significant digits, and
  // a deep-wake geometry keeps the degree-14 pairing residual below that
  const int N = 14;
  CoinState post(N, 0.8, -0.6);
  const double T = 0.3;
  const auto grid = wake_grid(7.0, T, 96, 128, -80.0);
  const auto st = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                   heavy_test_particle(2.0, -80.0), T, grid);
  CHECK(st.log_scale != 0.0);  // the spectral path carries the overlap in log form
  const double scale = std::exp(st.log_scale);
  for (int i : {20, 50, 90}) {
    for (int j : {10, 64, 115}) {
      const cplx brute =
          brute_cell(N, 0.8, -0.6, 1.0, 2.0, 3.0, T, grid.z(i), grid.zp(j), -80.0);
      CHECK(std::abs(st.amp(i, j) * scale - brute) <= 2e-5 * std::abs(brute) + 1e-18);
    }
  }
}

TEST_CASE("direct route matches brute force inside the budget") {
  const int N = 8;
  CoinState post(N, 0.8, -0.6);
  const double T = 0.3;
  const auto grid = wake_grid(7.0, T);
  const auto st = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                   heavy_test_particle(2.0), T, grid);
  CHECK(st.log_scale == 0.0);
  for (int i : {20, 50, 90})
    for (int j : {10, 64, 115}) {
      const cplx brute =
          brute_cell(N, 0.8, -0.6, 1.0, 2.0, 3.0, T, grid.z(i), grid.zp(j), -50.0);
      CHECK(std::abs(st.amp(i, j) - brute) <= 1e-9 * std::abs(brute) + 1e-20);
    }
}

TEST_CASE("exact kick outside the wake envelope is refused at large N") {
  CoinState post(500, 0.8, -0.6);
  KickGrid g = wake_grid(7.0, 0.3);
  g.zp_lo = -8.0;  // test particle on top of the charge: inside the Mach cone
  g.zp_hi = 8.0;
  CHECK_THROWS_AS(joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                   heavy_test_particle(2.0, 0.0), 0.3, g),
                  UnsupportedRegimeError);
}

TEST_CASE("weak kick: static charge applies Coulomb phases") {
  const auto grid = wake_grid(0.0, 0.0);
  const auto st = joint_kick_weak(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), 0.0, 1.5,
                                  heavy_test_particle(0.7), 0.0, grid,
                                  fields::FieldMode::closed_form);
  for (int i : {15, 70}) {
    for (int j : {30, 90}) {
      const double zeta = grid.zp(j) - grid.z(i);
      const double V = 1.5 / std::sqrt(9.0 + zeta * zeta);
      const cplx expect = std::pow(oracles::kPi, -0.25) *
                          std::exp(-grid.z(i) * grid.z(i) / 2.0) *
                          std::exp(cplx(0.0, -0.7 * V)) * std::pow(oracles::kPi, -0.25) *
                          std::exp(-std::pow(grid.zp(j) + 50.0, 2) / 2.0);
      CHECK(std::abs(st.amp(i, j) - expect) < 1e-13);
    }
  }
}

TEST_CASE("weak kick field agrees with the fields module pointwise") {
  const double w = 7.0, T = 0.3;
  const auto grid = wake_grid(w, T);
  const auto st = joint_kick_weak(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), w, 1.0,
                                  heavy_test_particle(2.0), T, grid,
                                  fields::FieldMode::closed_form);
  for (int i : {25, 60}) {
    for (int j : {10, 100}) {
      const double zeta = grid.zp(j) - grid.z(i);
      const auto pv = fields::scalar_potential_closed({1.0, w, 0.0}, {3.0, 0.0, zeta});
      REQUIRE(pv.status == fields::SampleStatus::defined);
      const cplx bare = std::pow(oracles::kPi, -0.25) *
                        std::exp(-std::pow(grid.z(i) - w * T, 2) / 2.0) *
                        std::pow(oracles::kPi, -0.25) *
                        std::exp(-std::pow(grid.zp(j) + 50.0, 2) / 2.0);
      const double phase = -std::arg(st.amp(i, j) / bare);
      CHECK(phase == doctest::Approx(2.0 * pv.value).epsilon(1e-9));
      // and the vector potential the kick consumes is w times that
      const auto av = fields::vector_potential_closed({1.0, w, 0.0}, {3.0, 0.0, zeta});
      CHECK(av.value == doctest::Approx(w * pv.value).epsilon(1e-14));
    }
  }
}

TEST_CASE("superluminal weak kick has no field inside the Mach cone") {
  // grid straddling the cone: |zeta| < rho sqrt(48) has no closed-form field
  const double w = 7.0, T = 0.0;
  KickGrid g = wake_grid(w, T, 96, 128, -18.0);  // cone distance is 3 sqrt(48) ~ 20.8
  const auto st = joint_kick_weak(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), w, 1.0,
                                  heavy_test_particle(2.0, -18.0), T, g,
                                  fields::FieldMode::closed_form);
  CHECK(st.zero_field_cells > 0);
  const double cone = 3.0 * std::sqrt(48.0);
  for (int i : {10, 48, 90})
    for (int j = 0; j < g.n_zp; ++j) {
      const double zeta = g.zp(j) - g.z(i);
      const cplx bare = std::pow(oracles::kPi, -0.25) * std::exp(-g.z(i) * g.z(i) / 2.0) *
                        std::pow(oracles::kPi, -0.25) *
                        std::exp(-std::pow(g.zp(j) + 18.0, 2) / 2.0);
      const double phase = std::arg(st.amp(i, j) / bare);
      if (std::abs(zeta) < cone - 0.5) CHECK(std::abs(phase) < 1e-12);
      if (std::abs(zeta) > cone + 0.5) CHECK(std::abs(phase) > 1e-6);
    }
}

TEST_CASE("phase-only kick preserves the test-particle marginal per column") {
  const double w = 7.0, T = 0.3;
  const auto grid = wake_grid(w, T);
  const auto st = joint_kick_weak(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), w, 1.0,
                                  heavy_test_particle(2.0), T, grid,
                                  fields::FieldMode::closed_form);
  const auto bare = joint_kick_weak(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), w, 1.0,
                                    heavy_test_particle(0.0), T, grid,
                                    fields::FieldMode::closed_form);
  // uncoupled weak branch is exactly the displaced packet times the profile
  for (int i : {12, 60})
    for (int j : {25, 90}) {
      const cplx expect = std::pow(oracles::kPi, -0.25) *
                          std::exp(-std::pow(grid.z(i) - w * T, 2) / 2.0) *
                          std::pow(oracles::kPi, -0.25) *
                          std::exp(-std::pow(grid.zp(j) + 50.0, 2) / 2.0);
      CHECK(std::abs(bare.amp(i, j) - expect) < 1e-14);
    }
  for (int j = 0; j < grid.n_zp; j += 16) {
    const double with_kick = st.amp.col(j).squaredNorm();
    const double without = bare.amp.col(j).squaredNorm();
    CHECK(with_kick == doctest::Approx(without).epsilon(1e-12));
  }
}

TEST_CASE("finite mass at m = 1e12 matches the instantaneous-phase branch") {
  CoinState post(8, 0.8, -0.6);
  const double T = 0.3;
  const auto grid = wake_grid(7.0, T);
  TestParticleSpec heavy = heavy_test_particle(2.0);
  heavy.mass = 1e12;
  const auto fm = joint_kick_finite_m(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                      heavy, T, grid, fields::FieldMode::closed_form);
  const auto phase_only = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post,
                                           1.0, heavy_test_particle(2.0), T, grid);
  double max_diff = 0.0;
  for (int i = 0; i < grid.n_z; ++i)
    for (int j = 0; j < grid.n_zp; ++j)
      max_diff = std::max(max_diff, std::abs(fm.exact.amp(i, j) - phase_only.amp(i, j)));
  CHECK(max_diff < 1e-6);
}

TEST_CASE("finite mass with no coupling is a free kinetic step") {
  CoinState post(4, kRoot2Inv, kRoot2Inv);
  const auto grid = wake_grid(0.0, 0.0);
  TestParticleSpec light = heavy_test_particle(0.0);
  light.mass = 2.0;
  const auto fm = joint_kick_finite_m(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                      light, 0.0, grid, fields::FieldMode::closed_form);
  // oracle: e^{-i p^2 / 2m} applied to the Gaussian column profile by FFT
  Eigen::VectorXcd col(grid.n_zp);
  for (int j = 0; j < grid.n_zp; ++j) {
    const double x = grid.zp(j) + 50.0;
    col[j] = std::pow(oracles::kPi, -0.25) * std::exp(-x * x / 2.0);
  }
  fft_pow2(col, -1);
  const double L = grid.n_zp * grid.dzp();
  for (int k = 0; k < grid.n_zp; ++k) {
    const int kk = (k <= grid.n_zp / 2) ? k : k - grid.n_zp;
    const double p = 2.0 * kPi * kk / L;
    col[k] *= std::exp(cplx(0.0, -p * p / (2.0 * 2.0)));
  }
  fft_pow2(col, +1);
  const int i_mid = grid.n_z / 2;
  const double phi = std::pow(oracles::kPi, -0.25) *
                     std::exp(-grid.z(i_mid) * grid.z(i_mid) / 2.0);
  for (int j : {20, 64, 110})
    CHECK(std::abs(fm.exact.amp(i_mid, j) - phi * col[j]) < 1e-9);
}

TEST_CASE("finite-mass fidelity improves with N") {
  const double T = 3.0 / 7.0;
  TestParticleSpec tp = heavy_test_particle(0.0);
  tp.mass = 5.0;
  double prev = 0.0;
  for (int n : {250, 500, 1000}) {
    CoinState post(n, 0.8, -0.6);
    KickGrid grid = wake_grid(7.0, T, 96, 128);
    tp.charge = 2.0;
    const auto fm = joint_kick_finite_m(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                        tp, T, grid, fields::FieldMode::closed_form);
    CHECK(fm.fidelity_exact_weak > prev);
    prev = fm.fidelity_exact_weak;
  }
  CHECK(prev > 0.99);
}

TEST_CASE("finite mass requires a power-of-two test grid") {
  CoinState post(4, kRoot2Inv, kRoot2Inv);
  KickGrid g = wake_grid(0.0, 0.0, 96, 100);
  TestParticleSpec tp = heavy_test_particle(0.0);
  tp.mass = 2.0;
  CHECK_THROWS_AS(joint_kick_finite_m(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                      tp, 0.0, g, fields::FieldMode::closed_form),
                  std::invalid_argument);
}

TEST_CASE("moment replacement table is strictly decreasing in N") {
  const auto table = moment_replacement_check(0.8, -0.6, 3, {0.0, 0.5, 1.0, 2.0}, 1.0,
                                              {100, 200, 400, 800});
  CHECK(table.strictly_decreasing);
  CHECK(table.max_loglog_slope < 0.0);
  // first-order cells are exact at p = 0
  for (const auto& cell : table.cells)
    if (cell.order == 1 && cell.p == 0.0) CHECK(cell.relative_error < 1e-12);
}

TEST_CASE("moment replacement: doubling N roughly halves the error") {
  const auto table =
      moment_replacement_check(0.8, -0.6, 3, {2.0}, 1.0, {100, 200, 400, 800});
  double prev = -1.0;
  for (const auto& cell : table.cells) {
    if (cell.order != 3) continue;
    if (prev > 0.0) {
      const double ratio = cell.relative_error / prev;
      CHECK(ratio > 0.3);
      CHECK(ratio < 0.7);
    }
    prev = cell.relative_error;
  }
}

TEST_CASE("causality: vanishing charge passes everything") {
  for (int n : {1, 3, 137}) {
    CausalityQuery q{1.0, 0.0, n, 0.0, 1.0};
    const auto r = causality_check(q, 7.0);
    CHECK(r.fluctuation_pass);
    CHECK(r.charge_pass);
    CHECK(r.blur_dominates);
  }
}

TEST_CASE("causality: unit charge needs N above four") {
  for (int n : {2, 3, 4}) {
    CausalityQuery q{1.0, 0.0, n, 1.0, 1.0};
    CHECK_FALSE(causality_check(q, 7.0).fluctuation_pass);
  }
  CausalityQuery q5{1.0, 0.0, 5, 1.0, 1.0};
  CHECK(causality_check(q5, 7.0).fluctuation_pass);
}

TEST_CASE("causality: elementary charge at the inverse fine-structure scale") {
  CausalityQuery q{1.0, 0.0, 137, std::sqrt(1.0 / 137.0), 1.0};
  const auto r = causality_check(q, 7.0);
  CHECK(r.charge_margin == doctest::Approx(34.24).epsilon(0.01));
  CHECK(r.charge_pass);
  CausalityQuery q3{1.0, 0.0, 3, std::sqrt(1.0 / 137.0), 1.0};
  CHECK_FALSE(causality_check(q3, 7.0).charge_pass);
}

TEST_CASE("causality is monotone in N") {
  bool passed = false;
  for (int n = 1; n <= 64; n *= 2) {
    CausalityQuery q{1.0, 0.0, n, 1.2, 1.0};
    const bool pass = causality_check(q, 7.0).fluctuation_pass;
    if (passed) CHECK(pass);  // once passing, stays passing
    passed = passed || pass;
  }
  CHECK(passed);
}

TEST_CASE("causal contact flag") {
  CausalityQuery near{0.5, 0.0, 10, 0.1, 1.0};
  CHECK(causality_check(near, 7.0).causal_contact);
  CausalityQuery far{2.0, 0.0, 10, 0.1, 1.0};
  CHECK_FALSE(causality_check(far, 7.0).causal_contact);
}

TEST_CASE("joint-state export round-trips bit-exactly") {
  CoinState post(8, 0.8, -0.6);
  const auto g = wake_grid(7.0, 0.3);
  const auto st = joint_kick_exact(GaussianPacket(Eigen::Vector3d::Zero(), 1.0), post, 1.0,
                                   heavy_test_particle(2.0), 0.3, g);
  const auto path = std::filesystem::temp_directory_path() / "weakflow_state_test.bin";
  io::write_joint_state(path, st);
  const auto back = io::read_joint_state(path);
  CHECK(back.grid.n_z == st.grid.n_z);
  CHECK(back.log_scale == st.log_scale);
  CHECK((back.amp - st.amp).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}
