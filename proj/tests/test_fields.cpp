#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "weakflow/fields.hpp"

using namespace weakflow;
using namespace weakflow::fields;

TEST_CASE("static charge gives the Coulomb potential") {
  SourceSpec src{2.5, 0.0, 3.0};
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> uni(-4.0, 4.0);
  for (int i = 0; i < 20; ++i) {
    Eigen::Vector3d x(uni(rng), uni(rng), uni(rng));
    if (x.norm() < 0.1) continue;
    const auto pv = scalar_potential_closed(src, x);
    CHECK(pv.status == SampleStatus::defined);
    CHECK(pv.value == doctest::Approx(2.5 / x.norm()).epsilon(1e-14));
    const auto rp = lienard_wiechert(src, x);
    CHECK(rp.n_roots == 1);
    CHECK(rp.value == doctest::Approx(pv.value).epsilon(1e-12));
  }
}

TEST_CASE("on-axis subluminal potential") {
  SourceSpec src{1.0, 0.6, 2.0};
  const Eigen::Vector3d x(0.0, 0.0, 3.1);
  const auto pv = scalar_potential_closed(src, x);
  CHECK(pv.value == doctest::Approx(1.0 / std::abs(3.1 - 0.6 * 2.0)).epsilon(1e-14));
}

TEST_CASE("superluminal silent region flags undefined") {
  SourceSpec src{1.0, 7.0, 0.0};
  const auto pv = scalar_potential_closed(src, {1.0, 0.0, 0.0});
  // radicand = 1*(1-49) + 0 = -48
  CHECK(pv.status == SampleStatus::undefined);
  const auto rp = lienard_wiechert(src, {1.0, 0.0, 0.0});
  CHECK(rp.n_roots == 0);
  CHECK(rp.status == SampleStatus::undefined);
}

TEST_CASE("worldline sample is flagged for subluminal sources") {
  SourceSpec src{1.0, 0.5, 2.0};
  const auto pv = scalar_potential_closed(src, {0.0, 0.0, 1.0});
  CHECK(pv.status == SampleStatus::on_worldline);
}

TEST_CASE("retarded root of a static charge is t - r") {
  SourceSpec src{1.0, 0.0, 5.0};
  const Eigen::Vector3d x(1.0, 2.0, 2.0);
  const auto roots = retarded_roots(src, x);
  REQUIRE(roots.size() == 1);
  CHECK(roots[0] == doctest::Approx(5.0 - x.norm()).epsilon(1e-14));
}

TEST_CASE("subluminal roots match the bisection oracle") {
  std::mt19937 rng(17);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  std::uniform_real_distribution<double> uv(-0.95, 0.95);
  for (int i = 0; i < 30; ++i) {
    const double v = uv(rng), t = uni(rng);
    const double rho = std::abs(uni(rng)) + 0.05, z = uni(rng);
    SourceSpec src{1.0, v, t};
    const auto roots = retarded_roots(src, {rho, 0.0, z});
    REQUIRE(roots.size() == 1);
    CHECK(roots[0] <= t + 1e-10);
    const double lo = t - 1e4, hi = t;  // g is positive at tau << t, negative at tau = t
    const double oracle = oracles::bisect_retarded(v, t, rho, z, lo, hi);
    CHECK(roots[0] == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("wake points see exactly two causal roots") {
  SourceSpec src{1.0, 7.0, 1.0};
  // wake: z < v t and |z - v t| > rho sqrt(48)
  const Eigen::Vector3d x(0.3, 0.0, 7.0 - 0.3 * std::sqrt(48.0) - 1.0);
  const auto roots = retarded_roots(src, x);
  REQUIRE(roots.size() == 2);
  for (double tau : roots) {
    CHECK(tau <= 1.0);
    const double dz = x.z() - 7.0 * tau;
    const double g = 1.0 - tau - std::sqrt(x.x() * x.x() + dz * dz);
    CHECK(std::abs(g) < 1e-9);
  }
}

TEST_CASE("luminal source degenerates to the linear branch") {
  SourceSpec src{1.0, 1.0, 2.0};
  const Eigen::Vector3d x(1.0, 0.0, 0.5);
  const auto roots = retarded_roots(src, x);
  REQUIRE(roots.size() == 1);
  const double dz = x.z() - roots[0];
  CHECK(std::abs(2.0 - roots[0] - std::sqrt(1.0 + dz * dz)) < 1e-10);
}

TEST_CASE("retarded route equals the closed form below c") {
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> uni(-3.0, 3.0);
  for (double v : {0.3, 0.5, 0.9, 0.99}) {
    for (int i = 0; i < 15; ++i) {
      const double rho = std::abs(uni(rng)) + 0.1, z = uni(rng), t = uni(rng);
      SourceSpec src{1.7, v, t};
      const Eigen::Vector3d x(rho, 0.0, z);
      const auto pv = scalar_potential_closed(src, x);
      const auto rp = lienard_wiechert(src, x);
      REQUIRE(pv.status == SampleStatus::defined);
      CHECK(rp.value == doctest::Approx(pv.value).epsilon(1e-10));
      CHECK(rp.max_residual < 1e-9);
    }
  }
}

TEST_CASE("wake potential carries both retarded branches") {
  // the two-root sum doubles the closed-form magnitude: a computed fact of
  // the oracle route, asserted after computing both sides
  SourceSpec src{1.0, 7.0, 0.5};
  for (double rho : {0.2, 0.7}) {
    for (double behind : {1.0, 3.0}) {
      const Eigen::Vector3d x(rho, 0.0, 7.0 * 0.5 - rho * std::sqrt(48.0) - behind);
      const auto pv = scalar_potential_closed(src, x);
      const auto rp = lienard_wiechert(src, x);
      REQUIRE(pv.status == SampleStatus::defined);
      REQUIRE(rp.n_roots == 2);
      CHECK(rp.value == doctest::Approx(2.0 * pv.value).epsilon(1e-10));
    }
  }
}

TEST_CASE("boost identity: contracted Coulomb form") {
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (double v : {0.1, 0.6, 0.95}) {
    const double gamma = 1.0 / std::sqrt(1.0 - v * v);
    for (int i = 0; i < 10; ++i) {
      const double rho = std::abs(uni(rng)) + 0.1, z = uni(rng), t = uni(rng);
      SourceSpec src{1.0, v, t};
      const auto pv = scalar_potential_closed(src, {rho, 0.0, z});
      const double expect =
          gamma / std::sqrt(rho * rho + gamma * gamma * (z - v * t) * (z - v * t));
      CHECK(pv.value == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("vector potential is v times the scalar one") {
  SourceSpec src{1.3, 0.8, 0.7};
  const auto v = vector_potential_closed(src, {1.0, 0.5, -0.4});
  const auto s = scalar_potential_closed(src, {1.0, 0.5, -0.4});
  CHECK(v.value == doctest::Approx(0.8 * s.value).epsilon(1e-14));
}

TEST_CASE("Mach cone half angle") {
  CHECK(mach_cone_half_angle_deg(1.0 + 1e-12) == doctest::Approx(90.0).epsilon(1e-4));
  CHECK(mach_cone_half_angle_deg(std::sqrt(2.0)) == doctest::Approx(45.0).epsilon(1e-12));
  CHECK(mach_cone_half_angle_deg(7.0) == doctest::Approx(8.2132107).epsilon(1e-7));
  CHECK_THROWS_AS(mach_cone_half_angle_deg(0.9), SubluminalInputError);
  CHECK_THROWS_AS(mach_cone_half_angle_deg(-1.0), SubluminalInputError);
}

TEST_CASE("zero charge gives an identically zero map") {
  GridSpec2D grid{0.1, 2.0, 16, -2.0, 2.0, 16};
  const auto map = field_map({0.0, 7.0, 1.0}, grid, FieldMode::retarded_sum);
  for (const auto& s : map.samples) {
    CHECK(s.V == 0.0);
    CHECK(s.A_z == 0.0);
  }
}

TEST_CASE("subluminal map is defined everywhere off the worldline") {
  GridSpec2D grid{0.05, 3.0, 32, -3.0, 3.0, 32};
  const auto map = field_map({1.0, 0.9, 0.5}, grid, FieldMode::closed_form);
  CHECK(map.flagged == 0);
  for (const auto& s : map.samples) CHECK(s.A_z == doctest::Approx(0.9 * s.V));
}

TEST_CASE("superluminal support boundary sits on the trailing cone") {
  const double v = 7.0, t = 1.0;
  GridSpec2D grid{0.1, 2.0, 64, -8.0, 8.0, 64};
  const auto ret = field_map({1.0, v, t}, grid, FieldMode::retarded_sum);
  const auto closed = field_map({1.0, v, t}, grid, FieldMode::closed_form);
  const double sq = std::sqrt(v * v - 1.0);
  for (int ir = 0; ir < grid.n_rho; ++ir) {
    const double rho = grid.rho_lo + ir * grid.drho();
    // last defined z in the retarded map along this row
    double zmax = -1e300;
    for (int iz = 0; iz < grid.n_z; ++iz) {
      const auto& s = ret.samples[std::size_t(ir) * grid.n_z + iz];
      if (s.status == SampleStatus::defined) zmax = std::max(zmax, s.z);
    }
    const double boundary = v * t - rho * sq;
    if (boundary > grid.z_lo && boundary < grid.z_hi)
      CHECK(std::abs(zmax - boundary) <= grid.dz() + 1e-12);
  }
  // retarded support is the causal part of the closed-form support
  const auto cmp = compare_support(closed, ret);
  CHECK(cmp.retarded_only == 0);
  CHECK(cmp.closed_only > 0);
  for (std::size_t i = 0; i < closed.samples.size(); ++i) {
    const bool dc = closed.samples[i].status == SampleStatus::defined;
    const bool dr = ret.samples[i].status == SampleStatus::defined;
    if (dc && !dr) CHECK(closed.samples[i].z > v * t);  // leading cone only
  }
}

TEST_CASE("map evaluation is thread-count independent") {
  GridSpec2D grid{0.1, 2.0, 32, -4.0, 4.0, 32};
  const auto a = field_map({1.0, 7.0, 1.0}, grid, FieldMode::retarded_sum, 1);
  const auto b = field_map({1.0, 7.0, 1.0}, grid, FieldMode::retarded_sum, 4);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].V == b.samples[i].V);
    CHECK(a.samples[i].n_roots == b.samples[i].n_roots);
  }
}

TEST_CASE("grid validation") {
  CHECK_THROWS_AS((GridSpec2D{1.0, 0.5, 8, 0.0, 1.0, 8}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((GridSpec2D{-0.5, 1.0, 8, 0.0, 1.0, 8}).validate(), std::invalid_argument);
  CHECK_THROWS_AS((GridSpec2D{0.0, 1.0, 1, 0.0, 1.0, 8}).validate(), std::invalid_argument);
}
