#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "weakflow/ensemble.hpp"
#include "weakflow/wavepacket.hpp"

using namespace weakflow;
using namespace weakflow::ensemble;
using coin::CoinState;

namespace {
const double kRoot2Inv = 1.0 / std::sqrt(2.0);
}

TEST_CASE("config validation") {
  CoinState post(4, 0.8, -0.6);
  CHECK_THROWS_AS(ExperimentConfig(post, 0.0, 1.0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig(post, 1.0, -1.0, 10, 1), std::invalid_argument);
  CHECK_THROWS_AS(ExperimentConfig(post, 1.0, 1.0, 0, 1), std::invalid_argument);
}

TEST_CASE("ledger at t=0: no error suppression, evolved equals static") {
  CoinState post(50, 0.8, -0.6);
  const auto l = probability_ledger(ExperimentConfig(post, 1.0, 0.0, 1, 1));
  CHECK(l.log_p_error_analytic == doctest::Approx(0.0));
  CHECK(l.p_error_analytic == doctest::Approx(1.0));
  CHECK(l.log_p_postselect_evolved ==
        doctest::Approx(l.log_p_postselect_static).epsilon(1e-10));
}

TEST_CASE("ledger: static probability in log space") {
  CoinState post(100, 0.8, -0.6);
  const auto l = probability_ledger(ExperimentConfig(post, 1.0, 0.1, 1, 1));
  // (1/2 + 0.8*(-0.6))^100 = 0.02^100
  CHECK(l.log_p_postselect_static == doctest::Approx(100.0 * std::log(0.02)).epsilon(1e-12));
  CHECK(l.log_p_postselect_static == doctest::Approx(-391.202).epsilon(1e-4));
  CHECK(l.p_postselect_static == doctest::Approx(1.0e-170).epsilon(0.3));
}

TEST_CASE("ledger orderings in the stable-displacement regime") {
  CoinState post(1000, 0.8, -0.6);
  const double t = 3.0 / 7.0;  // w t = 3 eps
  const auto l = probability_ledger(ExperimentConfig(post, 1.0, t, 1, 1));
  CHECK(l.log_p_error_analytic == doctest::Approx(-9.0).epsilon(1e-9));
  CHECK(l.log_floor == doctest::Approx(-1000.0));
  CHECK(l.log_p_error_analytic > l.log_p_postselect_static);
  CHECK(l.log_p_error_analytic > l.log_floor);
}

TEST_CASE("evolved postselection probability approaches static as t -> 0") {
  CoinState post(200, 0.8, -0.6);
  double prev_gap = 1e300;
  for (double t : {0.2, 0.1, 0.05, 0.01}) {
    const auto l = probability_ledger(ExperimentConfig(post, 1.0, t, 1, 1));
    const double gap = std::abs(l.log_p_postselect_evolved - l.log_p_postselect_static);
    CHECK(gap < prev_gap);
    CHECK(l.log_p_postselect_evolved <= 1e-9);  // never above unit probability
    prev_gap = gap;
  }
}

TEST_CASE("no-postselection sampling: single coin is bimodal at +-t") {
  CoinState post(1, kRoot2Inv, kRoot2Inv);
  const double t = 12.0;  // t >> eps
  ExperimentConfig cfg(post, 1.0, t, 40000, 99);
  const auto ds = sample_displacements(cfg, false, 41);
  // count mass within 3 eps of each lobe and of the middle
  double lobe = 0.0, middle = 0.0;
  for (int i = 0; i < ds.hist.counts.size(); ++i) {
    const double c = 0.5 * (ds.hist.edges[i] + ds.hist.edges[i + 1]);
    if (std::abs(std::abs(c) - t) < 3.0) lobe += ds.hist.counts[i];
    if (std::abs(c) < 3.0) middle += ds.hist.counts[i];
  }
  CHECK(lobe / ds.trials > 0.99);
  CHECK(middle == 0.0);
}

TEST_CASE("no-postselection spread matches the mixture variance") {
  CoinState post(100, kRoot2Inv, kRoot2Inv);
  const double t = 10.0, eps = 1.0;
  ExperimentConfig cfg(post, eps, t, 100000, 2024);
  const auto ds = sample_displacements(cfg, false, 61);
  const double expect = std::sqrt(t * t / 100.0 + eps * eps / 2.0);
  CHECK(ds.stddev == doctest::Approx(expect).epsilon(0.05));
}

TEST_CASE("no-postselection histogram passes a chi-square test against the mixture") {
  CoinState post(100, kRoot2Inv, kRoot2Inv);
  const double t = 10.0, eps = 1.0;
  const std::int64_t trials = 100000;
  ExperimentConfig cfg(post, eps, t, trials, 515151);
  const auto ds = sample_displacements(cfg, false, 41);
  std::vector<double> obs, exp_;
  double obs_acc = 0.0, exp_acc = 0.0;
  for (int i = 0; i < ds.hist.counts.size(); ++i) {
    obs_acc += ds.hist.counts[i];
    exp_acc += trials * (mixture_cdf(100, t, eps, ds.hist.edges[i + 1]) -
                         mixture_cdf(100, t, eps, ds.hist.edges[i]));
    if (exp_acc >= 10.0) {  // merge bins until expectations are testable
      obs.push_back(obs_acc);
      exp_.push_back(exp_acc);
      obs_acc = exp_acc = 0.0;
    }
  }
  obs.back() += obs_acc;
  exp_.back() += exp_acc;
  Eigen::ArrayXd o = Eigen::Map<Eigen::ArrayXd>(obs.data(), obs.size());
  Eigen::ArrayXd e = Eigen::Map<Eigen::ArrayXd>(exp_.data(), exp_.size());
  CHECK(chi_square_pvalue(o, e) > 0.01);
}

TEST_CASE("postselected sampling clusters at the weak displacement") {
  CoinState post(1000, 0.8, -0.6);
  const double t = 3.0 / 7.0, eps = 1.0;
  ExperimentConfig cfg(post, eps, t, 100000, 31337);
  const auto ds = sample_displacements(cfg, true, 41);
  CHECK(std::abs(ds.mean - 3.0) < 0.1);
}

TEST_CASE("postselected histogram matches the closed-form density under refinement") {
  CoinState post(400, 0.8, -0.6);
  const double t = 3.0 / 7.0, eps = 1.0;
  wavepacket::SpectralEvolution ev(post, eps, t);
  ExperimentConfig cfg(post, eps, t, 200000, 8080);
  const auto ds = sample_displacements(cfg, true, 31);
  // expected counts from the normalized |psi|^2 by fine Simpson per bin
  const std::int64_t trials = ds.trials;
  std::vector<double> obs, exp_;
  double norm = oracles::simpson(
      [&](double z) { return std::norm(ev.amplitude(z)); }, ds.hist.edges[0],
      ds.hist.edges[ds.hist.edges.size() - 1], 2000);
  double obs_acc = 0.0, exp_acc = 0.0;
  for (int i = 0; i < ds.hist.counts.size(); ++i) {
    obs_acc += ds.hist.counts[i];
    exp_acc += trials / norm *
               oracles::simpson([&](double z) { return std::norm(ev.amplitude(z)); },
                                ds.hist.edges[i], ds.hist.edges[i + 1], 64);
    if (exp_acc >= 10.0) {
      obs.push_back(obs_acc);
      exp_.push_back(exp_acc);
      obs_acc = exp_acc = 0.0;
    }
  }
  obs.back() += obs_acc;
  exp_.back() += exp_acc;
  Eigen::ArrayXd o = Eigen::Map<Eigen::ArrayXd>(obs.data(), obs.size());
  Eigen::ArrayXd e = Eigen::Map<Eigen::ArrayXd>(exp_.data(), exp_.size());
  CHECK(chi_square_pvalue(o, e) > 0.01);
}

TEST_CASE("sampling is deterministic and thread-count independent") {
  CoinState post(30, 0.8, -0.6);
  ExperimentConfig cfg(post, 1.0, 2.0, 150000, 777);
  const auto a = sample_displacements(cfg, false, 41, 1);
  const auto b = sample_displacements(cfg, false, 41, 4);
  CHECK((a.hist.counts - b.hist.counts).abs().maxCoeff() == 0.0);
  CHECK(a.mean == b.mean);
  CHECK(a.stddev == b.stddev);
  ExperimentConfig cfg2(post, 1.0, 2.0, 150000, 778);
  const auto c = sample_displacements(cfg2, false, 41, 2);
  CHECK((a.hist.counts - c.hist.counts).abs().maxCoeff() > 0.0);
}

TEST_CASE("bin-count floor is enforced") {
  CoinState post(4, 0.8, -0.6);
  ExperimentConfig cfg(post, 1.0, 1.0, 50, 1);
  CHECK_THROWS_AS(sample_displacements(cfg, false, 20), std::invalid_argument);
}

TEST_CASE("regularized gamma Q sanity") {
  // Q(1/2, x) = erfc(sqrt(x))
  for (double x : {0.1, 1.0, 4.0})
    CHECK(regularized_gamma_q(0.5, x) == doctest::Approx(std::erfc(std::sqrt(x))).epsilon(1e-10));
  // chi-square survival at df=2: Q(1, x/2) = e^{-x/2}
  CHECK(regularized_gamma_q(1.0, 3.0) == doctest::Approx(std::exp(-3.0)).epsilon(1e-10));
  Eigen::ArrayXd same = Eigen::ArrayXd::Constant(5, 100.0);
  CHECK(chi_square_pvalue(same, same) == doctest::Approx(1.0));
}
