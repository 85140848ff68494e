#pragma once

// Monte Carlo side of the story: how often does the ensemble land in the
// postselected branch, and what do measured displacements look like with and
// without postselection. All probabilities are carried in log space (the
// interesting ones underflow doubles catastrophically); linear values are
// reported as 0 below e^{-700}.

#include <cstdint>

#include <Eigen/Core>

#include "weakflow/coin.hpp"
#include "weakflow/common.hpp"

namespace weakflow::ensemble {

struct ExperimentConfig {
  coin::CoinState coin_post;
  double epsilon = 1.0;
  double t = 0.0;
  std::int64_t trials = 1;
  std::uint64_t seed = 0;

  ExperimentConfig(const coin::CoinState& post, double eps, double time, std::int64_t n,
                   std::uint64_t s);
};

// The three competing probabilities plus the e^{-N} floor, in log and linear.
struct ProbabilityLedger {
  double log_p_error_analytic = 0.0;       // -w^2 t^2 / eps^2 (prefactor 1)
  double log_p_postselect_static = 0.0;    // N log(1/2 + a_up a_down)
  double log_p_postselect_evolved = 0.0;   // norm^2 of the evolved postselected state
  double log_floor = 0.0;                  // -N
  double p_error_analytic = 0.0;
  double p_postselect_static = 0.0;
  double p_postselect_evolved = 0.0;
  double floor_e_minus_n = 0.0;
};

ProbabilityLedger probability_ledger(const ExperimentConfig& config);

struct Histogram {
  Eigen::ArrayXd edges;   // size nbins+1
  Eigen::ArrayXd counts;  // size nbins
  std::int64_t total = 0;

  double bin_width() const { return edges[1] - edges[0]; }
  Eigen::ArrayXd density() const;
};

struct DisplacementSample {
  Histogram hist;
  double mean = 0.0;
  double stddev = 0.0;
  std::int64_t trials = 0;
};

// Measured displacements at time t. Without postselection a sector is drawn
// with Born weight C(N,n)/2^N and a position from the displaced Gaussian;
// with postselection positions are drawn by inverse CDF from the normalized
// exact postselected density on a 2^14-point grid. Trials shard in fixed
// blocks with derived seeds; merging is in block order, so the result is
// bit-identical for any thread count.
DisplacementSample sample_displacements(const ExperimentConfig& config, bool postselect,
                                        int nbins, int threads = 0);

// Pearson chi-square p-value against given expected counts (same total).
double chi_square_pvalue(const Eigen::ArrayXd& observed, const Eigen::ArrayXd& expected);

// Regularized upper incomplete gamma Q(a, x); the chi-square survival function
// is Q(df/2, chi2/2).
double regularized_gamma_q(double a, double x);

// CDF of the no-postselection displacement mixture: sum_n 2^{-N} C(N,n)
// Normal(v_n t, eps/sqrt(2)). The oracle for histogram tests.
double mixture_cdf(int n_spins, double t, double eps, double x);

}  // namespace weakflow::ensemble
