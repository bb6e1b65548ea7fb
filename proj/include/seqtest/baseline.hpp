#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"
#include "seqtest/rng.hpp"

namespace seqtest {

enum class FixedVerdict { accept, reject };

// Calibrated two-stage fixed-length identity test: first the empirical state
// frequencies are compared against the stationary distribution of P, then,
// only if that stage passes, the empirical transition rows of sufficiently
// visited states are compared against the rows of P. Behavior on alternatives
// closer than epsilon in Markov distance is undefined by design.
struct FixedTestConfig {
  long long n = 0;                    // required trajectory length
  double epsilon = 0.0;               // separation parameter of the alternative class
  double alpha_target = 0.05;
  double t_freq = 0.0;                // stage-1 threshold on TV(frequencies, rho_P)
  double t_row = 0.0;                 // stage-2 threshold on max row TV
  long long calibration_trials = 0;
};

namespace detail {

struct FixedStats {
  double freq_tv = 0.0;
  double max_row_tv = 0.0;
};

// Row comparisons skip states visited fewer than ceil(n / 2m) times, where the
// empirical row is too noisy to mean anything.
inline long long min_row_visits(long long n, std::size_t m) {
  return (n + 2 * static_cast<long long>(m) - 1) / (2 * static_cast<long long>(m));
}

inline FixedStats fixed_test_stats(const Trajectory& traj, const TransitionMatrix& P,
                                   const Distribution& rho) {
  const std::size_t m = P.num_states();
  const long long n = static_cast<long long>(traj.samples.size());
  std::vector<long long> freq(m, 0);
  std::vector<long long> trans(m * m, 0);
  std::vector<long long> row_totals(m, 0);
  int prev = traj.initial_state;
  for (int x : traj.samples) {
    check_state(x, m, "sample");
    ++freq[x];
    ++trans[static_cast<std::size_t>(prev) * m + x];
    ++row_totals[prev];
    prev = x;
  }

  FixedStats stats;
  double tv = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    tv += std::abs(static_cast<double>(freq[i]) / static_cast<double>(n) - rho[i]);
  stats.freq_tv = 0.5 * tv;

  const long long cutoff = min_row_visits(n, m);
  for (std::size_t i = 0; i < m; ++i) {
    if (row_totals[i] < cutoff) continue;
    double row_tv = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      row_tv += std::abs(static_cast<double>(trans[i * m + j]) /
                             static_cast<double>(row_totals[i]) -
                         P(i, j));
    stats.max_row_tv = std::max(stats.max_row_tv, 0.5 * row_tv);
  }
  return stats;
}

// Order statistic at the ceil(q * count) position.
inline double empirical_quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const std::size_t count = values.size();
  std::size_t idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(count)));
  if (idx > 0) --idx;
  return values[std::min(idx, count - 1)];
}

}  // namespace detail

// Sets the two stage thresholds to the empirical (1 - alpha_target/2)
// quantiles of the stage statistics over simulated null trajectories; the
// per-stage budget split is a union bound. Initial states are drawn from the
// stationary distribution of P.
inline FixedTestConfig calibrate(const TransitionMatrix& P, long long n, double alpha_target,
                                 long long trials, std::uint64_t seed) {
  const std::size_t m = P.num_states();
  if (n < static_cast<long long>(m)) raise(Errc::invalid_config, "need n >= m");
  if (!(alpha_target > 0.0 && alpha_target < 1.0))
    raise(Errc::invalid_config, "alpha_target = " + std::to_string(alpha_target));
  if (trials < 1) raise(Errc::invalid_config, "trials must be >= 1");
  const Distribution rho = stationary_distribution(P);

  std::vector<double> freq_stats(trials);
  std::vector<double> row_stats(trials);
  for (long long trial = 0; trial < trials; ++trial) {
    const std::uint64_t trial_seed = derive_seed(seed, static_cast<std::uint64_t>(trial));
    Rng init(derive_seed(trial_seed, 0));
    const int x0 = sample_from_row(rho, init.uniform());
    const Trajectory traj = sample_trajectory(P, x0, n, derive_seed(trial_seed, 1));
    const detail::FixedStats stats = detail::fixed_test_stats(traj, P, rho);
    freq_stats[trial] = stats.freq_tv;
    row_stats[trial] = stats.max_row_tv;
  }

  FixedTestConfig config;
  config.n = n;
  config.alpha_target = alpha_target;
  config.calibration_trials = trials;
  config.t_freq = detail::empirical_quantile(std::move(freq_stats), 1.0 - alpha_target / 2.0);
  config.t_row = detail::empirical_quantile(std::move(row_stats), 1.0 - alpha_target / 2.0);
  return config;
}

// Runs the two-stage test on a trajectory of exactly config.n samples.
inline FixedVerdict run_fixed_test(const Trajectory& traj, const TransitionMatrix& P,
                                   const FixedTestConfig& config) {
  if (static_cast<long long>(traj.samples.size()) != config.n)
    raise(Errc::length_mismatch, "trajectory has " + std::to_string(traj.samples.size()) +
                                     " samples, config.n = " + std::to_string(config.n));
  const Distribution rho = stationary_distribution(P);
  const detail::FixedStats stats = detail::fixed_test_stats(traj, P, rho);
  if (stats.freq_tv > config.t_freq) return FixedVerdict::reject;
  if (stats.max_row_tv > config.t_row) return FixedVerdict::reject;
  return FixedVerdict::accept;
}

}  // namespace seqtest
