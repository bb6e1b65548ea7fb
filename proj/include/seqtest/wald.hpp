#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"
#include "seqtest/rng.hpp"

namespace seqtest {

inline constexpr double kPoissonResidualTol = 1e-10;

// Solution of the discrete Poisson equation (Q - I) omega = -(Q - J pi^T) theta
// with the centering constraint pi^T omega = 0.
struct PoissonSolution {
  std::vector<double> omega;
  std::vector<double> theta;
  double residual = 0.0;  // max-norm residual of the stacked system
};

// theta(i) = D(Q(.|i) || P(.|i)): the expected one-step log likelihood ratio
// out of state i under Q.
inline std::vector<double> theta_from_chains(const TransitionMatrix& Q,
                                             const TransitionMatrix& P) {
  detail::check_same_dim(Q.num_states(), P.num_states());
  std::vector<double> theta(Q.num_states());
  for (std::size_t i = 0; i < Q.num_states(); ++i) {
    const double d = kl_divergence(Q.row(i), P.row(i));
    if (std::isinf(d))
      raise(Errc::infinite_ratio, "P assigns zero to a transition Q can make from state " +
                                      std::to_string(i));
    theta[i] = d;
  }
  return theta;
}

namespace detail {

// Householder QR least squares for small dense systems with rows >= cols.
inline std::vector<double> least_squares(std::vector<std::vector<double>> A,
                                         std::vector<double> b) {
  const std::size_t rows = A.size();
  const std::size_t cols = A[0].size();
  for (std::size_t k = 0; k < cols; ++k) {
    double norm = 0.0;
    for (std::size_t i = k; i < rows; ++i) norm += A[i][k] * A[i][k];
    norm = std::sqrt(norm);
    if (norm == 0.0) raise(Errc::singular_system, "rank-deficient column " + std::to_string(k));
    const double alpha = A[k][k] >= 0.0 ? -norm : norm;
    std::vector<double> v(rows - k);
    v[0] = A[k][k] - alpha;
    for (std::size_t i = k + 1; i < rows; ++i) v[i - k] = A[i][k];
    double vtv = 0.0;
    for (double x : v) vtv += x * x;
    A[k][k] = alpha;
    for (std::size_t i = k + 1; i < rows; ++i) A[i][k] = 0.0;
    if (vtv == 0.0) continue;
    for (std::size_t j = k + 1; j < cols; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < rows; ++i) dot += v[i - k] * A[i][j];
      const double f = 2.0 * dot / vtv;
      for (std::size_t i = k; i < rows; ++i) A[i][j] -= f * v[i - k];
    }
    double dot = 0.0;
    for (std::size_t i = k; i < rows; ++i) dot += v[i - k] * b[i];
    const double f = 2.0 * dot / vtv;
    for (std::size_t i = k; i < rows; ++i) b[i] -= f * v[i - k];
  }
  std::vector<double> x(cols);
  for (std::size_t k = cols; k-- > 0;) {
    double s = b[k];
    for (std::size_t j = k + 1; j < cols; ++j) s -= A[k][j] * x[j];
    if (A[k][k] == 0.0) raise(Errc::singular_system, "zero pivot");
    x[k] = s / A[k][k];
  }
  return x;
}

}  // namespace detail

// Solves the constrained Poisson equation for the generator Q by stacked
// least squares on the (m+1) x m system; the reported residual must reach
// kPoissonResidualTol, which fails exactly when the ergodicity precondition
// does not hold.
inline PoissonSolution solve_poisson(const TransitionMatrix& Q, const std::vector<double>& theta) {
  const std::size_t m = Q.num_states();
  if (theta.size() != m) raise(Errc::dimension_mismatch, "theta size");
  const Distribution pi = stationary_distribution(Q);
  double drift = 0.0;
  for (std::size_t i = 0; i < m; ++i) drift += pi[i] * theta[i];

  std::vector<std::vector<double>> A(m + 1, std::vector<double>(m));
  std::vector<double> b(m + 1);
  for (std::size_t i = 0; i < m; ++i) {
    double q_theta = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      A[i][j] = Q(i, j) - (i == j ? 1.0 : 0.0);
      q_theta += Q(i, j) * theta[j];
    }
    b[i] = drift - q_theta;  // -(Q - J pi^T) theta
  }
  for (std::size_t j = 0; j < m; ++j) A[m][j] = pi[j];
  b[m] = 0.0;

  PoissonSolution sol;
  sol.theta = theta;
  sol.omega = detail::least_squares(A, b);
  double residual = 0.0;
  for (std::size_t i = 0; i <= m; ++i) {
    double r = -b[i];
    for (std::size_t j = 0; j < m; ++j) r += A[i][j] * sol.omega[j];
    residual = std::max(residual, std::abs(r));
  }
  sol.residual = residual;
  if (residual > kPoissonResidualTol)
    raise(Errc::singular_system, "residual " + std::to_string(residual));
  return sol;
}

// Stationary limit of E[theta(X_n)] under Q; coincides with the
// stationary-averaged KL divergence.
inline double stationary_drift(const TransitionMatrix& Q, const TransitionMatrix& P) {
  const std::vector<double> theta = theta_from_chains(Q, P);
  const Distribution rho = stationary_distribution(Q);
  double drift = 0.0;
  for (std::size_t i = 0; i < Q.num_states(); ++i) drift += rho[i] * theta[i];
  return drift;
}

struct WaldReport {
  double lhs = 0.0;      // Monte-Carlo mean of the cumulative log likelihood ratio
  double rhs = 0.0;      // horizon * drift + exact boundary correction
  double std_err = 0.0;  // Monte-Carlo standard error of lhs
  double residual = 0.0;
  double drift = 0.0;
  long long horizon = 0;
  long long trials = 0;
  std::vector<double> trial_sums;  // per-trial cumulative log ratios
};

// Checks the Markov Wald identity at a fixed deterministic horizon. The
// left side is a Monte-Carlo estimate over trajectories from Q started at x0;
// the right side is computed exactly: the boundary term uses omega + theta,
// which is the drift function matching partial sums of log ratios indexed by
// their departure states, and E[.(X_horizon)] comes from exact distribution
// propagation rather than simulation.
inline WaldReport verify_wald_identity(const TransitionMatrix& Q, const TransitionMatrix& P,
                                       int x0, long long horizon, long long trials,
                                       std::uint64_t seed) {
  const std::size_t m = Q.num_states();
  detail::check_state(x0, m, "x0");
  if (horizon < 1 || trials < 1) raise(Errc::invalid_config, "horizon and trials must be >= 1");
  const std::vector<double> theta = theta_from_chains(Q, P);
  const PoissonSolution sol = solve_poisson(Q, theta);
  const Distribution rho = stationary_distribution(Q);
  double drift = 0.0;
  for (std::size_t i = 0; i < m; ++i) drift += rho[i] * theta[i];

  std::vector<double> corrected(m);
  for (std::size_t i = 0; i < m; ++i) corrected[i] = sol.omega[i] + theta[i];

  // nu_n = e_{x0} Q^horizon, exactly.
  std::vector<double> nu(m, 0.0), next(m);
  nu[x0] = 1.0;
  for (long long n = 0; n < horizon; ++n) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      if (nu[i] == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) next[j] += nu[i] * Q(i, j);
    }
    nu.swap(next);
  }
  double boundary = corrected[x0];
  for (std::size_t j = 0; j < m; ++j) boundary -= nu[j] * corrected[j];

  std::vector<double> log_ratio(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (Q(i, j) > 0.0) log_ratio[i * m + j] = std::log(Q(i, j)) - std::log(P(i, j));

  double sum = 0.0, sum_sq = 0.0;
  std::vector<double> trial_sums(static_cast<std::size_t>(trials));
  for (long long trial = 0; trial < trials; ++trial) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(trial)));
    int prev = x0;
    double s = 0.0;
    for (long long n = 0; n < horizon; ++n) {
      const int x = sample_from_row(Q.row(prev), rng.uniform());
      s += log_ratio[static_cast<std::size_t>(prev) * m + x];
      prev = x;
    }
    trial_sums[static_cast<std::size_t>(trial)] = s;
    sum += s;
    sum_sq += s * s;
  }
  const double mean = sum / static_cast<double>(trials);
  const double var = trials > 1
                         ? std::max(0.0, (sum_sq - sum * mean) / static_cast<double>(trials - 1))
                         : 0.0;

  WaldReport report;
  report.lhs = mean;
  report.rhs = static_cast<double>(horizon) * drift + boundary;
  report.std_err = std::sqrt(var / static_cast<double>(trials));
  report.residual = sol.residual;
  report.drift = drift;
  report.horizon = horizon;
  report.trials = trials;
  report.trial_sums = std::move(trial_sums);
  return report;
}

}  // namespace seqtest
