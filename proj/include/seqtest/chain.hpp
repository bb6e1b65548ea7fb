#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "seqtest/error.hpp"
#include "seqtest/rng.hpp"

namespace seqtest {

inline constexpr double kRowSumIngestTol = 1e-9;   // tolerance on raw input rows
inline constexpr double kSimplexTol = 1e-12;       // invariant tolerance after construction
inline constexpr double kStationaryTol = 1e-12;
inline constexpr std::size_t kStationaryMaxIter = 1'000'000;
inline constexpr int kPerturbRejectionBudget = 100'000;

// Number of states of a finite chain; states are the indices 0..m-1.
struct StateSpace {
  std::size_t m;
};

// A point on the probability simplex: entries >= 0, summing to 1 within
// kSimplexTol.
class Distribution {
 public:
  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) raise(Errc::negative_entry, "distribution entry " + std::to_string(p));
      sum += p;
    }
    if (std::abs(sum - 1.0) > kSimplexTol)
      raise(Errc::row_sum_out_of_tolerance, "distribution sums to " + std::to_string(sum));
  }

  // Rescales nonnegative weights to sum to 1.
  static Distribution normalized(std::vector<double> weights) {
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) raise(Errc::negative_entry, "weight " + std::to_string(w));
      sum += w;
    }
    if (sum <= 0.0) raise(Errc::invalid_config, "weights sum to zero");
    for (auto& w : weights) w /= sum;
    return Distribution(std::move(weights), Unchecked{});
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probs() const { return probs_; }

 private:
  struct Unchecked {};
  Distribution(std::vector<double> probs, Unchecked) : probs_(std::move(probs)) {}
  std::vector<double> probs_;

  friend class TransitionMatrix;
};

// Row-stochastic m x m matrix; row i is the next-state law from state i.
class TransitionMatrix {
 public:
  // Validates raw input: square, entries >= 0, row sums within kRowSumIngestTol
  // of 1. Accepted rows are renormalized to sum exactly 1.
  static TransitionMatrix validate(const std::vector<std::vector<double>>& raw) {
    const std::size_t m = raw.size();
    if (m < 2) raise(Errc::not_square, "need at least 2 states, got " + std::to_string(m));
    std::vector<Distribution> rows;
    rows.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
      if (raw[i].size() != m)
        raise(Errc::not_square, "row " + std::to_string(i) + " has " +
                                    std::to_string(raw[i].size()) + " entries, expected " +
                                    std::to_string(m));
      double sum = 0.0;
      for (double p : raw[i]) {
        if (p < 0.0)
          raise(Errc::negative_entry, "row " + std::to_string(i) + " entry " + std::to_string(p));
        sum += p;
      }
      if (std::abs(sum - 1.0) > kRowSumIngestTol)
        raise(Errc::row_sum_out_of_tolerance,
              "row " + std::to_string(i) + " sums to " + std::to_string(sum));
      std::vector<double> row = raw[i];
      for (auto& p : row) p /= sum;
      rows.push_back(Distribution(std::move(row), Distribution::Unchecked{}));
    }
    return TransitionMatrix(std::move(rows));
  }

  static TransitionMatrix from_rows(std::vector<Distribution> rows) {
    if (rows.size() < 2) raise(Errc::not_square, "need at least 2 states");
    for (const auto& r : rows)
      if (r.size() != rows.size()) raise(Errc::not_square, "ragged rows");
    return TransitionMatrix(std::move(rows));
  }

  std::size_t num_states() const { return rows_.size(); }
  const Distribution& row(std::size_t i) const { return rows_[i]; }
  double operator()(std::size_t from, std::size_t to) const { return rows_[from][to]; }

  std::vector<std::vector<double>> to_rows() const {
    std::vector<std::vector<double>> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back(r.probs());
    return out;
  }

  bool operator==(const TransitionMatrix& other) const {
    if (num_states() != other.num_states()) return false;
    for (std::size_t i = 0; i < num_states(); ++i)
      if (rows_[i].probs() != other.rows_[i].probs()) return false;
    return true;
  }

 private:
  explicit TransitionMatrix(std::vector<Distribution> rows) : rows_(std::move(rows)) {}
  std::vector<Distribution> rows_;
};

// A sampled path: the given initial state X_0 followed by X_1..X_t.
struct Trajectory {
  int initial_state = 0;
  std::vector<int> samples;
};

namespace detail {

inline void check_same_dim(std::size_t a, std::size_t b) {
  if (a != b)
    raise(Errc::dimension_mismatch, std::to_string(a) + " vs " + std::to_string(b));
}

inline void check_state(int x, std::size_t m, const char* what) {
  if (x < 0 || static_cast<std::size_t>(x) >= m)
    raise(Errc::invalid_state, std::string(what) + " = " + std::to_string(x));
}

}  // namespace detail

// Total variation distance (1/2) * sum |u_j - v_j|.
inline double total_variation(const Distribution& u, const Distribution& v) {
  detail::check_same_dim(u.size(), v.size());
  double s = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) s += std::abs(u[j] - v[j]);
  return 0.5 * s;
}

// Stationary distribution of P by averaged power iteration: the update
// v <- (v + vP)/2 iterates the lazy chain (I+P)/2, which shares P's stationary
// distribution and converges geometrically even for periodic chains. The
// residual reported against P itself must reach kStationaryTol.
inline Distribution stationary_distribution(const TransitionMatrix& P) {
  const std::size_t m = P.num_states();
  std::vector<double> v(m, 1.0 / static_cast<double>(m));
  std::vector<double> w(m);
  for (std::size_t iter = 0; iter < kStationaryMaxIter; ++iter) {
    // w = v P
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double vi = v[i];
      const auto& row = P.row(i).probs();
      for (std::size_t j = 0; j < m; ++j) w[j] += vi * row[j];
    }
    double residual = 0.0;
    for (std::size_t j = 0; j < m; ++j) residual = std::max(residual, std::abs(w[j] - v[j]));
    if (residual <= kStationaryTol) {
      double sum = std::accumulate(v.begin(), v.end(), 0.0);
      for (auto& x : v) x /= sum;
      return Distribution::normalized(std::move(v));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      v[j] = 0.5 * (v[j] + w[j]);
      sum += v[j];
    }
    for (auto& x : v) x /= sum;
  }
  raise(Errc::no_convergence, "stationary distribution did not reach tolerance " +
                                  std::to_string(kStationaryTol));
}

// True iff the support graph is strongly connected and aperiodic.
inline bool is_ergodic(const TransitionMatrix& P) {
  const std::size_t m = P.num_states();
  auto reachable = [&](bool transpose) {
    std::vector<char> seen(m, 0);
    std::vector<std::size_t> stack{0};
    seen[0] = 1;
    std::size_t count = 1;
    while (!stack.empty()) {
      const std::size_t u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < m; ++v) {
        const double p = transpose ? P(v, u) : P(u, v);
        if (p > 0.0 && !seen[v]) {
          seen[v] = 1;
          ++count;
          stack.push_back(v);
        }
      }
    }
    return count == m;
  };
  if (!reachable(false) || !reachable(true)) return false;

  // Period = gcd over edges (u,v) of depth(u) + 1 - depth(v), depths from BFS.
  std::vector<long long> depth(m, -1);
  std::vector<std::size_t> queue{0};
  depth[0] = 0;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t u = queue[head];
    for (std::size_t v = 0; v < m; ++v) {
      if (P(u, v) > 0.0 && depth[v] < 0) {
        depth[v] = depth[u] + 1;
        queue.push_back(v);
      }
    }
  }
  long long g = 0;
  for (std::size_t u = 0; u < m; ++u)
    for (std::size_t v = 0; v < m; ++v)
      if (P(u, v) > 0.0) g = std::gcd(g, std::abs(depth[u] + 1 - depth[v]));
  return g == 1;
}

// One inverse-CDF draw from `row` given a uniform variate.
inline int sample_from_row(const Distribution& row, double u) {
  double acc = 0.0;
  const std::size_t m = row.size();
  for (std::size_t j = 0; j < m; ++j) {
    acc += row[j];
    if (u < acc) return static_cast<int>(j);
  }
  return static_cast<int>(m - 1);  // guards rounding at the top of the CDF
}

// Path of `length` steps from x0; deterministic in (P, x0, length, seed).
inline Trajectory sample_trajectory(const TransitionMatrix& P, int x0, long long length,
                                    std::uint64_t seed) {
  if (x0 < 0 || static_cast<std::size_t>(x0) >= P.num_states())
    raise(Errc::invalid_state, "x0 = " + std::to_string(x0));
  Trajectory traj;
  traj.initial_state = x0;
  traj.samples.reserve(length > 0 ? static_cast<std::size_t>(length) : 0);
  Rng rng(seed);
  int prev = x0;
  for (long long t = 0; t < length; ++t) {
    prev = sample_from_row(P.row(prev), rng.uniform());
    traj.samples.push_back(prev);
  }
  return traj;
}

// KL divergence D(q || p) in nats. Terms with q_i = 0 contribute 0; q_i > 0
// over p_i = 0 yields +infinity.
inline double kl_divergence(const Distribution& q, const Distribution& p) {
  detail::check_same_dim(q.size(), p.size());
  double d = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) return std::numeric_limits<double>::infinity();
    d += q[i] * std::log(q[i] / p[i]);
  }
  return std::max(d, 0.0);
}

// Row KLs weighted by the stationary distribution of Q.
inline double stationary_kl(const TransitionMatrix& Q, const TransitionMatrix& P) {
  detail::check_same_dim(Q.num_states(), P.num_states());
  const Distribution rho = stationary_distribution(Q);
  double d = 0.0;
  for (std::size_t i = 0; i < Q.num_states(); ++i) {
    if (rho[i] == 0.0) continue;
    const double row_kl = kl_divergence(Q.row(i), P.row(i));
    if (std::isinf(row_kl)) return row_kl;
    d += rho[i] * row_kl;
  }
  return d;
}

// 2 * max over states of the row total-variation distance; ranges over [0, 2].
inline double markov_distance(const TransitionMatrix& P, const TransitionMatrix& Q) {
  detail::check_same_dim(P.num_states(), Q.num_states());
  double worst = 0.0;
  for (std::size_t i = 0; i < P.num_states(); ++i)
    worst = std::max(worst, total_variation(P.row(i), Q.row(i)));
  return 2.0 * worst;
}

// max over (i,j) with Q(j|i) > 0 of Q(j|i)/P(j|i); +infinity when P assigns 0
// to a transition Q can make.
inline double max_likelihood_ratio(const TransitionMatrix& Q, const TransitionMatrix& P) {
  detail::check_same_dim(Q.num_states(), P.num_states());
  double worst = 0.0;
  for (std::size_t i = 0; i < Q.num_states(); ++i) {
    for (std::size_t j = 0; j < Q.num_states(); ++j) {
      if (Q(i, j) == 0.0) continue;
      if (P(i, j) == 0.0) return std::numeric_limits<double>::infinity();
      worst = std::max(worst, Q(i, j) / P(i, j));
    }
  }
  return worst;
}

// Chain with rows drawn independently from the flat Dirichlet.
inline TransitionMatrix random_chain(std::size_t m, std::uint64_t seed) {
  if (m < 2) raise(Errc::invalid_config, "need m >= 2");
  Rng rng(seed);
  std::vector<Distribution> rows;
  rows.reserve(m);
  for (std::size_t i = 0; i < m; ++i) rows.push_back(Distribution::normalized(rng.dirichlet(1.0, m)));
  return TransitionMatrix::from_rows(std::move(rows));
}

// Copy of P with k uniformly chosen rows re-sampled until each moved by more
// than eps/2 in total variation. Row replacements use per-row substreams of
// `seed`, so calls with the same seed and growing k perturb nested row sets
// with identical replacement rows.
inline TransitionMatrix perturb_rows(const TransitionMatrix& P, std::size_t k, double eps,
                                     std::uint64_t seed) {
  const std::size_t m = P.num_states();
  if (k < 1 || k > m) raise(Errc::invalid_config, "k = " + std::to_string(k));
  if (!(eps > 0.0 && eps < 2.0)) raise(Errc::invalid_config, "eps = " + std::to_string(eps));

  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  Rng select(derive_seed(seed, 0));
  for (std::size_t i = m - 1; i > 0; --i)
    std::swap(perm[i], perm[select.below(i + 1)]);

  std::vector<Distribution> rows;
  rows.reserve(m);
  for (std::size_t i = 0; i < m; ++i) rows.push_back(P.row(i));  // untouched rows stay bit-identical
  for (std::size_t pos = 0; pos < k; ++pos) {
    const std::size_t i = perm[pos];
    Rng row_rng(derive_seed(seed, 1 + i));
    bool accepted = false;
    for (int attempt = 0; attempt < kPerturbRejectionBudget; ++attempt) {
      Distribution candidate = Distribution::normalized(row_rng.dirichlet(1.0, m));
      if (total_variation(candidate, P.row(i)) > eps / 2.0) {
        rows[i] = std::move(candidate);
        accepted = true;
        break;
      }
    }
    if (!accepted)
      raise(Errc::rejection_budget_exceeded,
            "row " + std::to_string(i) + " after " + std::to_string(kPerturbRejectionBudget) +
                " attempts");
  }
  return TransitionMatrix::from_rows(std::move(rows));
}

}  // namespace seqtest
