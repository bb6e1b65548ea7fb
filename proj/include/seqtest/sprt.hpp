#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"
#include "seqtest/estimators.hpp"

namespace seqtest {

enum class Decision { running, reject_null };

// Running state of one sequential test. In the composite test log_lr stays
// finite while running and jumps to +infinity exactly when a null-impossible
// transition forces rejection; the simple SPRT can additionally absorb at
// -infinity when the known alternative assigns zero to an observed
// transition (the statistic has hit zero). There is no accept state: the
// test is one-sided.
struct TestState {
  long long t = 0;
  double log_lr = 0.0;
  int prev_state = 0;
  Decision verdict = Decision::running;
};

struct Verdict {
  Decision decision = Decision::running;
  std::optional<long long> stopping_time;
};

struct TestConfig {
  double alpha = 0.05;
  TransitionMatrix null_chain;
  std::string estimator_spec = "kt";
  Mode mode = Mode::markov;
  std::optional<long long> max_samples;  // harness-only horizon; absent means run forever
  std::uint64_t estimator_seed = 0;
};

// Rejection happens at log_lr >= log(1/alpha).
inline double rejection_threshold(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) raise(Errc::invalid_config, "alpha = " + std::to_string(alpha));
  return -std::log(alpha);
}

namespace detail {

// Accumulate one log ratio. -infinity is absorbing (the statistic has hit
// exactly zero and can never leave it), +infinity forces rejection.
inline TestState advance(TestState s, int x, double log_ratio, double threshold) {
  if (std::isinf(s.log_lr) && s.log_lr < 0.0) {
    // statistic is identically zero; stay there
  } else {
    s.log_lr += log_ratio;
  }
  s.prev_state = x;
  ++s.t;
  if (s.log_lr >= threshold) s.verdict = Decision::reject_null;
  return s;
}

}  // namespace detail

// One step of the classical SPRT with a known alternative Q.
inline TestState simple_sprt_step(const TestState& state, int x, const TransitionMatrix& P,
                                  const TransitionMatrix& Q, double alpha) {
  detail::check_state(state.prev_state, P.num_states(), "prev_state");
  detail::check_state(x, P.num_states(), "observation");
  detail::check_same_dim(P.num_states(), Q.num_states());
  const double p = P(state.prev_state, x);
  const double q = Q(state.prev_state, x);
  if (p == 0.0 && q == 0.0)
    raise(Errc::impossible_under_both, "transition " + std::to_string(state.prev_state) + "->" +
                                           std::to_string(x));
  double log_ratio;
  if (q == 0.0) {
    log_ratio = -std::numeric_limits<double>::infinity();
  } else if (p == 0.0) {
    log_ratio = std::numeric_limits<double>::infinity();
  } else {
    log_ratio = std::log(q) - std::log(p);
  }
  return detail::advance(state, x, log_ratio, rejection_threshold(alpha));
}

// One step of the composite test: the estimator's prediction is taken before
// the new sample is revealed to it, then the estimator observes the sample.
// A transition with P(x|prev) = 0 rejects immediately.
inline TestState composite_step(const TestState& state, int x, const TransitionMatrix& P,
                                double alpha, SequentialEstimator& est) {
  detail::check_state(state.prev_state, P.num_states(), "prev_state");
  detail::check_state(x, P.num_states(), "observation");
  detail::check_same_dim(P.num_states(), est.num_states());
  const Distribution pred = est.predict(state.prev_state);
  const double p = P(state.prev_state, x);
  const double log_ratio = p == 0.0 ? std::numeric_limits<double>::infinity()
                                    : std::log(pred[x]) - std::log(p);
  est.observe(state.prev_state, x);
  return detail::advance(state, x, log_ratio, rejection_threshold(alpha));
}

// Conditional expectation of the one-step likelihood ratio under p_row:
// sum over j with p_row(j) > 0 of est_pred(j). Exactly 1 for strictly
// positive rows; at most 1 in general (supermartingale slack).
inline double martingale_check(const Distribution& est_pred, const Distribution& p_row) {
  detail::check_same_dim(est_pred.size(), p_row.size());
  double s = 0.0;
  for (std::size_t j = 0; j < p_row.size(); ++j)
    if (p_row[j] > 0.0) s += est_pred[j];
  return s;
}

struct StepRecord {
  long long t;
  double log_lr;
};

struct RunResult {
  Verdict verdict;
  TestState state;
  std::vector<StepRecord> trace;
};

// Consumes the source until rejection, stream end, or config.max_samples.
// Source is a callable returning std::optional<int>; an empty optional ends
// the stream. Never emits an accept decision.
template <typename Source>
RunResult run_to_decision(int x0, Source&& source, const TestConfig& config,
                          SequentialEstimator& est, bool record_trace = true) {
  detail::check_state(x0, config.null_chain.num_states(), "x0");
  RunResult out;
  TestState s;
  s.prev_state = x0;
  while (s.verdict == Decision::running) {
    if (config.max_samples && s.t >= *config.max_samples) break;
    const std::optional<int> x = source();
    if (!x) break;
    s = composite_step(s, *x, config.null_chain, config.alpha, est);
    if (record_trace) out.trace.push_back({s.t, s.log_lr});
  }
  out.state = s;
  if (s.verdict == Decision::reject_null)
    out.verdict = Verdict{Decision::reject_null, s.t};
  return out;
}

inline RunResult run_to_decision(const Trajectory& traj, const TestConfig& config,
                                 SequentialEstimator& est, bool record_trace = true) {
  std::size_t i = 0;
  auto source = [&]() -> std::optional<int> {
    if (i >= traj.samples.size()) return std::nullopt;
    return traj.samples[i++];
  };
  return run_to_decision(traj.initial_state, source, config, est, record_trace);
}

// Convenience overload that builds the estimator from the config.
inline RunResult run_to_decision(const Trajectory& traj, const TestConfig& config,
                                 bool record_trace = true) {
  auto est = make_estimator(config.estimator_spec, StateSpace{config.null_chain.num_states()},
                            config.mode, config.estimator_seed);
  return run_to_decision(traj, config, *est, record_trace);
}

}  // namespace seqtest
