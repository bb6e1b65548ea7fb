#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"
#include "seqtest/rng.hpp"

namespace seqtest {

enum class Mode { iid, markov };

inline Mode mode_from_string(const std::string& s) {
  if (s == "iid") return Mode::iid;
  if (s == "markov") return Mode::markov;
  raise(Errc::invalid_config, "mode must be iid or markov, got '" + s + "'");
}

inline const char* mode_name(Mode m) { return m == Mode::iid ? "iid" : "markov"; }

inline constexpr double kPredictionFloor = 1e-15;  // predictions stay strictly positive
inline constexpr double kComponentFloor = 1e-12;   // mixture components stay strictly positive

namespace detail {

// Normalizes then clamps to the positivity floor. The clamp perturbs the sum
// by at most m * kPredictionFloor, which stays inside the simplex tolerance.
inline Distribution make_prediction(std::vector<double> w) {
  double sum = 0.0;
  for (double x : w) sum += x;
  if (!(sum > 0.0)) raise(Errc::invalid_state, "prediction weights sum to zero");
  for (auto& x : w) x = std::max(x / sum, kPredictionFloor);
  return Distribution(std::move(w));
}

inline Distribution positive_row(std::vector<double> w) {
  for (auto& x : w) x = std::max(x, kComponentFloor);
  return Distribution::normalized(std::move(w));
}

}  // namespace detail

// Causal predictive model of the next symbol. predict(prev) is the law of the
// next state given the history observed so far and never depends on samples
// that have not been fed through observe.
class SequentialEstimator {
 public:
  virtual ~SequentialEstimator() = default;

  virtual std::size_t num_states() const = 0;
  virtual Distribution predict(int prev_state) const = 0;
  virtual void observe(int prev_state, int next_state) = 0;
  virtual std::unique_ptr<SequentialEstimator> clone() const = 0;
};

// Add-gamma smoothing over symbol counts; prev_state is ignored. gamma = 1/2
// is the KT estimator.
class AddGammaIid final : public SequentialEstimator {
 public:
  AddGammaIid(StateSpace space, double gamma) : gamma_(gamma), counts_(space.m, 0) {
    if (space.m < 2) raise(Errc::uninitialized_state_space, "m = " + std::to_string(space.m));
    if (!(gamma > 0.0)) raise(Errc::invalid_config, "gamma must be positive");
  }

  std::size_t num_states() const override { return counts_.size(); }

  Distribution predict(int) const override {
    const std::size_t m = counts_.size();
    std::vector<double> w(m);
    const double denom = static_cast<double>(total_) + gamma_ * static_cast<double>(m);
    for (std::size_t x = 0; x < m; ++x) w[x] = (static_cast<double>(counts_[x]) + gamma_) / denom;
    return detail::make_prediction(std::move(w));
  }

  void observe(int, int next_state) override {
    detail::check_state(next_state, counts_.size(), "next_state");
    ++counts_[next_state];
    ++total_;
  }

  std::unique_ptr<SequentialEstimator> clone() const override {
    return std::make_unique<AddGammaIid>(*this);
  }

  double gamma() const { return gamma_; }

 private:
  double gamma_;
  std::vector<long long> counts_;
  long long total_ = 0;
};

// Per-row add-gamma smoothing over transition counts.
class AddGammaMarkov final : public SequentialEstimator {
 public:
  AddGammaMarkov(StateSpace space, double gamma)
      : m_(space.m), gamma_(gamma), counts_(space.m * space.m, 0), row_totals_(space.m, 0) {
    if (space.m < 2) raise(Errc::uninitialized_state_space, "m = " + std::to_string(space.m));
    if (!(gamma > 0.0)) raise(Errc::invalid_config, "gamma must be positive");
  }

  std::size_t num_states() const override { return m_; }

  Distribution predict(int prev_state) const override {
    detail::check_state(prev_state, m_, "prev_state");
    std::vector<double> w(m_);
    const double denom =
        static_cast<double>(row_totals_[prev_state]) + gamma_ * static_cast<double>(m_);
    const long long* row = counts_.data() + static_cast<std::size_t>(prev_state) * m_;
    for (std::size_t x = 0; x < m_; ++x) w[x] = (static_cast<double>(row[x]) + gamma_) / denom;
    return detail::make_prediction(std::move(w));
  }

  void observe(int prev_state, int next_state) override {
    detail::check_state(prev_state, m_, "prev_state");
    detail::check_state(next_state, m_, "next_state");
    ++counts_[static_cast<std::size_t>(prev_state) * m_ + next_state];
    ++row_totals_[prev_state];
  }

  std::unique_ptr<SequentialEstimator> clone() const override {
    return std::make_unique<AddGammaMarkov>(*this);
  }

  double gamma() const { return gamma_; }

 private:
  std::size_t m_;
  double gamma_;
  std::vector<long long> counts_;
  std::vector<long long> row_totals_;
};

// K transition matrices sampled from the stationary-weighted Dirichlet-1/2
// prior by self-normalized importance sampling: propose rows i.i.d. from
// D_(1/2), weight each chain by prod_i rho(i)^((m-1)/2), and resample K draws
// proportionally to the weights. Proposals whose stationary solve fails are
// dropped. All outputs are strictly positive.
inline std::vector<TransitionMatrix> sample_jeffreys_prior(std::size_t m, std::size_t K,
                                                           std::uint64_t seed) {
  if (m < 2) raise(Errc::invalid_config, "need m >= 2");
  if (K < 1) raise(Errc::invalid_config, "need K >= 1");
  const std::size_t proposals = std::max<std::size_t>(2 * K, 64);
  Rng rng(seed);

  std::vector<TransitionMatrix> candidates;
  std::vector<double> log_weights;
  candidates.reserve(proposals);
  log_weights.reserve(proposals);
  const double power = (static_cast<double>(m) - 1.0) / 2.0;
  for (std::size_t n = 0; n < proposals; ++n) {
    std::vector<Distribution> rows;
    rows.reserve(m);
    for (std::size_t i = 0; i < m; ++i) rows.push_back(detail::positive_row(rng.dirichlet(0.5, m)));
    TransitionMatrix Q = TransitionMatrix::from_rows(std::move(rows));
    try {
      const Distribution rho = stationary_distribution(Q);
      double lw = 0.0;
      for (std::size_t i = 0; i < m; ++i) lw += power * std::log(rho[i]);
      candidates.push_back(std::move(Q));
      log_weights.push_back(lw);
    } catch (const Error& e) {
      if (e.code() != Errc::no_convergence) throw;  // degenerate proposal: drop it
    }
  }
  if (candidates.empty()) raise(Errc::no_convergence, "all prior proposals degenerate");

  double max_lw = *std::max_element(log_weights.begin(), log_weights.end());
  std::vector<double> cdf(log_weights.size());
  double acc = 0.0;
  for (std::size_t n = 0; n < log_weights.size(); ++n) {
    acc += std::exp(log_weights[n] - max_lw);
    cdf[n] = acc;
  }
  std::vector<TransitionMatrix> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    const double u = rng.uniform() * acc;
    const std::size_t idx =
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    out.push_back(candidates[std::min(idx, candidates.size() - 1)]);
  }
  return out;
}

// Chains with rows drawn i.i.d. from D_(gamma); favors sparse rows when
// gamma < 1/2. Used by the modified mixture.
inline std::vector<TransitionMatrix> sample_row_dirichlet(std::size_t m, std::size_t K,
                                                          double gamma, std::uint64_t seed) {
  if (m < 2) raise(Errc::invalid_config, "need m >= 2");
  if (K < 1) raise(Errc::invalid_config, "need K >= 1");
  Rng rng(seed);
  std::vector<TransitionMatrix> out;
  out.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<Distribution> rows;
    rows.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
      rows.push_back(detail::positive_row(rng.dirichlet(gamma, m)));
    out.push_back(TransitionMatrix::from_rows(std::move(rows)));
  }
  return out;
}

namespace detail {

// Shared machinery for finite Bayesian mixtures over fixed transition
// matrices: normalized log weights plus the cumulative log marginal
// likelihood of the observed transitions.
class MixtureCore {
 public:
  explicit MixtureCore(const std::vector<TransitionMatrix>& components) {
    if (components.empty()) raise(Errc::invalid_config, "empty mixture");
    m_ = components[0].num_states();
    k_ = components.size();
    Tables tables;
    tables.probs.resize(k_ * m_ * m_);
    tables.logs.resize(k_ * m_ * m_);
    for (std::size_t k = 0; k < k_; ++k) {
      if (components[k].num_states() != m_) raise(Errc::dimension_mismatch, "mixture components");
      for (std::size_t i = 0; i < m_; ++i) {
        for (std::size_t j = 0; j < m_; ++j) {
          const double p = components[k](i, j);
          tables.probs[(k * m_ + i) * m_ + j] = p;
          tables.logs[(k * m_ + i) * m_ + j] = std::log(p);
        }
      }
    }
    tables_ = std::make_shared<const Tables>(std::move(tables));
    log_weights_.assign(k_, -std::log(static_cast<double>(k_)));
    weights_.assign(k_, 1.0 / static_cast<double>(k_));
  }

  std::size_t num_states() const { return m_; }
  std::size_t num_components() const { return k_; }
  const std::vector<double>& log_weights() const { return log_weights_; }
  double log_evidence() const { return log_evidence_; }

  // Posterior-weighted conditional row out of prev.
  std::vector<double> predictive_row(int prev) const {
    check_state(prev, m_, "prev_state");
    std::vector<double> out(m_, 0.0);
    const double* probs = tables_->probs.data();
    for (std::size_t k = 0; k < k_; ++k) {
      const double wk = weights_[k];
      const double* row = probs + (k * m_ + prev) * m_;
      for (std::size_t j = 0; j < m_; ++j) out[j] += wk * row[j];
    }
    return out;
  }

  // Bayes update on one observed transition; weights are renormalized in log
  // space and the step's log marginal likelihood accumulates into the
  // evidence.
  void update(int prev, int next) {
    check_state(prev, m_, "prev_state");
    check_state(next, m_, "next_state");
    const double* logs = tables_->logs.data();
    double max_lw = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < k_; ++k) {
      log_weights_[k] += logs[(k * m_ + prev) * m_ + next];
      max_lw = std::max(max_lw, log_weights_[k]);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < k_; ++k) sum += std::exp(log_weights_[k] - max_lw);
    const double lse = max_lw + std::log(sum);
    for (std::size_t k = 0; k < k_; ++k) {
      log_weights_[k] -= lse;
      weights_[k] = std::exp(log_weights_[k]);
    }
    log_evidence_ += lse;
  }

 private:
  struct Tables {
    std::vector<double> probs;
    std::vector<double> logs;
  };

  std::size_t m_ = 0;
  std::size_t k_ = 0;
  std::shared_ptr<const Tables> tables_;  // component data shared across clones
  std::vector<double> log_weights_;       // normalized: logsumexp == 0
  std::vector<double> weights_;
  double log_evidence_ = 0.0;
};

}  // namespace detail

// Monte-Carlo approximation of the Bayesian mixture over ergodic chains under
// the stationary-weighted Dirichlet-1/2 prior: a K-component mixture with
// exact Bayes weight updates over the sampled components.
class JeffreysMixtureMarkov final : public SequentialEstimator {
 public:
  JeffreysMixtureMarkov(StateSpace space, std::size_t K, std::uint64_t seed)
      : core_(sample_jeffreys_prior(space.m, K, seed)) {}

  explicit JeffreysMixtureMarkov(std::vector<TransitionMatrix> components)
      : core_(std::move(components)) {}

  std::size_t num_states() const override { return core_.num_states(); }
  std::size_t num_components() const { return core_.num_components(); }
  const std::vector<double>& log_weights() const { return core_.log_weights(); }

  Distribution predict(int prev_state) const override {
    return detail::make_prediction(core_.predictive_row(prev_state));
  }

  void observe(int prev_state, int next_state) override { core_.update(prev_state, next_state); }

  std::unique_ptr<SequentialEstimator> clone() const override {
    return std::make_unique<JeffreysMixtureMarkov>(*this);
  }

 private:
  detail::MixtureCore core_;
};

// Two-block mixture: prior mass 1-delta on the Jeffreys mixture and delta on
// a sparse-favoring mixture whose rows are drawn from D_(sparse_gamma) with
// sparse_gamma < 1/2. The horizon records the sample budget this estimator
// was tuned for; it also sets the default delta.
class ModifiedJeffreysMixture final : public SequentialEstimator {
 public:
  ModifiedJeffreysMixture(StateSpace space, std::size_t K, double delta, double sparse_gamma,
                          long long horizon, std::uint64_t seed)
      : delta_(delta), sparse_gamma_(sparse_gamma), horizon_(horizon),
        jeffreys_(sample_jeffreys_prior(space.m, K, derive_seed(seed, 1))),
        sparse_(sample_row_dirichlet(space.m, K, sparse_gamma, derive_seed(seed, 2))) {
    if (!(delta_ > 0.0 && delta_ < 1.0))
      raise(Errc::invalid_config, "delta = " + std::to_string(delta_));
    if (!(sparse_gamma_ > 0.0 && sparse_gamma_ < 0.5))
      raise(Errc::invalid_config, "sparse_gamma = " + std::to_string(sparse_gamma_));
  }

  static double default_delta(long long horizon) {
    return 1.0 / std::log(static_cast<double>(horizon) + 2.718281828459045235);
  }

  std::size_t num_states() const override { return jeffreys_.num_states(); }

  Distribution predict(int prev_state) const override {
    const double a_j = std::log1p(-delta_) + jeffreys_.log_evidence();
    const double a_s = std::log(delta_) + sparse_.log_evidence();
    const double hi = std::max(a_j, a_s);
    const double w_j = std::exp(a_j - hi);
    const double w_s = std::exp(a_s - hi);
    std::vector<double> row_j = jeffreys_.predictive_row(prev_state);
    const std::vector<double> row_s = sparse_.predictive_row(prev_state);
    for (std::size_t x = 0; x < row_j.size(); ++x)
      row_j[x] = w_j * row_j[x] + w_s * row_s[x];
    return detail::make_prediction(std::move(row_j));
  }

  void observe(int prev_state, int next_state) override {
    jeffreys_.update(prev_state, next_state);
    sparse_.update(prev_state, next_state);
  }

  std::unique_ptr<SequentialEstimator> clone() const override {
    return std::make_unique<ModifiedJeffreysMixture>(*this);
  }

  double delta() const { return delta_; }
  long long horizon() const { return horizon_; }

 private:
  double delta_;
  double sparse_gamma_;
  long long horizon_;
  detail::MixtureCore jeffreys_;
  detail::MixtureCore sparse_;
};

// Selection grammar: "kt" | "add:<gamma>" | "jeffreys:<K>" |
// "modified:<K>,<delta>,<gamma>,<horizon>". "kt" and "add:" pick the i.i.d.
// or per-row variant according to mode; the mixtures require markov mode.
// Pass delta = 0 in the modified spec to use the horizon-derived default.
inline std::unique_ptr<SequentialEstimator> make_estimator(const std::string& spec, StateSpace space,
                                                           Mode mode, std::uint64_t seed) {
  auto add_gamma = [&](double gamma) -> std::unique_ptr<SequentialEstimator> {
    if (mode == Mode::iid) return std::make_unique<AddGammaIid>(space, gamma);
    return std::make_unique<AddGammaMarkov>(space, gamma);
  };
  try {
    if (spec == "kt") return add_gamma(0.5);
    if (spec.rfind("add:", 0) == 0) return add_gamma(std::stod(spec.substr(4)));
    if (spec.rfind("jeffreys:", 0) == 0) {
      if (mode == Mode::iid)
        raise(Errc::invalid_config, "jeffreys mixture requires markov mode");
      const long long K = std::stoll(spec.substr(9));
      if (K < 1) raise(Errc::invalid_config, "K must be positive");
      return std::make_unique<JeffreysMixtureMarkov>(space, static_cast<std::size_t>(K), seed);
    }
    if (spec.rfind("modified:", 0) == 0) {
      if (mode == Mode::iid)
        raise(Errc::invalid_config, "modified mixture requires markov mode");
      std::vector<double> parts;
      std::string rest = spec.substr(9);
      std::size_t pos = 0;
      while (parts.size() < 4) {
        const std::size_t comma = rest.find(',', pos);
        parts.push_back(std::stod(rest.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
      }
      if (parts.size() != 4)
        raise(Errc::invalid_config, "modified spec needs K,delta,gamma,horizon");
      const long long K = static_cast<long long>(parts[0]);
      const long long horizon = static_cast<long long>(parts[3]);
      if (K < 1 || horizon < 1) raise(Errc::invalid_config, "K and horizon must be positive");
      double delta = parts[1];
      if (delta == 0.0) delta = ModifiedJeffreysMixture::default_delta(horizon);
      return std::make_unique<ModifiedJeffreysMixture>(space, static_cast<std::size_t>(K), delta,
                                                       parts[2], horizon, seed);
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    raise(Errc::invalid_config, "bad estimator spec '" + spec + "'");
  }
  raise(Errc::invalid_config, "unknown estimator spec '" + spec + "'");
}

// Per-prefix log-loss bookkeeping against the best fixed model in hindsight.
struct RegretRecord {
  long long t = 0;
  double estimator_loss = 0.0;
  double hindsight_loss = 0.0;
  double regret = 0.0;
};

// Log-loss of the maximum-likelihood fixed model for the whole history: the
// empirical distribution in iid mode, the per-row empirical transition laws in
// markov mode (conditioning on X_0).
inline double hindsight_best_loss(const Trajectory& history, Mode mode, std::size_t m) {
  if (history.samples.empty()) raise(Errc::empty_history, "no samples");
  detail::check_state(history.initial_state, m, "initial_state");
  for (int x : history.samples) detail::check_state(x, m, "sample");

  if (mode == Mode::iid) {
    std::vector<long long> counts(m, 0);
    for (int x : history.samples) ++counts[x];
    const double t = static_cast<double>(history.samples.size());
    double sum = 0.0;
    for (long long n : counts)
      if (n > 0) sum += static_cast<double>(n) * std::log(static_cast<double>(n));
    return std::max(t * std::log(t) - sum, 0.0);
  }

  std::vector<long long> counts(m * m, 0);
  std::vector<long long> row_totals(m, 0);
  int prev = history.initial_state;
  for (int x : history.samples) {
    ++counts[static_cast<std::size_t>(prev) * m + x];
    ++row_totals[prev];
    prev = x;
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (row_totals[i] == 0) continue;
    loss += static_cast<double>(row_totals[i]) * std::log(static_cast<double>(row_totals[i]));
    for (std::size_t j = 0; j < m; ++j) {
      const long long n = counts[i * m + j];
      if (n > 0) loss -= static_cast<double>(n) * std::log(static_cast<double>(n));
    }
  }
  return std::max(loss, 0.0);
}

namespace detail {

// O(1)-per-step accumulator for the hindsight loss of growing prefixes.
class HindsightAccumulator {
 public:
  HindsightAccumulator(Mode mode, std::size_t m)
      : mode_(mode), m_(m), counts_(mode == Mode::iid ? m : m * m, 0), row_totals_(m, 0) {}

  void add(int prev, int next) {
    auto bump = [](long long n) {
      const double nn = static_cast<double>(n);
      return (nn + 1.0) * std::log(nn + 1.0) - (n > 0 ? nn * std::log(nn) : 0.0);
    };
    if (mode_ == Mode::iid) {
      sum_n_log_n_ += bump(counts_[next]);
      ++counts_[next];
      ++total_;
    } else {
      sum_n_log_n_ += bump(counts_[static_cast<std::size_t>(prev) * m_ + next]);
      row_sum_ += bump(row_totals_[prev]);
      ++counts_[static_cast<std::size_t>(prev) * m_ + next];
      ++row_totals_[prev];
      ++total_;
    }
  }

  double loss() const {
    if (total_ == 0) return 0.0;
    const double t = static_cast<double>(total_);
    const double value =
        mode_ == Mode::iid ? t * std::log(t) - sum_n_log_n_ : row_sum_ - sum_n_log_n_;
    return std::max(value, 0.0);
  }

 private:
  Mode mode_;
  std::size_t m_;
  std::vector<long long> counts_;
  std::vector<long long> row_totals_;
  double sum_n_log_n_ = 0.0;
  double row_sum_ = 0.0;
  long long total_ = 0;
};

}  // namespace detail

// Causal replay of the history through a fresh estimator: at each step the
// prediction is taken before the sample is revealed, the running log-loss is
// paired with the hindsight-best loss of the prefix consumed so far.
inline std::vector<RegretRecord> cumulative_regret(SequentialEstimator& est,
                                                   const Trajectory& history, Mode mode) {
  if (history.samples.empty()) raise(Errc::empty_history, "no samples");
  const std::size_t m = est.num_states();
  std::vector<RegretRecord> out;
  out.reserve(history.samples.size());
  detail::HindsightAccumulator oracle(mode, m);
  double est_loss = 0.0;
  int prev = history.initial_state;
  long long t = 0;
  for (int x : history.samples) {
    const Distribution pred = est.predict(prev);
    detail::check_state(x, m, "sample");
    est_loss -= std::log(pred[x]);
    est.observe(prev, x);
    oracle.add(prev, x);
    prev = x;
    ++t;
    const double hindsight = oracle.loss();
    out.push_back({t, est_loss, hindsight, est_loss - hindsight});
  }
  return out;
}

}  // namespace seqtest
