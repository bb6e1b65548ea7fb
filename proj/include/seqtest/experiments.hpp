#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "seqtest/baseline.hpp"
#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"
#include "seqtest/estimators.hpp"
#include "seqtest/io.hpp"
#include "seqtest/sprt.hpp"
#include "seqtest/wald.hpp"

namespace seqtest {

// Monte-Carlo experiment description. Zero/empty fields are filled with
// per-experiment defaults by resolve_spec; the seed is always required.
struct ExperimentSpec {
  std::string name;  // adaptivity | estimator_sweep | type1 | scaling | wald_verify
  std::size_t m = 0;
  double alpha = 0.05;
  double epsilon = 0.5;
  long long trials = 0;
  long long horizon = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> estimators;
  std::vector<double> epsilon_grid;
  std::vector<int> rows_grid;
  std::vector<long long> baseline_sizes;
  long long calibration_trials = 2000;
  int x0 = 0;
  int threads = 0;  // 0 = hardware concurrency
};

struct TrialRecord {
  std::string grid;
  long long trial = 0;
  std::uint64_t seed = 0;
  std::string decision;  // reject | censored | accept | done | error:<code>
  long long stopping_time = 0;
  double final_log_lr = 0.0;
};

struct GroupAggregate {
  std::string grid;
  long long trials = 0;
  double mean_stop = 0.0;
  double stderr_stop = 0.0;
  double min_stop = 0.0;
  double median_stop = 0.0;
  double max_stop = 0.0;
  double rejection_rate = 0.0;
  long long censored = 0;
};

struct ExperimentResult {
  ExperimentSpec spec;  // fully resolved
  std::vector<TrialRecord> records;
  std::vector<GroupAggregate> aggregates;
  nlohmann::json extra;
};

inline void to_json(nlohmann::json& j, const ExperimentSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"m", s.m},
                     {"alpha", s.alpha},
                     {"epsilon", s.epsilon},
                     {"trials", s.trials},
                     {"horizon", s.horizon},
                     {"seed", s.seed},
                     {"estimators", s.estimators},
                     {"epsilon_grid", s.epsilon_grid},
                     {"rows_grid", s.rows_grid},
                     {"baseline_sizes", s.baseline_sizes},
                     {"calibration_trials", s.calibration_trials},
                     {"x0", s.x0},
                     {"threads", s.threads}};
}

inline void from_json(const nlohmann::json& j, ExperimentSpec& s) {
  try {
    if (!j.contains("name")) raise(Errc::parse_error, "experiment spec needs \"name\"");
    if (!j.contains("seed")) raise(Errc::parse_error, "experiment spec needs \"seed\"");
    j.at("name").get_to(s.name);
    j.at("seed").get_to(s.seed);
    if (j.contains("m")) j.at("m").get_to(s.m);
    if (j.contains("alpha")) j.at("alpha").get_to(s.alpha);
    if (j.contains("epsilon")) j.at("epsilon").get_to(s.epsilon);
    if (j.contains("trials")) j.at("trials").get_to(s.trials);
    if (j.contains("horizon")) j.at("horizon").get_to(s.horizon);
    if (j.contains("estimators")) j.at("estimators").get_to(s.estimators);
    if (j.contains("epsilon_grid")) j.at("epsilon_grid").get_to(s.epsilon_grid);
    if (j.contains("rows_grid")) j.at("rows_grid").get_to(s.rows_grid);
    if (j.contains("baseline_sizes")) j.at("baseline_sizes").get_to(s.baseline_sizes);
    if (j.contains("calibration_trials")) j.at("calibration_trials").get_to(s.calibration_trials);
    if (j.contains("x0")) j.at("x0").get_to(s.x0);
    if (j.contains("threads")) j.at("threads").get_to(s.threads);
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, e.what());
  }
}

// Fills per-experiment defaults and validates the result.
inline ExperimentSpec resolve_spec(ExperimentSpec s) {
  auto fill = [](auto& field, auto value) {
    if (field == decltype(value){}) field = value;
  };
  if (s.name == "adaptivity") {
    fill(s.m, std::size_t{5});
    fill(s.trials, 500LL);
    fill(s.horizon, 1'000'000LL);
    if (s.estimators.empty()) s.estimators = {"kt"};
    if (s.rows_grid.empty())
      for (std::size_t k = 1; k <= s.m; ++k) s.rows_grid.push_back(static_cast<int>(k));
    if (s.baseline_sizes.empty()) s.baseline_sizes = {250, 500, 1000, 2000, 4000};
  } else if (s.name == "estimator_sweep") {
    s.m = 2;  // built on the two-state benchmark pair
    fill(s.trials, 200LL);
    fill(s.horizon, 1'000'000LL);
    if (s.estimators.empty())
      s.estimators = {"add:0.5", "jeffreys:1000",
                      "modified:1000,0,0.1," + std::to_string(s.horizon)};
    if (s.epsilon_grid.empty()) s.epsilon_grid = {0.1, 0.05, 0.01};
  } else if (s.name == "type1") {
    fill(s.m, std::size_t{3});
    fill(s.trials, 2000LL);
    fill(s.horizon, 5000LL);
    if (s.estimators.empty()) s.estimators = {"kt"};
  } else if (s.name == "scaling" || s.name == "stopping_time_scaling") {
    s.name = "scaling";
    s.m = 2;
    fill(s.trials, 200LL);
    fill(s.horizon, 1'000'000LL);
    if (s.estimators.empty()) s.estimators = {"kt"};
    if (s.epsilon_grid.empty()) s.epsilon_grid = {0.9, 0.7, 0.4, 0.1};
  } else if (s.name == "wald_verify") {
    s.m = 2;
    fill(s.trials, 5000LL);
    fill(s.horizon, 2000LL);
  } else {
    raise(Errc::invalid_config, "unknown experiment '" + s.name + "'");
  }
  if (s.trials < 1) raise(Errc::invalid_config, "trials must be >= 1");
  if (s.horizon < 1) raise(Errc::invalid_config, "horizon must be >= 1");
  if (!(s.alpha > 0.0 && s.alpha < 1.0)) raise(Errc::invalid_config, "alpha out of range");
  return s;
}

// Two-state null/alternative benchmark pair: both chains share the first row
// (eps, 1-eps); the alternative sharpens the second row from (0.7, 0.3) to
// (0.9, 0.1). Small eps pushes both chains toward a sparse corner.
inline std::pair<TransitionMatrix, TransitionMatrix> toy_problem_pair(double eps) {
  if (!(eps > 0.0 && eps < 1.0)) raise(Errc::invalid_config, "eps = " + std::to_string(eps));
  TransitionMatrix P = TransitionMatrix::validate({{eps, 1.0 - eps}, {0.7, 0.3}});
  TransitionMatrix Q = TransitionMatrix::validate({{eps, 1.0 - eps}, {0.9, 0.1}});
  return {std::move(P), std::move(Q)};
}

namespace detail {

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::string format_compact(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Index-parallel loop with deterministic output slots: fn(i) writes only to
// the i-th result, so scheduling cannot change anything observable.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// One sequential-test trial on a lazily sampled stream from data_chain.
inline TrialRecord run_sequential_trial(const TestConfig& config, const TransitionMatrix& data_chain,
                                        const SequentialEstimator& estimator_template, int x0,
                                        std::uint64_t trial_seed, const std::string& grid,
                                        long long trial) {
  TrialRecord record;
  record.grid = grid;
  record.trial = trial;
  record.seed = trial_seed;
  try {
    auto est = estimator_template.clone();
    Rng rng(trial_seed);
    int prev = x0;
    auto source = [&]() -> std::optional<int> {
      prev = sample_from_row(data_chain.row(prev), rng.uniform());
      return prev;
    };
    const RunResult result = run_to_decision(x0, source, config, *est, false);
    record.final_log_lr = result.state.log_lr;
    if (result.verdict.decision == Decision::reject_null) {
      record.decision = "reject";
      record.stopping_time = *result.verdict.stopping_time;
    } else {
      record.decision = "censored";
      record.stopping_time = result.state.t;
    }
  } catch (const Error& e) {
    record.decision = std::string("error:") + errc_name(e.code());
  }
  return record;
}

inline GroupAggregate aggregate_group(const std::string& grid, std::vector<double> stops,
                                      long long rejects, long long censored) {
  GroupAggregate g;
  g.grid = grid;
  g.trials = static_cast<long long>(stops.size());
  g.censored = censored;
  if (stops.empty()) return g;
  double sum = 0.0;
  for (double s : stops) sum += s;
  g.mean_stop = sum / static_cast<double>(stops.size());
  double ss = 0.0;
  for (double s : stops) ss += (s - g.mean_stop) * (s - g.mean_stop);
  g.stderr_stop = stops.size() > 1
                      ? std::sqrt(ss / static_cast<double>(stops.size() - 1) /
                                  static_cast<double>(stops.size()))
                      : 0.0;
  std::sort(stops.begin(), stops.end());
  g.min_stop = stops.front();
  g.median_stop = stops[(stops.size() - 1) / 2];
  g.max_stop = stops.back();
  g.rejection_rate = static_cast<double>(rejects) / static_cast<double>(stops.size());
  return g;
}

}  // namespace detail

// Groups records by grid label in first-appearance order.
inline std::vector<GroupAggregate> compute_aggregates(const std::vector<TrialRecord>& records) {
  std::vector<std::string> order;
  std::vector<std::vector<double>> stops;
  std::vector<long long> rejects;
  std::vector<long long> censored;
  for (const auto& r : records) {
    std::size_t g = 0;
    for (; g < order.size(); ++g)
      if (order[g] == r.grid) break;
    if (g == order.size()) {
      order.push_back(r.grid);
      stops.emplace_back();
      rejects.push_back(0);
      censored.push_back(0);
    }
    stops[g].push_back(static_cast<double>(r.stopping_time));
    if (r.decision == "reject") ++rejects[g];
    if (r.decision == "censored") ++censored[g];
  }
  std::vector<GroupAggregate> out;
  out.reserve(order.size());
  for (std::size_t g = 0; g < order.size(); ++g)
    out.push_back(detail::aggregate_group(order[g], std::move(stops[g]), rejects[g], censored[g]));
  return out;
}

// Null-data rejection rate of the sequential test against a random ergodic
// reference chain, with a binomial confidence bound.
inline ExperimentResult type1_experiment(const ExperimentSpec& raw) {
  const ExperimentSpec spec = resolve_spec(raw);
  if (spec.name != "type1") raise(Errc::invalid_config, "spec.name = " + spec.name);

  TransitionMatrix P = random_chain(spec.m, derive_seed(spec.seed, 0x50));
  for (int attempt = 1; attempt < 100 && !is_ergodic(P); ++attempt)
    P = random_chain(spec.m, derive_seed(spec.seed, 0x50, static_cast<std::uint64_t>(attempt)));
  if (!is_ergodic(P)) raise(Errc::no_convergence, "could not draw an ergodic reference chain");

  const auto estimator_template = make_estimator(spec.estimators.at(0), StateSpace{spec.m},
                                                 Mode::markov, derive_seed(spec.seed, 0xE5));
  const TestConfig config{.alpha = spec.alpha,
                          .null_chain = P,
                          .estimator_spec = spec.estimators.at(0),
                          .mode = Mode::markov,
                          .max_samples = spec.horizon,
                          .estimator_seed = 0};

  ExperimentResult result;
  result.spec = spec;
  result.records.resize(static_cast<std::size_t>(spec.trials));
  detail::parallel_for(result.records.size(), spec.threads, [&](std::size_t i) {
    const std::uint64_t trial_seed = derive_seed(spec.seed, 1, static_cast<std::uint64_t>(i));
    result.records[i] = detail::run_sequential_trial(config, P, *estimator_template, spec.x0,
                                                     trial_seed, "null", static_cast<long long>(i));
  });
  result.aggregates = compute_aggregates(result.records);

  const double rate = result.aggregates.at(0).rejection_rate;
  const double sigma = std::sqrt(spec.alpha * (1.0 - spec.alpha) / static_cast<double>(spec.trials));
  result.extra = nlohmann::json{{"rejection_rate", rate},
                                {"binomial_sigma", sigma},
                                {"alpha_plus_3_sigma", spec.alpha + 3.0 * sigma},
                                {"chain", chain_to_json(P)}};
  return result;
}

// Mean stopping times of the chosen estimators on the two-state benchmark
// pair across the epsilon grid. Data seeds are shared across estimators at
// each (epsilon, trial) so comparisons use common trajectories.
inline ExperimentResult estimator_sweep(const ExperimentSpec& raw) {
  const ExperimentSpec spec = resolve_spec(raw);
  if (spec.name != "estimator_sweep") raise(Errc::invalid_config, "spec.name = " + spec.name);

  std::vector<std::unique_ptr<SequentialEstimator>> templates;
  for (std::size_t e = 0; e < spec.estimators.size(); ++e)
    templates.push_back(make_estimator(spec.estimators[e], StateSpace{spec.m}, Mode::markov,
                                       derive_seed(spec.seed, 0xE5, e)));

  ExperimentResult result;
  result.spec = spec;
  nlohmann::json points = nlohmann::json::array();

  const std::size_t per_point = static_cast<std::size_t>(spec.trials);
  result.records.resize(spec.epsilon_grid.size() * spec.estimators.size() * per_point);
  std::size_t base = 0;
  for (std::size_t ei = 0; ei < spec.epsilon_grid.size(); ++ei) {
    const double eps = spec.epsilon_grid[ei];
    const auto [P, Q] = toy_problem_pair(eps);
    points.push_back({{"epsilon", eps}, {"d_m", stationary_kl(Q, P)}});
    for (std::size_t est = 0; est < spec.estimators.size(); ++est) {
      const std::string grid =
          "eps=" + detail::format_compact(eps) + "|est=" + spec.estimators[est];
      const TestConfig config{.alpha = spec.alpha,
                              .null_chain = P,
                              .estimator_spec = spec.estimators[est],
                              .mode = Mode::markov,
                              .max_samples = spec.horizon,
                              .estimator_seed = 0};
      detail::parallel_for(per_point, spec.threads, [&](std::size_t i) {
        const std::uint64_t trial_seed = derive_seed(spec.seed, ei, static_cast<std::uint64_t>(i));
        result.records[base + i] =
            detail::run_sequential_trial(config, Q, *templates[est], spec.x0, trial_seed, grid,
                                         static_cast<long long>(i));
      });
      base += per_point;
    }
  }
  result.aggregates = compute_aggregates(result.records);
  result.extra = nlohmann::json{{"points", points}};
  return result;
}

// Sequential stopping times against alternatives built by perturbing k rows
// of a random reference chain, plus the power curve of the calibrated
// fixed-length baseline over a sample-size grid on the same alternatives.
inline ExperimentResult adaptivity_experiment(const ExperimentSpec& raw) {
  const ExperimentSpec spec = resolve_spec(raw);
  if (spec.name != "adaptivity") raise(Errc::invalid_config, "spec.name = " + spec.name);
  if (!(spec.epsilon > 0.0 && spec.epsilon < 2.0))
    raise(Errc::invalid_config, "epsilon out of range");

  TransitionMatrix P = random_chain(spec.m, derive_seed(spec.seed, 0x50));
  for (int attempt = 1; attempt < 100 && !is_ergodic(P); ++attempt)
    P = random_chain(spec.m, derive_seed(spec.seed, 0x50, static_cast<std::uint64_t>(attempt)));

  // One perturbation seed across the whole k grid: the perturbed row sets are
  // nested, so difficulty is monotone in k by construction.
  const std::uint64_t perturb_seed = derive_seed(spec.seed, 0x77);
  std::vector<TransitionMatrix> alternatives;
  nlohmann::json instance_info = nlohmann::json::array();
  for (int k : spec.rows_grid) {
    alternatives.push_back(perturb_rows(P, static_cast<std::size_t>(k), spec.epsilon, perturb_seed));
    instance_info.push_back({{"k", k},
                             {"markov_distance", markov_distance(P, alternatives.back())},
                             {"d_m", stationary_kl(alternatives.back(), P)}});
  }

  const auto estimator_template = make_estimator(spec.estimators.at(0), StateSpace{spec.m},
                                                 Mode::markov, derive_seed(spec.seed, 0xE5));

  ExperimentResult result;
  result.spec = spec;
  const std::size_t per_point = static_cast<std::size_t>(spec.trials);
  const std::size_t seq_total = spec.rows_grid.size() * per_point;
  const std::size_t base_total = spec.rows_grid.size() * spec.baseline_sizes.size() * per_point;
  result.records.resize(seq_total + base_total);

  for (std::size_t ki = 0; ki < spec.rows_grid.size(); ++ki) {
    const std::string grid = "seq|k=" + std::to_string(spec.rows_grid[ki]);
    const TestConfig config{.alpha = spec.alpha,
                            .null_chain = P,
                            .estimator_spec = spec.estimators.at(0),
                            .mode = Mode::markov,
                            .max_samples = spec.horizon,
                            .estimator_seed = 0};
    detail::parallel_for(per_point, spec.threads, [&](std::size_t i) {
      const std::uint64_t trial_seed = derive_seed(spec.seed, 1 + ki, static_cast<std::uint64_t>(i));
      result.records[ki * per_point + i] =
          detail::run_sequential_trial(config, alternatives[ki], *estimator_template, spec.x0,
                                       trial_seed, grid, static_cast<long long>(i));
    });
  }

  // Baseline power sweep. Calibration depends only on (P, n); trajectories at
  // different n share the per-trial seed, so longer runs extend shorter ones.
  nlohmann::json calibration_info = nlohmann::json::array();
  std::vector<FixedTestConfig> configs;
  for (std::size_t ni = 0; ni < spec.baseline_sizes.size(); ++ni) {
    FixedTestConfig c = calibrate(P, spec.baseline_sizes[ni], spec.alpha, spec.calibration_trials,
                                  derive_seed(spec.seed, 0xCA, ni));
    c.epsilon = spec.epsilon;
    configs.push_back(c);
    calibration_info.push_back(nlohmann::json(c));
  }
  std::size_t base = seq_total;
  for (std::size_t ki = 0; ki < spec.rows_grid.size(); ++ki) {
    for (std::size_t ni = 0; ni < spec.baseline_sizes.size(); ++ni) {
      const long long n = spec.baseline_sizes[ni];
      const std::string grid = "fixed|k=" + std::to_string(spec.rows_grid[ki]) +
                               "|n=" + std::to_string(n);
      detail::parallel_for(per_point, spec.threads, [&](std::size_t i) {
        TrialRecord record;
        record.grid = grid;
        record.trial = static_cast<long long>(i);
        record.seed = derive_seed(spec.seed, 2 + 100 * (1 + ki), static_cast<std::uint64_t>(i));
        try {
          const Trajectory traj = sample_trajectory(alternatives[ki], spec.x0, n, record.seed);
          const FixedVerdict verdict = run_fixed_test(traj, P, configs[ni]);
          record.decision = verdict == FixedVerdict::reject ? "reject" : "accept";
          record.stopping_time = n;
        } catch (const Error& e) {
          record.decision = std::string("error:") + errc_name(e.code());
        }
        result.records[base + i] = record;
      });
      base += per_point;
    }
  }

  result.aggregates = compute_aggregates(result.records);
  result.extra = nlohmann::json{{"chain", chain_to_json(P)},
                                {"instances", instance_info},
                                {"baseline_configs", calibration_info}};
  return result;
}

// Mean stopping time versus the stationary KL divergence over a grid of
// benchmark alternatives, with the normalization mean_tau * D / log(1/(alpha D))
// and the log-log trend slope reported for inspection.
inline ExperimentResult stopping_time_scaling(const ExperimentSpec& raw) {
  const ExperimentSpec spec = resolve_spec(raw);
  if (spec.name != "scaling") raise(Errc::invalid_config, "spec.name = " + spec.name);

  const auto estimator_template = make_estimator(spec.estimators.at(0), StateSpace{spec.m},
                                                 Mode::markov, derive_seed(spec.seed, 0xE5));
  ExperimentResult result;
  result.spec = spec;
  const std::size_t per_point = static_cast<std::size_t>(spec.trials);
  result.records.resize(spec.epsilon_grid.size() * per_point);

  std::vector<double> d_values;
  for (std::size_t ei = 0; ei < spec.epsilon_grid.size(); ++ei) {
    const double eps = spec.epsilon_grid[ei];
    const auto [P, Q] = toy_problem_pair(eps);
    d_values.push_back(stationary_kl(Q, P));
    const std::string grid = "eps=" + detail::format_compact(eps);
    const TestConfig config{.alpha = spec.alpha,
                            .null_chain = P,
                            .estimator_spec = spec.estimators.at(0),
                            .mode = Mode::markov,
                            .max_samples = spec.horizon,
                            .estimator_seed = 0};
    detail::parallel_for(per_point, spec.threads, [&](std::size_t i) {
      const std::uint64_t trial_seed = derive_seed(spec.seed, ei, static_cast<std::uint64_t>(i));
      result.records[ei * per_point + i] =
          detail::run_sequential_trial(config, Q, *estimator_template, spec.x0, trial_seed, grid,
                                       static_cast<long long>(i));
    });
  }
  result.aggregates = compute_aggregates(result.records);

  nlohmann::json points = nlohmann::json::array();
  std::vector<double> log_d, log_norm;
  for (std::size_t ei = 0; ei < spec.epsilon_grid.size(); ++ei) {
    const auto [P, Q] = toy_problem_pair(spec.epsilon_grid[ei]);
    const double d_m = d_values[ei];
    const double drift = stationary_drift(Q, P);
    const double mean_tau = result.aggregates[ei].mean_stop;
    const double normalized = mean_tau * d_m / std::log(1.0 / (spec.alpha * d_m));
    points.push_back({{"epsilon", spec.epsilon_grid[ei]},
                      {"d_m", d_m},
                      {"drift", drift},
                      {"mean_tau", mean_tau},
                      {"stderr_tau", result.aggregates[ei].stderr_stop},
                      {"normalized", normalized}});
    log_d.push_back(std::log(d_m));
    log_norm.push_back(std::log(normalized));
  }
  // least-squares slope of log(normalized) on log(d_m)
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < log_d.size(); ++i) {
    mx += log_d[i];
    my += log_norm[i];
  }
  mx /= static_cast<double>(log_d.size());
  my /= static_cast<double>(log_d.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < log_d.size(); ++i) {
    sxy += (log_d[i] - mx) * (log_norm[i] - my);
    sxx += (log_d[i] - mx) * (log_d[i] - mx);
  }
  result.extra = nlohmann::json{{"points", points},
                                {"loglog_slope", sxx > 0.0 ? sxy / sxx : 0.0}};
  return result;
}

// Wraps the Wald identity check on the benchmark pair and exposes the
// per-trial cumulative log ratios as records.
inline ExperimentResult wald_verify_experiment(const ExperimentSpec& raw) {
  const ExperimentSpec spec = resolve_spec(raw);
  if (spec.name != "wald_verify") raise(Errc::invalid_config, "spec.name = " + spec.name);
  const auto [P, Q] = toy_problem_pair(spec.epsilon);
  const WaldReport report =
      verify_wald_identity(Q, P, spec.x0, spec.horizon, spec.trials, derive_seed(spec.seed, 9));

  ExperimentResult result;
  result.spec = spec;
  result.records.reserve(report.trial_sums.size());
  const std::string grid = "eps=" + detail::format_compact(spec.epsilon);
  for (std::size_t i = 0; i < report.trial_sums.size(); ++i) {
    TrialRecord record;
    record.grid = grid;
    record.trial = static_cast<long long>(i);
    record.seed = derive_seed(derive_seed(spec.seed, 9), static_cast<std::uint64_t>(i));
    record.decision = "done";
    record.stopping_time = spec.horizon;
    record.final_log_lr = report.trial_sums[i];
    result.records.push_back(std::move(record));
  }
  result.aggregates = compute_aggregates(result.records);
  result.extra = nlohmann::json{{"lhs", report.lhs},
                                {"rhs", report.rhs},
                                {"stderr", report.std_err},
                                {"residual", report.residual},
                                {"drift", report.drift}};
  return result;
}

inline ExperimentResult run_experiment(const ExperimentSpec& raw) {
  const ExperimentSpec spec = resolve_spec(raw);
  if (spec.name == "adaptivity") return adaptivity_experiment(spec);
  if (spec.name == "estimator_sweep") return estimator_sweep(spec);
  if (spec.name == "type1") return type1_experiment(spec);
  if (spec.name == "scaling") return stopping_time_scaling(spec);
  if (spec.name == "wald_verify") return wald_verify_experiment(spec);
  raise(Errc::invalid_config, "unknown experiment '" + spec.name + "'");
}

inline std::string spec_hash(const ExperimentSpec& spec) {
  return detail::fnv1a_hex(nlohmann::json(spec).dump());
}

struct ArtifactPaths {
  std::string csv;
  std::string json;
};

inline void to_json(nlohmann::json& j, const GroupAggregate& g) {
  j = nlohmann::json{{"grid", g.grid},
                     {"trials", g.trials},
                     {"mean_stop", g.mean_stop},
                     {"stderr_stop", g.stderr_stop},
                     {"min_stop", g.min_stop},
                     {"median_stop", g.median_stop},
                     {"max_stop", g.max_stop},
                     {"rejection_rate", g.rejection_rate},
                     {"censored", g.censored}};
}

// One CSV row per trial plus a JSON summary, named <experiment>_<spechash>.*;
// identical resolved specs produce byte-identical files.
inline ArtifactPaths write_artifacts(const ExperimentResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string stem = result.spec.name + "_" + spec_hash(result.spec);
  ArtifactPaths paths;
  paths.csv = (fs::path(out_dir) / (stem + ".csv")).string();
  paths.json = (fs::path(out_dir) / (stem + ".json")).string();

  std::ofstream csv(paths.csv, std::ios::trunc);
  if (!csv) raise(Errc::parse_error, "cannot write '" + paths.csv + "'");
  csv << "experiment,grid,trial,seed,decision,stopping_time,final_log_lr\n";
  for (const auto& r : result.records) {
    csv << result.spec.name << ',' << r.grid << ',' << r.trial << ',' << r.seed << ','
        << r.decision << ',' << r.stopping_time << ',' << detail::format_double(r.final_log_lr)
        << '\n';
  }
  csv.close();

  nlohmann::json summary{{"spec", nlohmann::json(result.spec)},
                         {"aggregates", result.aggregates},
                         {"extra", result.extra}};
  std::ofstream js(paths.json, std::ios::trunc);
  if (!js) raise(Errc::parse_error, "cannot write '" + paths.json + "'");
  js << summary.dump(2) << "\n";
  return paths;
}

}  // namespace seqtest
