// seqtest: sequential one-sided testing of finite-state Markov chains.
//
// Exit codes: 0 clean, 2 configuration error, 3 rejection alert,
// 4 malformed stream. stdout carries only data; diagnostics and the resolved
// configuration echo go to stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"
#include "seqtest/estimators.hpp"
#include "seqtest/experiments.hpp"
#include "seqtest/io.hpp"
#include "seqtest/sprt.hpp"
#include "seqtest/wald.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitReject = 3;
constexpr int kExitStream = 4;

void echo_config(const nlohmann::ordered_json& resolved) {
  std::cerr << "config: " << resolved.dump() << "\n";
}

std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

std::optional<int> parse_state_line(const std::string& raw, std::size_t m) {
  std::string line = raw;
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
    line.pop_back();
  std::size_t start = 0;
  while (start < line.size() && (line[start] == ' ' || line[start] == '\t')) ++start;
  line = line.substr(start);
  if (line.empty()) return std::nullopt;
  std::size_t consumed = 0;
  int x = 0;
  try {
    x = std::stoi(line, &consumed);
  } catch (const std::exception&) {
    seqtest::raise(seqtest::Errc::stream_error, "not a state index: '" + raw + "'");
  }
  if (consumed != line.size())
    seqtest::raise(seqtest::Errc::stream_error, "not a state index: '" + raw + "'");
  if (x < 0 || static_cast<std::size_t>(x) >= m)
    seqtest::raise(seqtest::Errc::stream_error, "state " + std::to_string(x) + " out of range");
  return x;
}

int run_simulate(const std::string& chain_file, int x0, long long length,
                 std::optional<std::uint64_t> seed_flag) {
  const seqtest::TransitionMatrix P = seqtest::load_chain(chain_file);
  const std::uint64_t seed = seed_flag ? *seed_flag : entropy_seed();
  echo_config({{"subcommand", "simulate"},
               {"chain", chain_file},
               {"x0", x0},
               {"len", length},
               {"seed", seed}});
  const seqtest::Trajectory traj = seqtest::sample_trajectory(P, x0, length, seed);
  for (int x : traj.samples) std::cout << x << "\n";
  return kExitOk;
}

int run_test(const std::string& chain_file, double alpha, const std::string& estimator,
             const std::string& mode_name, std::uint64_t seed, const std::string& input,
             std::optional<long long> max_samples) {
  const seqtest::TransitionMatrix P = seqtest::load_chain(chain_file);
  const seqtest::Mode mode = seqtest::mode_from_string(mode_name);
  const double threshold = seqtest::rejection_threshold(alpha);
  auto est = seqtest::make_estimator(estimator, seqtest::StateSpace{P.num_states()}, mode, seed);
  echo_config({{"subcommand", "test"},
               {"chain", chain_file},
               {"alpha", alpha},
               {"estimator", estimator},
               {"mode", mode_name},
               {"seed", seed},
               {"input", input},
               {"max_samples", max_samples ? nlohmann::json(*max_samples) : nlohmann::json()},
               {"log_threshold", threshold}});

  std::ifstream file;
  std::istream* in = &std::cin;
  if (input != "-") {
    file.open(input);
    if (!file) {
      std::cerr << "error: cannot open input '" << input << "'\n";
      return kExitConfig;
    }
    in = &file;
  }

  seqtest::TestState state;
  bool have_initial = false;
  std::string line;
  try {
    while (std::getline(*in, line)) {
      const std::optional<int> x = parse_state_line(line, P.num_states());
      if (!x) continue;  // blank lines are tolerated
      if (!have_initial) {
        state.prev_state = *x;
        have_initial = true;
        continue;
      }
      state = seqtest::composite_step(state, *x, P, alpha, *est);
      nlohmann::ordered_json record{
          {"t", state.t},
          {"log_lr", std::isfinite(state.log_lr) ? nlohmann::json(state.log_lr)
                                                 : nlohmann::json()},
          {"decision", state.verdict == seqtest::Decision::reject_null ? "reject" : "running"}};
      if (state.verdict == seqtest::Decision::reject_null) {
        record["tau"] = state.t;
        std::cout << record.dump() << "\n";
        return kExitReject;
      }
      std::cout << record.dump() << "\n";
      if (max_samples && state.t >= *max_samples) break;
    }
  } catch (const seqtest::Error& e) {
    if (e.code() == seqtest::Errc::stream_error) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitStream;
    }
    throw;
  }
  return kExitOk;
}

int run_calibrate(const std::string& chain_file, long long n, double alpha, long long trials,
                  std::uint64_t seed, double epsilon, const std::string& out) {
  const seqtest::TransitionMatrix P = seqtest::load_chain(chain_file);
  echo_config({{"subcommand", "calibrate"},
               {"chain", chain_file},
               {"n", n},
               {"alpha", alpha},
               {"trials", trials},
               {"seed", seed},
               {"epsilon", epsilon},
               {"out", out.empty() ? "-" : out}});
  seqtest::FixedTestConfig config = seqtest::calibrate(P, n, alpha, trials, seed);
  config.epsilon = epsilon;
  const std::string payload = nlohmann::json(config).dump(2) + "\n";
  if (out.empty()) {
    std::cout << payload;
  } else {
    std::ofstream f(out, std::ios::trunc);
    if (!f) {
      std::cerr << "error: cannot write '" << out << "'\n";
      return kExitConfig;
    }
    f << payload;
  }
  return kExitOk;
}

int run_experiment_cmd(const std::string& spec_file, const std::string& out_dir,
                       std::optional<std::uint64_t> seed_flag) {
  std::ifstream in(spec_file);
  if (!in) {
    std::cerr << "error: cannot open spec '" << spec_file << "'\n";
    return kExitConfig;
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: spec parse: " << e.what() << "\n";
    return kExitConfig;
  }
  if (seed_flag) j["seed"] = *seed_flag;
  seqtest::ExperimentSpec spec = j.get<seqtest::ExperimentSpec>();
  spec = seqtest::resolve_spec(spec);
  echo_config({{"subcommand", "experiment"},
               {"spec_file", spec_file},
               {"out_dir", out_dir},
               {"resolved", nlohmann::json(spec)}});

  const seqtest::ExperimentResult result = seqtest::run_experiment(spec);
  const seqtest::ArtifactPaths paths = seqtest::write_artifacts(result, out_dir);
  std::cerr << "wrote " << paths.csv << "\n";
  std::cerr << "wrote " << paths.json << "\n";

  std::printf("%-28s %8s %12s %12s %10s %9s\n", "grid", "trials", "mean_stop", "stderr",
              "reject", "censored");
  for (const auto& g : result.aggregates) {
    std::printf("%-28s %8lld %12.3f %12.4f %10.4f %9lld\n", g.grid.c_str(), g.trials, g.mean_stop,
                g.stderr_stop, g.rejection_rate, g.censored);
  }
  return kExitOk;
}

int run_divergence(const std::string& chain_a, const std::string& chain_b) {
  const seqtest::TransitionMatrix A = seqtest::load_chain(chain_a);
  const seqtest::TransitionMatrix B = seqtest::load_chain(chain_b);
  echo_config({{"subcommand", "divergence"}, {"chain_a", chain_a}, {"chain_b", chain_b}});
  const double d_m = seqtest::stationary_kl(A, B);
  const double dist = seqtest::markov_distance(A, B);
  const double max_lr = seqtest::max_likelihood_ratio(A, B);
  nlohmann::ordered_json out{
      {"d_m_kl", std::isfinite(d_m) ? nlohmann::json(d_m) : nlohmann::json()},
      {"markov_distance", dist},
      {"max_lr", std::isfinite(max_lr) ? nlohmann::json(max_lr) : nlohmann::json()}};
  std::cout << out.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential one-sided hypothesis testing of finite-state Markov chains"};
  app.require_subcommand(1);

  auto* simulate = app.add_subcommand("simulate", "Sample a trajectory from a chain");
  std::string sim_chain;
  int sim_x0 = 0;
  long long sim_len = 0;
  std::optional<std::uint64_t> sim_seed;
  simulate->add_option("--chain", sim_chain, "Chain spec JSON file")->required();
  simulate->add_option("--x0", sim_x0, "Initial state");
  simulate->add_option("--len", sim_len, "Number of samples")->required();
  simulate->add_option("--seed", sim_seed, "RNG seed (default: entropy)");

  auto* test = app.add_subcommand("test", "Run the sequential test on a state stream");
  std::string test_chain, test_estimator = "kt", test_mode = "markov", test_input = "-";
  double test_alpha = 0.05;
  std::uint64_t test_seed = 0;
  std::optional<long long> test_max;
  test->add_option("--chain", test_chain, "Null chain spec JSON file")->required();
  test->add_option("--alpha", test_alpha, "Type-1 error budget");
  test->add_option("--estimator", test_estimator,
                   "kt | add:<g> | jeffreys:<K> | modified:<K>,<d>,<g>,<h>");
  test->add_option("--mode", test_mode, "iid | markov");
  test->add_option("--seed", test_seed, "Estimator seed (mixtures)");
  test->add_option("--input", test_input, "State stream file, - for stdin");
  test->add_option("--max-samples", test_max, "Stop after this many samples");

  auto* calibrate = app.add_subcommand("calibrate", "Calibrate the fixed-length baseline test");
  std::string cal_chain, cal_out;
  long long cal_n = 0, cal_trials = 2000;
  double cal_alpha = 0.05, cal_epsilon = 0.0;
  std::uint64_t cal_seed = 0;
  calibrate->add_option("--chain", cal_chain, "Chain spec JSON file")->required();
  calibrate->add_option("--n", cal_n, "Trajectory length")->required();
  calibrate->add_option("--alpha", cal_alpha, "Target type-1 level");
  calibrate->add_option("--trials", cal_trials, "Calibration trials");
  calibrate->add_option("--seed", cal_seed, "RNG seed")->required();
  calibrate->add_option("--epsilon", cal_epsilon, "Separation parameter recorded in the config");
  calibrate->add_option("--out", cal_out, "Output file (default stdout)");

  auto* experiment = app.add_subcommand("experiment", "Run a Monte-Carlo experiment spec");
  std::string exp_spec, exp_out_dir = ".";
  std::optional<std::uint64_t> exp_seed;
  experiment->add_option("--spec", exp_spec, "Experiment spec JSON file")->required();
  experiment->add_option("--out-dir", exp_out_dir, "Artifact output directory");
  experiment->add_option("--seed", exp_seed, "Override the spec seed");

  auto* divergence = app.add_subcommand("divergence", "Chain divergence diagnostics");
  std::string div_a, div_b;
  divergence->add_option("--chain-a", div_a, "Data-generating chain JSON file")->required();
  divergence->add_option("--chain-b", div_b, "Reference chain JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (simulate->parsed()) return run_simulate(sim_chain, sim_x0, sim_len, sim_seed);
    if (test->parsed())
      return run_test(test_chain, test_alpha, test_estimator, test_mode, test_seed, test_input,
                      test_max);
    if (calibrate->parsed())
      return run_calibrate(cal_chain, cal_n, cal_alpha, cal_trials, cal_seed, cal_epsilon,
                           cal_out);
    if (experiment->parsed()) return run_experiment_cmd(exp_spec, exp_out_dir, exp_seed);
    if (divergence->parsed()) return run_divergence(div_a, div_b);
  } catch (const seqtest::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == seqtest::Errc::stream_error ? kExitStream : kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}
