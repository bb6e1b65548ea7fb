#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "seqtest/chain.hpp"
#include "seqtest/io.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = SEQTEST_CLI_PATH;

struct RunOutput {
  int exit_code = -1;
  std::string stdout_text;
};

// Runs the CLI through the shell, capturing stdout; stderr goes to a scratch
// file so diagnostics never mix into the data stream under test.
RunOutput run_cli(const std::string& args, const std::string& stdin_file = "") {
  static int counter = 0;
  const fs::path out = fs::temp_directory_path() / ("seqtest_cli_out_" + std::to_string(counter));
  const fs::path err = fs::temp_directory_path() / ("seqtest_cli_err_" + std::to_string(counter));
  ++counter;
  std::string cmd = kCli + " " + args;
  if (!stdin_file.empty()) cmd += " < " + stdin_file;
  cmd += " > " + out.string() + " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  RunOutput result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream f(out);
  std::stringstream ss;
  ss << f.rdbuf();
  result.stdout_text = ss.str();
  fs::remove(out);
  fs::remove(err);
  return result;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "seqtest_cli_fixtures";
    fs::create_directories(dir_);
    chain_ = (dir_ / "chain.json").string();
    seqtest::save_chain(chain_, seqtest::TransitionMatrix::validate({{0.5, 0.5}, {0.7, 0.3}}));
    alt_chain_ = (dir_ / "alt.json").string();
    seqtest::save_chain(alt_chain_, seqtest::TransitionMatrix::validate({{0.5, 0.5}, {0.9, 0.1}}));
    identity_ = (dir_ / "identity.json").string();
    seqtest::save_chain(identity_, seqtest::TransitionMatrix::validate({{1.0, 0.0}, {0.0, 1.0}}));
  }

  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  std::string chain_;
  std::string alt_chain_;
  std::string identity_;
};

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_F(CliTest, SimulateEmitsExactlyLenLines) {
  const RunOutput run = run_cli("simulate --chain " + chain_ + " --x0 0 --len 5 --seed 7");
  EXPECT_EQ(run.exit_code, 0);
  const auto lines = lines_of(run.stdout_text);
  ASSERT_EQ(lines.size(), 5u);
  for (const auto& line : lines) {
    const int x = std::stoi(line);
    EXPECT_TRUE(x == 0 || x == 1);
  }
}

TEST_F(CliTest, SimulateIdentityChainRepeatsInitialState) {
  const RunOutput run = run_cli("simulate --chain " + identity_ + " --x0 1 --len 4 --seed 3");
  EXPECT_EQ(run.exit_code, 0);
  for (const auto& line : lines_of(run.stdout_text)) EXPECT_EQ(line, "1");
}

TEST_F(CliTest, SimulateIsDeterministicInSeed) {
  const std::string args = "simulate --chain " + chain_ + " --x0 0 --len 50 --seed 11";
  EXPECT_EQ(run_cli(args).stdout_text, run_cli(args).stdout_text);
}

TEST_F(CliTest, MalformedChainFileExitsTwo) {
  const std::string bad = (dir_ / "bad.json").string();
  {
    std::ofstream f(bad);
    f << "{ nope";
  }
  EXPECT_EQ(run_cli("simulate --chain " + bad + " --len 3 --seed 1").exit_code, 2);
  EXPECT_EQ(run_cli("simulate --chain " + (dir_ / "missing.json").string() + " --len 3 --seed 1")
                .exit_code,
            2);
}

TEST_F(CliTest, TestAgainstOwnChainRunsToEofWithNdjson) {
  const std::string traj = (dir_ / "null.txt").string();
  {
    const RunOutput sim =
        run_cli("simulate --chain " + chain_ + " --x0 0 --len 400 --seed 21");
    std::ofstream f(traj);
    f << "0\n" << sim.stdout_text;
  }
  const RunOutput run = run_cli("test --chain " + chain_ + " --alpha 0.05 --input " + traj);
  EXPECT_EQ(run.exit_code, 0);
  const auto lines = lines_of(run.stdout_text);
  ASSERT_EQ(lines.size(), 400u);
  long long expected_t = 1;
  for (const auto& line : lines) {
    const nlohmann::json record = nlohmann::json::parse(line);
    EXPECT_EQ(record.at("t").get<long long>(), expected_t++);
    EXPECT_EQ(record.at("decision").get<std::string>(), "running");
    EXPECT_TRUE(record.at("log_lr").is_number());
  }
}

TEST_F(CliTest, PipedAlternativeRejectsWithExitThree) {
  const std::string traj = (dir_ / "alt.txt").string();
  {
    const RunOutput sim =
        run_cli("simulate --chain " + alt_chain_ + " --x0 0 --len 20000 --seed 22");
    std::ofstream f(traj);
    f << "0\n" << sim.stdout_text;
  }
  const RunOutput run = run_cli("test --chain " + chain_ + " --alpha 0.05 --input " + traj);
  EXPECT_EQ(run.exit_code, 3);
  const auto lines = lines_of(run.stdout_text);
  ASSERT_FALSE(lines.empty());
  const nlohmann::json last = nlohmann::json::parse(lines.back());
  EXPECT_EQ(last.at("decision").get<std::string>(), "reject");
  EXPECT_EQ(last.at("tau").get<long long>(), static_cast<long long>(lines.size()));
  EXPECT_GE(last.at("log_lr").get<double>(), std::log(20.0));
}

TEST_F(CliTest, OutOfRangeStateExitsFour) {
  const std::string traj = (dir_ / "garbage.txt").string();
  {
    std::ofstream f(traj);
    f << "0\n1\n7\n";
  }
  EXPECT_EQ(run_cli("test --chain " + chain_ + " --input " + traj).exit_code, 4);
  {
    std::ofstream f(traj);
    f << "0\nbanana\n";
  }
  EXPECT_EQ(run_cli("test --chain " + chain_ + " --input " + traj).exit_code, 4);
}

TEST_F(CliTest, TestRejectsBadAlpha) {
  EXPECT_EQ(run_cli("test --chain " + chain_ + " --alpha 1.5 --input /dev/null").exit_code, 2);
}

TEST_F(CliTest, CalibrateWritesConfigJson) {
  const RunOutput run = run_cli("calibrate --chain " + chain_ +
                                " --n 400 --alpha 0.05 --trials 200 --seed 5 --epsilon 0.4");
  EXPECT_EQ(run.exit_code, 0);
  const nlohmann::json config = nlohmann::json::parse(run.stdout_text);
  EXPECT_EQ(config.at("n").get<long long>(), 400);
  EXPECT_GT(config.at("t_freq").get<double>(), 0.0);
  EXPECT_GT(config.at("t_row").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(config.at("epsilon").get<double>(), 0.4);

  // seed is mandatory in calibration mode
  EXPECT_EQ(run_cli("calibrate --chain " + chain_ + " --n 400").exit_code, 2);
}

TEST_F(CliTest, DivergenceReportsTheThreeDiagnostics) {
  const RunOutput same = run_cli("divergence --chain-a " + chain_ + " --chain-b " + chain_);
  EXPECT_EQ(same.exit_code, 0);
  const nlohmann::json j = nlohmann::json::parse(same.stdout_text);
  EXPECT_DOUBLE_EQ(j.at("d_m_kl").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(j.at("markov_distance").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(j.at("max_lr").get<double>(), 1.0);

  const RunOutput pair = run_cli("divergence --chain-a " + alt_chain_ + " --chain-b " + chain_);
  const nlohmann::json k = nlohmann::json::parse(pair.stdout_text);
  EXPECT_NEAR(k.at("d_m_kl").get<double>(), 0.04155, 1e-4);
  EXPECT_NEAR(k.at("markov_distance").get<double>(), 0.4, 1e-12);
  EXPECT_NEAR(k.at("max_lr").get<double>(), 9.0 / 7.0, 1e-12);

  const std::string wide = (dir_ / "wide.json").string();
  seqtest::save_chain(wide, seqtest::random_chain(3, 1));
  EXPECT_EQ(run_cli("divergence --chain-a " + chain_ + " --chain-b " + wide).exit_code, 2);
}

TEST_F(CliTest, ExperimentWritesArtifactsAndSummaryTable) {
  const std::string spec_path = (dir_ / "spec.json").string();
  {
    nlohmann::json spec{{"name", "estimator_sweep"}, {"seed", 9},       {"trials", 5},
                        {"horizon", 50000},          {"threads", 2},    {"epsilon_grid", {0.5}},
                        {"estimators", {"add:0.5"}}};
    std::ofstream f(spec_path);
    f << spec.dump();
  }
  const std::string out_dir = (dir_ / "results").string();
  const RunOutput run = run_cli("experiment --spec " + spec_path + " --out-dir " + out_dir);
  EXPECT_EQ(run.exit_code, 0);
  EXPECT_NE(run.stdout_text.find("mean_stop"), std::string::npos);

  int csv_count = 0, json_count = 0;
  fs::path csv_path;
  for (const auto& entry : fs::directory_iterator(out_dir)) {
    if (entry.path().extension() == ".csv") {
      ++csv_count;
      csv_path = entry.path();
    }
    if (entry.path().extension() == ".json") ++json_count;
  }
  EXPECT_EQ(csv_count, 1);
  EXPECT_EQ(json_count, 1);

  // identical spec re-run: byte-identical artifacts
  std::ifstream before(csv_path, std::ios::binary);
  std::stringstream first;
  first << before.rdbuf();
  before.close();
  const RunOutput rerun = run_cli("experiment --spec " + spec_path + " --out-dir " + out_dir);
  EXPECT_EQ(rerun.exit_code, 0);
  std::ifstream after(csv_path, std::ios::binary);
  std::stringstream second;
  second << after.rdbuf();
  EXPECT_EQ(first.str(), second.str());

  // spec without a seed is a config error
  const std::string bad_spec = (dir_ / "bad_spec.json").string();
  {
    std::ofstream f(bad_spec);
    f << R"({"name": "type1"})";
  }
  EXPECT_EQ(run_cli("experiment --spec " + bad_spec + " --out-dir " + out_dir).exit_code, 2);
}

TEST_F(CliTest, UnknownSubcommandExitsTwo) {
  EXPECT_EQ(run_cli("frobnicate").exit_code, 2);
  EXPECT_EQ(run_cli("").exit_code, 2);
}
