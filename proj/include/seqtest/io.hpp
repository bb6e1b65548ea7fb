#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "seqtest/baseline.hpp"
#include "seqtest/chain.hpp"
#include "seqtest/error.hpp"

namespace seqtest {

// Chain spec format: {"m": <int>, "rows": [[...], ...]}.
inline nlohmann::json chain_to_json(const TransitionMatrix& P) {
  return nlohmann::json{{"m", P.num_states()}, {"rows", P.to_rows()}};
}

inline TransitionMatrix chain_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("m") || !j.contains("rows"))
    raise(Errc::parse_error, "chain spec needs \"m\" and \"rows\"");
  std::size_t m = 0;
  std::vector<std::vector<double>> rows;
  try {
    m = j.at("m").get<std::size_t>();
    rows = j.at("rows").get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, e.what());
  }
  if (rows.size() != m)
    raise(Errc::parse_error, "\"m\" = " + std::to_string(m) + " but " +
                                 std::to_string(rows.size()) + " rows given");
  return TransitionMatrix::validate(rows);
}

inline TransitionMatrix load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::parse_error, "cannot open chain file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, std::string("chain file '") + path + "': " + e.what());
  }
  return chain_from_json(j);
}

inline void save_chain(const std::string& path, const TransitionMatrix& P) {
  std::ofstream out(path);
  if (!out) raise(Errc::parse_error, "cannot write chain file '" + path + "'");
  out << chain_to_json(P).dump(2) << "\n";
}

// Trajectory files are newline-delimited state indices; the first line is the
// initial state X_0.
inline void write_trajectory(std::ostream& out, const Trajectory& traj) {
  out << traj.initial_state << "\n";
  for (int x : traj.samples) out << x << "\n";
}

inline Trajectory read_trajectory(std::istream& in, std::size_t m) {
  Trajectory traj;
  std::string line;
  bool have_initial = false;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    int x = 0;
    try {
      std::size_t consumed = 0;
      x = std::stoi(line, &consumed);
      if (consumed != line.size()) throw std::invalid_argument(line);
    } catch (const std::exception&) {
      raise(Errc::stream_error, "line " + std::to_string(line_no) + ": '" + line + "'");
    }
    if (x < 0 || static_cast<std::size_t>(x) >= m)
      raise(Errc::stream_error,
            "line " + std::to_string(line_no) + ": state " + std::to_string(x) + " out of range");
    if (!have_initial) {
      traj.initial_state = x;
      have_initial = true;
    } else {
      traj.samples.push_back(x);
    }
  }
  if (!have_initial) raise(Errc::stream_error, "empty trajectory stream");
  return traj;
}

inline void to_json(nlohmann::json& j, const FixedTestConfig& c) {
  j = nlohmann::json{{"n", c.n},
                     {"epsilon", c.epsilon},
                     {"alpha_target", c.alpha_target},
                     {"t_freq", c.t_freq},
                     {"t_row", c.t_row},
                     {"calibration_trials", c.calibration_trials}};
}

inline void from_json(const nlohmann::json& j, FixedTestConfig& c) {
  try {
    j.at("n").get_to(c.n);
    j.at("epsilon").get_to(c.epsilon);
    j.at("alpha_target").get_to(c.alpha_target);
    j.at("t_freq").get_to(c.t_freq);
    j.at("t_row").get_to(c.t_row);
    j.at("calibration_trials").get_to(c.calibration_trials);
  } catch (const nlohmann::json::exception& e) {
    raise(Errc::parse_error, e.what());
  }
}

}  // namespace seqtest
