#pragma once

// Experiment configuration file and the `skillsight` command-line driver.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillsight/analysis.hpp"
#include "skillsight/power.hpp"
#include "skillsight/student.hpp"
#include "skillsight/synth.hpp"
#include "skillsight/teacher.hpp"

namespace skillsight {

// One JSON file; every key optional, unknown keys rejected with their path.
// See docs/config.md.
struct ExperimentConfig {
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;  // when set, feeds synth, teacher and student
  SynthTaskSpec synth;
  std::string profiles;  // synth profile file, empty = built-in
  TeacherConfig teacher;
  StudentConfig student;
  power::PowerConstants power;
  double power_interval_s = 8.0;
  FixationParams analysis;
  std::string roi;  // ROI spec file for `analyze`

  void apply_seed();
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
};

SynthTaskSpec synth_spec_from_json(const nlohmann::json& j, const std::string& where = "/synth");

// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or
// arguments.
int run_cli(const std::vector<std::string>& args);

}  // namespace skillsight
