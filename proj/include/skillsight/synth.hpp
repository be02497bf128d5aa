#pragma once

// Deterministic synthetic recordings: scripted gaze traces for the analytics
// tests and labeled toy datasets (gaze + 64x64 frames) for training.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillsight/gaze.hpp"

namespace skillsight {

// ---- scripted traces -------------------------------------------------------

struct PlantedFixation {
  double start_s = 0.0;
  double end_s = 0.0;
  double azimuth_deg = 0.0;    // wearer frame, + to the right (+x)
  double elevation_deg = 0.0;  // + up
  double depth_m = 1.0;
};

struct PlantedScript {
  std::vector<PlantedFixation> fixations;  // time ordered, non-overlapping
  double duration_s = 2.0;
  double rate_hz = 30.0;
  double noise_deg = 0.0;  // Gaussian noise on both angles
  std::uint64_t seed = 0;
};

// Piecewise trace: constant direction inside each fixation, linear angular
// interpolation between fixations, held before the first and after the last.
// An empty script gives a constant straight-ahead trace.
GazeSequence planted_event_trace(const PlantedScript& script);

// Wearer-frame unit direction from azimuth/elevation in degrees.
Vector3d direction_from_angles(double azimuth_deg, double elevation_deg);
// Image-plane projection used throughout the generator (90 degree field of view).
Vector2d project_to_image(double azimuth_deg, double elevation_deg);
inline constexpr double kSynthFovDeg = 90.0;

// ---- labeled datasets ------------------------------------------------------

enum class SynthTask { kGazeSeparable, kVisuallySeparable, kDistillation };
SynthTask parse_synth_task(const std::string& s);
std::string to_string(SynthTask t);

struct SubtaskModifier {
  double fixation_duration_scale = 1.0;
  double saccade_amplitude_scale = 1.0;
  double color_swing_sign = 1.0;  // -1 reverses the colour/duration link
};

struct ClassProfile {
  double fixation_duration_mean_s = 0.35;
  double fixation_duration_std_s = 0.1;
  double saccade_amplitude_mean_deg = 10.0;
  double saccade_amplitude_std_deg = 4.0;
  double saccade_speed_deg_s = 300.0;  // with the durations this sets the saccade rate
  double depth_mean_m = 1.25;
  double depth_std_m = 0.2;
  double head_motion_deg = 4.0;  // amplitude of slow head yaw/pitch sway
  double noise_deg = 0.2;
  // Probability that a fixation goes to the target blob vs. a distractor.
  std::map<std::string, double> roi_dwell = {{"target", 0.6}, {"distractor", 0.4}};
  // Where the target blob sits: probability per horizontal zone.
  std::map<std::string, double> target_zone = {{"left", 1.0 / 3}, {"center", 1.0 / 3},
                                                {"right", 1.0 / 3}};
  std::vector<SubtaskModifier> subtask_modifiers;  // indexed by subtask; missing = neutral
  // Fixations on a blob of class colour c last 1 + swing * (2c/(K-1) - 1) times longer.
  double color_duration_swing = 0.0;

  void validate() const;
  double saccade_rate_hz() const;
  nlohmann::json to_json() const;
  static ClassProfile from_json(const nlohmann::json& j);
};

struct SynthTaskSpec {
  SynthTask kind = SynthTask::kDistillation;
  int n_per_class = 50;
  int k_classes = 2;
  int n_subtasks = 2;
  std::uint64_t seed = 7;
  std::vector<std::string> scenarios = {"court", "kitchen"};
  double duration_s = 20.0;
  double gaze_rate_hz = 30.0;
  double frame_rate_hz = 2.0;
  int image_size = 64;
  int n_blobs = 5;
  double label_noise = 0.0;    // probability the stored label differs from the latent class
  double blink_rate_hz = 0.2;  // short runs of invalid samples
  double train_fraction = 0.6;
  double val_fraction = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
};

// Built-in profiles for each task kind.
std::vector<ClassProfile> default_profiles(const SynthTaskSpec& spec);
// Profile file: {"profiles": [ {...}, ... ]} with one entry per class.
std::vector<ClassProfile> load_profiles(const std::filesystem::path& path);

// Per-recording seed derived from (dataset seed, recording index).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct SynthRecordingInfo {
  std::string id;
  int latent_class = 0;  // before label noise
  int label = 0;
  int subtask = 0;
  std::string scenario;
  std::string split;
};

// Writes the dataset under `out` (one directory per recording + dataset.json +
// synth.json) and returns what was generated.
std::vector<SynthRecordingInfo> generate_dataset(const SynthTaskSpec& spec,
                                                 const std::vector<ClassProfile>& profiles,
                                                 const std::filesystem::path& out);

}  // namespace skillsight
