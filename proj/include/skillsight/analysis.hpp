#pragma once

// Eye-movement event detection and per-group gaze statistics.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillsight/gaze.hpp"

namespace skillsight {

enum class FixationKind { kMovementRelated, kExploratory };
const char* to_string(FixationKind k);

struct FixationEvent {
  double start_s = 0.0;
  double end_s = 0.0;
  std::size_t first = 0;  // sample indices, inclusive
  std::size_t last = 0;
  Vector2d centroid_g2d = Vector2d::Zero();
  Vector3d centroid_dir = Vector3d::UnitZ();  // unit mean direction
  double mean_depth_m = 0.0;
  FixationKind kind = FixationKind::kExploratory;

  double duration() const { return end_s - start_s; }
};

struct FixationParams {
  double dispersion_deg = 1.5;
  double min_fixation_s = 0.1;
  double movement_depth_m = 1.0;  // mean depth at or below this -> movement-related
};

// Angular dispersion of a set of directions: (max - min) azimuth plus
// (max - min) elevation, in degrees.
double angular_dispersion_deg(std::span<const Vector3d> dirs);

// Dispersion-threshold (I-DT) detection over dir3d. Windows never span an
// invalid sample.
std::vector<FixationEvent> detect_fixations(const GazeSequence& seq, const FixationParams& params = {});

struct Summary {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double p90 = 0.0;
};
// Order-independent summary (values are sorted first).
Summary summarize(std::vector<double> values);
double percentile(const std::vector<double>& sorted, double q);

struct SaccadeStats {
  std::vector<double> amplitudes_deg;     // one per consecutive fixation pair
  std::vector<double> peak_speeds_deg_s;  // same order
  Summary amplitude;
  Summary peak_speed;
};

// Angular speed per sample: 3-sample moving average of dir3d, then central
// differences. End samples use one-sided differences.
std::vector<double> angular_speed_deg_s(const GazeSequence& seq);

SaccadeStats saccade_stats(const GazeSequence& seq, const std::vector<FixationEvent>& fixations);

// Named rectangular regions of the image plane, [u0, u1) x [v0, v1), plus the
// region pairs whose transitions should be reported (all pairs when empty).
struct RoiSpec {
  struct Region {
    std::string name;
    double u0 = 0, v0 = 0, u1 = 1, v1 = 1;
  };
  std::vector<Region> regions;
  std::vector<std::pair<std::string, std::string>> tracked;

  // First region containing the point, or -1.
  int locate(const Vector2d& g2d) const;
  void validate() const;
  static RoiSpec from_json(const nlohmann::json& j);
};

struct Distribution {
  std::vector<double> values;  // sorted
  std::size_t count() const { return values.size(); }
  double mean() const;
  double std() const;
  Summary summary() const { return summarize(values); }
};

struct RecordingStats {
  std::vector<double> fixation_durations_s;
  std::vector<double> saccade_amplitudes_deg;
  std::vector<double> saccade_speeds_deg_s;
  std::vector<double> depths_m;  // valid samples
  double gaze_point_variance = 0.0;  // trace of the fix3d covariance, m^2
  std::size_t fixations = 0;
  std::size_t movement_related = 0;
  std::size_t exploratory = 0;
  std::map<std::string, std::size_t> roi_dwell;  // fixations per region
  std::map<std::pair<std::string, std::string>, std::size_t> roi_transitions;
};

RecordingStats recording_stats(const GazeSequence& seq, const RoiSpec& roi,
                               const FixationParams& params = {});

struct GroupStats {
  std::size_t recordings = 0;
  Distribution fixation_duration_s;
  Distribution fixations_per_recording;
  Distribution saccade_amplitude_deg;
  Distribution saccade_speed_deg_s;
  Distribution depth_m;
  Distribution gaze_point_variance;
  std::size_t movement_related = 0;
  std::size_t exploratory = 0;
  std::map<std::string, std::size_t> roi_dwell;
  std::map<std::pair<std::string, std::string>, std::size_t> roi_transitions;
};

struct GazeStatsReport {
  std::map<int, GroupStats> groups;
  FixationParams params;
  nlohmann::json to_json() const;
};

GazeStatsReport group_report(const std::vector<const Recording*>& recordings,
                             const std::vector<int>& labels, const RoiSpec& roi,
                             const FixationParams& params = {});

// report.json plus one PNG histogram per distribution.
void write_report(const GazeStatsReport& report, const std::filesystem::path& out_dir);

}  // namespace skillsight
