#pragma once

// Gaze / recording data model, gaze normalization and the clip protocol shared
// by every model.

#include <Eigen/Geometry>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "skillsight/autograd.hpp"
#include "skillsight/image.hpp"

namespace skillsight {

using Eigen::Quaterniond;
using Eigen::Vector2d;
using Eigen::Vector3d;

struct GazeSample {
  double time_s = 0.0;
  Vector3d fix3d = Vector3d::Zero();  // world frame, metres, +y up
  Vector3d dir3d = Vector3d::UnitZ(); // wearer frame, unit
  Vector2d g2d = Vector2d::Constant(0.5);
  double depth_m = 0.0;
  Quaterniond rot = Quaterniond::Identity();  // glasses orientation (world <- wearer)
  Vector3d trans = Vector3d::Zero();
  bool valid = true;

  bool operator==(const GazeSample& o) const;
};

struct GazeSequence {
  std::vector<GazeSample> samples;
  double rate_hz = 30.0;

  double start() const { return samples.front().time_s; }
  double end() const { return samples.back().time_s; }
  double span() const { return end() - start(); }
  // Index of the sample closest in time to t (earlier sample wins ties).
  std::size_t nearest(double t) const;
  // Throws FormatError / EmptyInputError when an invariant is violated.
  void validate() const;
};

// Lazily decoded frame directory (`frames/frame_%06d.png` + `frames/index.json`).
// Shared between copies of a Recording; decoded frames are cached.
class FrameSource {
 public:
  FrameSource(std::filesystem::path dir, std::vector<double> timestamps);
  const std::vector<double>& timestamps() const { return timestamps_; }
  std::size_t size() const { return timestamps_.size(); }
  std::size_t nearest(double t) const;
  Image frame(std::size_t index) const;
  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::vector<double> timestamps_;
  mutable std::mutex mu_;
  mutable std::map<std::size_t, Image> cache_;
};

struct Recording {
  std::string id;
  std::shared_ptr<const FrameSource> frames;  // null for gaze-only data
  GazeSequence gaze;
  std::string scenario;
  std::string subtask;
  int skill = 0;
  int k_classes = 2;
  std::string split = "train";
  double frame_rate_hz = 2.0;

  bool has_frames() const { return frames != nullptr; }
};

struct Clip {
  std::string recording_id;
  int index = 0;
  int n_clips = 1;
  std::vector<double> frame_times;
  std::vector<Image> frames;  // empty when the recording has no frames
  std::vector<GazeSample> gaze;
  bool padded = false;
  double max_skew_s = 0.0;  // worst gaze (and frame) to frame_time offset

  bool has_frames() const { return !frames.empty(); }
  // Stable identifier used for caching.
  std::string key() const;
};

struct ClipProtocol {
  int frames_per_clip = 16;
  double fps = 2.0;
  double duration() const { return (frames_per_clip - 1) / fps; }
};

// n_clips clips with start times equally spaced over [start, end - duration].
// A recording shorter than one clip yields a single clip padded with the last
// sample and flagged `padded`.
std::vector<Clip> segment_clips(const Recording& rec, int n_clips = 10,
                                const ClipProtocol& protocol = {});

// Fixed per-frame feature layout shared by the gaze encoders.
namespace gaze_features {
inline constexpr int kFix3d = 0;
inline constexpr int kDir3d = 3;
inline constexpr int kG2d = 6;
inline constexpr int kDepth = 8;
inline constexpr int kRelRot = 9;  // quaternion w, x, y, z
inline constexpr int kTrans = 13;
inline constexpr int kValid = 16;
inline constexpr int kWidth = 17;
}  // namespace gaze_features

// rows = frames, cols = gaze_features::kWidth:
// [fix3d(3), dir3d(3), g2d(2), depth(1), rel_rot wxyz(4), trans(3), valid(1)]
struct NormalizedGaze {
  ag::Matrix features;
  std::size_t frames() const { return static_cast<std::size_t>(features.rows()); }
};

struct NormalizationOptions {
  // Horizontal displacement from frame 0 that counts as "the first movement"
  // when orienting translations.
  double min_move_m = 0.01;
};

// World-frame fix3d and trans come out in a gravity-aligned heading frame with
// x forward, y left, z up; rel_rot is expressed in the same axes.
NormalizedGaze normalize_gaze(std::span<const GazeSample> samples,
                              const NormalizationOptions& opts = {});
inline NormalizedGaze normalize_gaze(const GazeSequence& seq,
                                     const NormalizationOptions& opts = {}) {
  return normalize_gaze(std::span<const GazeSample>(seq.samples), opts);
}

// Samples with invalid entries replaced by the last valid sample (leading
// invalid samples take the first valid one). Flags are kept.
std::vector<GazeSample> hold_last_valid(std::span<const GazeSample> samples);

// normalize_gaze for model input: leading invalid samples are re-anchored on
// the first valid one (their valid column stays 0).
NormalizedGaze normalize_clip_gaze(std::span<const GazeSample> samples);

// Heading-frame vector (forward, left, up) back to the y-up storage frame, and
// the matching change of basis for rotations. Used to feed normalized output
// back in as raw input.
Vector3d heading_to_world(const Vector3d& v);
Vector3d world_to_heading(const Vector3d& v);
Quaterniond heading_to_world(const Quaterniond& q);

// Recording directory I/O.
Recording load_recording(const std::filesystem::path& dir);
void save_recording(const Recording& rec, const std::filesystem::path& dir,
                    std::span<const Image> frames = {}, std::span<const double> frame_times = {});

// Vocabulary shared by the recordings of one dataset (dataset.json, or
// derived from the recordings when the file is absent).
struct DatasetInfo {
  std::vector<std::string> scenarios;
  std::vector<std::string> subtasks;
  int k_classes = 2;
  int scenario_index(const std::string& s) const;
  int subtask_index(const std::string& s) const;
};

struct Dataset {
  std::filesystem::path root;
  DatasetInfo info;
  std::vector<Recording> recordings;

  std::vector<const Recording*> split(const std::string& name) const;
};

Dataset load_dataset(const std::filesystem::path& root);
void save_dataset_info(const DatasetInfo& info, const std::filesystem::path& root);

}  // namespace skillsight
