#pragma once

// Small model configurations and hand-built clips shared by the model tests.

#include <random>
#include <string>

#include "oracles.hpp"
#include "skillsight/student.hpp"
#include "skillsight/teacher.hpp"

namespace fixture {

inline skillsight::TeacherConfig tiny_teacher_config() {
  skillsight::TeacherConfig c;
  c.attention.grid_p = 4;
  c.attention.patch_len = 8;
  c.attention.sigma = 1.0;
  c.video.encoder = {1, 2, 16, 2};
  c.crop.embedder = {16, 4, 4, 16};
  c.crop.temporal = {1, 2, 16, 2};
  c.gaze.encoder = {1, 2, 16, 2};
  c.fusion_hidden = {16, 8};
  c.seed = 3;
  return c;
}

inline skillsight::StudentConfig tiny_student_config(int teacher_dim) {
  skillsight::StudentConfig c;
  c.encoder = {1, 2, 16, 2};
  c.teacher_dim = teacher_dim;
  c.n_subtasks = 2;
  c.seed = 5;
  return c;
}

// 16-frame clip with random 32x32 frames and a random valid gaze track.
inline skillsight::Clip random_clip(std::mt19937_64& rng, int size = 32, int frames = 16) {
  skillsight::Clip clip;
  clip.recording_id = "rec" + std::to_string(rng() % 100000);
  clip.n_clips = 1;
  std::uniform_int_distribution<int> px(0, 255);
  for (int f = 0; f < frames; ++f) {
    skillsight::Image img(size, size);
    for (auto& b : img.rgb) b = static_cast<std::uint8_t>(px(rng));
    clip.frames.push_back(std::move(img));
    clip.frame_times.push_back(f * 0.5);
  }
  clip.gaze = oracle::random_sequence(frames, rng);
  std::uniform_real_distribution<double> uv(0.05, 0.95);
  for (std::size_t i = 0; i < clip.gaze.size(); ++i) {
    clip.gaze[i].time_s = clip.frame_times[i];
    clip.gaze[i].g2d = {uv(rng), uv(rng)};
  }
  return clip;
}

}  // namespace fixture
