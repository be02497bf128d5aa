#pragma once

// Gaussian gaze prior over the patch grid and the logit-level attention
// modification built on it.

#include <map>
#include <string>
#include <vector>

#include "skillsight/autograd.hpp"
#include "skillsight/gaze.hpp"

namespace skillsight {

struct AttentionConfig {
  int grid_p = 8;        // patches per image side
  int patch_len = 8;     // pixels per patch side
  double sigma = 1.5;    // Gaussian width, patch units
  double lambda_init = 1.0;
  // Scenario -> initial lambda. Scenarios missing here start at lambda_init.
  std::map<std::string, double> lambda_by_scenario;

  int image_size() const { return grid_p * patch_len; }
  void validate() const;
};

// Patch containing the gaze point. `col` follows g2d.x (image u), `row`
// follows g2d.y (image v).
struct GazePatchIndex {
  int col = 0;
  int row = 0;
  bool operator==(const GazePatchIndex&) const = default;
};

GazePatchIndex gaze_patch(const Vector2d& g2d, int grid_p, int patch_len, int image_size);

// p x p map indexed [row][col], normalized to sum to 1. Flattening it
// row-major gives the patch order used by the video encoder.
ag::Matrix gaussian_map(const GazePatchIndex& c, int grid_p, double sigma);

// softmax(logits + lambda * A_g) per row. `logits` has one column per patch;
// `gaze_map` is either p x p or already flattened to 1 x p^2. `lambda` is 1x1.
ag::Var modify_attention(const ag::Var& logits, const ag::Matrix& gaze_map, const ag::Var& lambda);

// One flattened gaze map per clip frame (rows = frames, cols = p^2).
ag::Matrix clip_gaze_maps(const std::vector<GazeSample>& gaze, const AttentionConfig& cfg);

}  // namespace skillsight
