#include "skillsight/gaze_attention.hpp"

#include <algorithm>
#include <cmath>

#include "skillsight/error.hpp"

namespace skillsight {

void AttentionConfig::validate() const {
  if (grid_p < 1) throw ConfigError("grid_p must be >= 1", "grid_p");
  if (patch_len < 1) throw ConfigError("patch_len must be >= 1", "patch_len");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be > 0", "sigma");
}

GazePatchIndex gaze_patch(const Vector2d& g2d, int grid_p, int patch_len, int image_size) {
  auto axis = [&](double u) {
    const double cell = std::floor(u * image_size / patch_len);
    return static_cast<int>(std::clamp(cell, 0.0, static_cast<double>(grid_p - 1)));
  };
  return {axis(g2d.x()), axis(g2d.y())};
}

ag::Matrix gaussian_map(const GazePatchIndex& c, int grid_p, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("gaussian_map: sigma must be > 0", "sigma");
  if (grid_p < 1) throw ConfigError("gaussian_map: grid_p must be >= 1", "grid_p");
  ag::Matrix a(grid_p, grid_p);
  const double denom = 2.0 * sigma * sigma;
  for (int r = 0; r < grid_p; ++r) {
    for (int col = 0; col < grid_p; ++col) {
      const double dr = r - c.row;
      const double dc = col - c.col;
      a(r, col) = std::exp(-(dr * dr + dc * dc) / denom);
    }
  }
  return a / a.sum();
}

ag::Var modify_attention(const ag::Var& logits, const ag::Matrix& gaze_map, const ag::Var& lambda) {
  const ag::Index n = gaze_map.size();
  if (logits.cols() != n) {
    throw ShapeError("modify_attention: logits have " + std::to_string(logits.cols()) +
                     " columns but the gaze map has " + std::to_string(n) + " entries");
  }
  if (lambda.rows() != 1 || lambda.cols() != 1) {
    throw ShapeError("modify_attention: lambda must be 1x1");
  }
  ag::Matrix flat = Eigen::Map<const ag::Matrix>(gaze_map.data(), 1, n);
  return ag::softmax_rows(ag::add_row(logits, ag::mul_scalar(ag::constant(flat), lambda)));
}

ag::Matrix clip_gaze_maps(const std::vector<GazeSample>& gaze, const AttentionConfig& cfg) {
  const int p = cfg.grid_p;
  ag::Matrix out(static_cast<ag::Index>(gaze.size()), p * p);
  for (std::size_t t = 0; t < gaze.size(); ++t) {
    const auto c = gaze_patch(gaze[t].g2d, p, cfg.patch_len, cfg.image_size());
    const ag::Matrix m = gaussian_map(c, p, cfg.sigma);
    out.row(static_cast<ag::Index>(t)) = Eigen::Map<const ag::RowVector>(m.data(), p * p);
  }
  return out;
}

}  // namespace skillsight
