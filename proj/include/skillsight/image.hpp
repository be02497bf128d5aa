#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace skillsight {

// 8-bit interleaved RGB image.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return &rgb[(static_cast<std::size_t>(y) * width + x) * 3]; }
  const std::uint8_t* at(int x, int y) const {
    return &rgb[(static_cast<std::size_t>(y) * width + x) * 3];
  }
  bool empty() const { return rgb.empty(); }
  bool operator==(const Image&) const = default;
};

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

// Pixel box [x0, x0+size) x [y0, y0+size).
struct CropBox {
  int x0 = 0;
  int y0 = 0;
  int size = 0;
  bool operator==(const CropBox&) const = default;
};

// Square window of side ceil(crop_frac * min(width, height)) centred on the
// normalized point (u, v), shifted to lie fully inside the image.
CropBox gaze_crop_box(double u, double v, double crop_frac, int width, int height);

// Bilinear resample of `box` to out_size x out_size, returned as CHW doubles
// in [0,1]. Sampling uses pixel-centre alignment, so an equal-size resample is
// an exact copy.
std::vector<double> crop_resize_chw(const Image& img, const CropBox& box, int out_size);

// Whole image as CHW doubles in [0,1].
std::vector<double> to_chw(const Image& img);

}  // namespace skillsight
