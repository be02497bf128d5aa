#include "skillsight/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "skillsight/error.hpp"

namespace skillsight {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const std::filesystem::path& path, const Image& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.at(0, y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open frame " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng init failed");
  }
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img = Image(static_cast<int>(png_get_image_width(png, info)),
              static_cast<int>(png_get_image_height(png, info)));
  for (int y = 0; y < img.height; ++y) png_read_row(png, img.at(0, y), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

CropBox gaze_crop_box(double u, double v, double crop_frac, int width, int height) {
  const int side = std::min(width, height);
  int size = static_cast<int>(std::ceil(crop_frac * side - 1e-9));
  size = std::clamp(size, 1, side);
  auto place = [size](double centre_px, int extent) {
    const int start = static_cast<int>(std::floor(centre_px - size / 2.0));
    return std::clamp(start, 0, extent - size);
  };
  return {place(u * width, width), place(v * height, height), size};
}

std::vector<double> crop_resize_chw(const Image& img, const CropBox& box, int out_size) {
  std::vector<double> out(static_cast<std::size_t>(3) * out_size * out_size);
  const double scale = static_cast<double>(box.size) / out_size;
  for (int oy = 0; oy < out_size; ++oy) {
    const double sy = std::clamp((oy + 0.5) * scale - 0.5, 0.0, box.size - 1.0);
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, box.size - 1);
    const double fy = sy - y0;
    for (int ox = 0; ox < out_size; ++ox) {
      const double sx = std::clamp((ox + 0.5) * scale - 0.5, 0.0, box.size - 1.0);
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, box.size - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        auto px = [&](int x, int y) {
          return img.at(box.x0 + x, box.y0 + y)[c] / 255.0;
        };
        double v = px(x0, y0);
        if (fx != 0.0 || fy != 0.0) {
          v = (1 - fy) * ((1 - fx) * px(x0, y0) + fx * px(x1, y0)) +
              fy * ((1 - fx) * px(x0, y1) + fx * px(x1, y1));
        }
        out[(static_cast<std::size_t>(c) * out_size + oy) * out_size + ox] = v;
      }
    }
  }
  return out;
}

std::vector<double> to_chw(const Image& img) {
  std::vector<double> out(static_cast<std::size_t>(3) * img.width * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[(static_cast<std::size_t>(c) * img.height + y) * img.width + x] = img.at(x, y)[c] / 255.0;
      }
    }
  }
  return out;
}

}  // namespace skillsight
