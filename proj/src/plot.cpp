#include "skillsight/plot.hpp"

#include <algorithm>
#include <cmath>

namespace skillsight {
namespace {

constexpr int kMargin = 16;

void fill_rect(Image& img, int x0, int y0, int x1, int y1, const std::array<std::uint8_t, 3>& c) {
  x0 = std::clamp(x0, 0, img.width);
  x1 = std::clamp(x1, 0, img.width);
  y0 = std::clamp(y0, 0, img.height);
  y1 = std::clamp(y1, 0, img.height);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) std::copy(c.begin(), c.end(), img.at(x, y));
  }
}

Image blank_canvas(int width, int height) {
  Image img(width, height);
  std::fill(img.rgb.begin(), img.rgb.end(), 255);
  const std::array<std::uint8_t, 3> axis = {40, 40, 40};
  fill_rect(img, kMargin, height - kMargin, width - kMargin, height - kMargin + 1, axis);
  fill_rect(img, kMargin, kMargin, kMargin + 1, height - kMargin, axis);
  return img;
}

}  // namespace

const std::vector<std::array<std::uint8_t, 3>>& plot_palette() {
  static const std::vector<std::array<std::uint8_t, 3>> p = {
      {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}, {148, 103, 189}, {140, 86, 75}};
  return p;
}

void write_histogram_png(const std::filesystem::path& path,
                         const std::vector<std::vector<double>>& series, int bins, int width,
                         int height) {
  Image img = blank_canvas(width, height);
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : series) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (std::isfinite(lo) && bins > 0 && !series.empty()) {
    if (hi <= lo) hi = lo + 1.0;
    std::vector<std::vector<double>> freq(series.size(), std::vector<double>(bins, 0.0));
    double peak = 0.0;
    for (std::size_t k = 0; k < series.size(); ++k) {
      for (double v : series[k]) {
        const int b = std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
        freq[k][b] += 1.0;
      }
      // Normalize each series so groups of different size compare by shape.
      const double n = static_cast<double>(std::max<std::size_t>(1, series[k].size()));
      for (double& f : freq[k]) {
        f /= n;
        peak = std::max(peak, f);
      }
    }
    const double plot_w = width - 2.0 * kMargin;
    const double plot_h = height - 2.0 * kMargin;
    const double bin_w = plot_w / bins;
    const double bar_w = bin_w / static_cast<double>(series.size());
    const auto& pal = plot_palette();
    for (std::size_t k = 0; k < series.size(); ++k) {
      for (int b = 0; b < bins; ++b) {
        const int x0 = kMargin + 1 + static_cast<int>(b * bin_w + k * bar_w);
        const int x1 = kMargin + 1 + static_cast<int>(b * bin_w + (k + 1) * bar_w);
        const int h = peak > 0 ? static_cast<int>(std::round(freq[k][b] / peak * plot_h)) : 0;
        fill_rect(img, x0, height - kMargin - h, x1, height - kMargin, pal[k % pal.size()]);
      }
    }
  }
  write_png(path, img);
}

void write_scatter_png(const std::filesystem::path& path, const std::vector<double>& x,
                       const std::vector<double>& y, bool log_x, int width, int height) {
  Image img = blank_canvas(width, height);
  const std::size_t n = std::min(x.size(), y.size());
  auto tx = [&](double v) { return log_x ? std::log10(std::max(v, 1e-12)) : v; };
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) {
    xlo = std::min(xlo, tx(x[i]));
    xhi = std::max(xhi, tx(x[i]));
    ylo = std::min(ylo, y[i]);
    yhi = std::max(yhi, y[i]);
  }
  if (n > 0) {
    const double xpad = std::max(1e-9, 0.1 * (xhi - xlo)) + (xhi == xlo ? 1.0 : 0.0);
    const double ypad = std::max(1e-9, 0.1 * (yhi - ylo)) + (yhi == ylo ? 1.0 : 0.0);
    xlo -= xpad;
    xhi += xpad;
    ylo -= ypad;
    yhi += ypad;
    const auto& pal = plot_palette();
    for (std::size_t i = 0; i < n; ++i) {
      const int px = kMargin + static_cast<int>((tx(x[i]) - xlo) / (xhi - xlo) * (width - 2 * kMargin));
      const int py = height - kMargin -
                     static_cast<int>((y[i] - ylo) / (yhi - ylo) * (height - 2 * kMargin));
      fill_rect(img, px - 3, py - 3, px + 4, py + 4, pal[i % pal.size()]);
    }
  }
  write_png(path, img);
}

}  // namespace skillsight
