#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "skillsight/image.hpp"

namespace skillsight {

// Overlaid histograms (one colour per series, shared bins) as a PNG. Series
// colours follow plot_palette() in order.
void write_histogram_png(const std::filesystem::path& path,
                         const std::vector<std::vector<double>>& series, int bins = 24,
                         int width = 480, int height = 240);

// Scatter plot of (x, y) points, one colour per point index modulo the palette.
void write_scatter_png(const std::filesystem::path& path, const std::vector<double>& x,
                       const std::vector<double>& y, bool log_x = false, int width = 480,
                       int height = 320);

const std::vector<std::array<std::uint8_t, 3>>& plot_palette();

}  // namespace skillsight
