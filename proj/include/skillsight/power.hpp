#pragma once

// Analytic energy model: P = alpha*N/T + beta*B/T + sum_m gamma_m * delta_m,
// with closed-form MAC and memory-byte counts for transformer-style models.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace skillsight::power {

using Count = std::int64_t;

enum class LayerKind { kLinear, kAttentionBlock, kDividedAttentionBlock, kConv, kMlp, kNorm, kElementwise };
const char* to_string(LayerKind k);

// One entry of an architecture description. Which fields matter depends on
// the kind (see docs/power_arch_schema.md).
struct Layer {
  LayerKind kind = LayerKind::kLinear;
  Count repeat = 1;
  Count tokens = 1;        // rows processed (linear, mlp, norm, elementwise, attention)
  Count in = 0, out = 0;   // linear
  bool bias = true;        // linear, mlp
  std::vector<Count> widths;  // mlp
  Count width = 0;         // attention, norm, elementwise
  Count ffn = 0;           // attention hidden width
  Count heads = 1;
  Count frames = 1, patches = 0;  // divided attention: tokens = 1 + frames * patches
  Count inputs = 2;               // elementwise operand count
  Count batch = 1, in_channels = 0, out_channels = 0, kernel = 1, stride = 1, pad = 0;  // conv
  Count height = 0, image_width = 0;

  nlohmann::json to_json() const;
  static Layer from_json(const nlohmann::json& j);
};

struct Architecture {
  std::string name;
  std::vector<Layer> layers;

  nlohmann::json to_json() const;
  static Architecture from_json(const nlohmann::json& j);
  static Architecture load(const std::filesystem::path& path);
};

Count count_macs(const Layer& layer);
Count count_macs(const Architecture& arch);
Count estimate_bytes(const Layer& layer, int bytes_per_value = 4);
Count estimate_bytes(const Architecture& arch, int bytes_per_value = 4);

struct PowerConstants {
  double alpha_pj_per_mac = 4.6;
  double beta_pj_per_byte = 80.0;
  std::map<std::string, double> gamma_mw = {{"rgb", 35.0}, {"imu", 1.2}, {"audio", 0.3}, {"eye", 7.8}};

  void validate() const;
  nlohmann::json to_json() const;
};

struct PowerProfile {
  double macs = 0.0;
  double bytes = 0.0;
  double interval_s = 8.0;
  std::map<std::string, double> sensor_duty;  // sensor -> duty in [0,1]
};

PowerProfile profile_for(const Architecture& arch, const std::map<std::string, double>& sensor_duty,
                         double interval_s = 8.0);

struct PowerBreakdown {
  double compute_mw = 0.0;
  double memory_mw = 0.0;
  double sensor_mw = 0.0;
  std::map<std::string, double> per_sensor_mw;
  double total_mw() const { return compute_mw + memory_mw + sensor_mw; }
  nlohmann::json to_json() const;
};

PowerBreakdown power_mw(const PowerProfile& profile, const PowerConstants& consts = {});

struct ReportEntry {
  std::string name;
  PowerBreakdown power;
  std::optional<double> accuracy;  // percent
  double macs = 0.0;
  double bytes = 0.0;
};

struct PowerReport {
  std::vector<ReportEntry> rows;  // sorted by name
  // ratio[a][b] = power(a) / power(b), a != b
  std::map<std::string, std::map<std::string, double>> ratios;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

PowerReport power_report(std::vector<ReportEntry> models);
// report.json, report.csv and a power-vs-accuracy scatter (when accuracies exist).
void write_power_report(const PowerReport& report, const std::filesystem::path& json_path);

}  // namespace skillsight::power
