#include "skillsight/power.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "skillsight/error.hpp"
#include "skillsight/plot.hpp"

namespace skillsight::power {
namespace {

// pJ/s -> mW
constexpr double kPicoJoulePerSecondToMilliWatt = 1e-9;

Count linear_values(Count n, Count in, Count out, bool bias) {
  return n * in + n * out + in * out + (bias ? out : 0);
}

Count norm_values(Count n, Count d) { return 2 * n * d + 2 * d; }

// scores, softmax and probability-weighted sum for `groups` groups of `size`
// tokens each.
Count attention_core_values(Count groups, Count size, Count d, Count heads) {
  const Count probs = heads * groups * size * size;
  const Count rows = groups * size * d;
  return (2 * rows + probs) + 2 * probs + (probs + rows + rows);
}

Count ffn_values(Count n, Count d, Count f) {
  return norm_values(n, d) + linear_values(n, d, f, true) + 2 * n * f + linear_values(n, f, d, true) +
         3 * n * d;
}

Count conv_out(Count size, Count kernel, Count stride, Count pad) {
  return (size + 2 * pad - kernel) / stride + 1;
}

const std::map<std::string, LayerKind>& kind_names() {
  static const std::map<std::string, LayerKind> m = {
      {"linear", LayerKind::kLinear},
      {"attention_block", LayerKind::kAttentionBlock},
      {"divided_attention_block", LayerKind::kDividedAttentionBlock},
      {"conv", LayerKind::kConv},
      {"mlp", LayerKind::kMlp},
      {"norm", LayerKind::kNorm},
      {"elementwise", LayerKind::kElementwise}};
  return m;
}

std::set<std::string> allowed_keys(LayerKind k) {
  switch (k) {
    case LayerKind::kLinear: return {"tokens", "in", "out", "bias"};
    case LayerKind::kAttentionBlock: return {"tokens", "width", "ffn", "heads"};
    case LayerKind::kDividedAttentionBlock: return {"frames", "patches", "width", "ffn", "heads"};
    case LayerKind::kConv:
      return {"batch", "in_channels", "out_channels", "kernel", "stride", "pad", "height", "width"};
    case LayerKind::kMlp: return {"tokens", "widths", "bias"};
    case LayerKind::kNorm: return {"tokens", "width"};
    case LayerKind::kElementwise: return {"tokens", "width", "inputs"};
  }
  return {};
}

void require_positive(Count v, const char* field, LayerKind k) {
  if (v <= 0) {
    throw ConfigError(std::string(to_string(k)) + " layer needs " + field + " > 0", field);
  }
}

void validate(const Layer& l) {
  require_positive(l.repeat, "repeat", l.kind);
  switch (l.kind) {
    case LayerKind::kLinear:
      require_positive(l.tokens, "tokens", l.kind);
      require_positive(l.in, "in", l.kind);
      require_positive(l.out, "out", l.kind);
      break;
    case LayerKind::kAttentionBlock:
      require_positive(l.tokens, "tokens", l.kind);
      require_positive(l.width, "width", l.kind);
      require_positive(l.ffn, "ffn", l.kind);
      require_positive(l.heads, "heads", l.kind);
      break;
    case LayerKind::kDividedAttentionBlock:
      require_positive(l.frames, "frames", l.kind);
      require_positive(l.patches, "patches", l.kind);
      require_positive(l.width, "width", l.kind);
      require_positive(l.ffn, "ffn", l.kind);
      require_positive(l.heads, "heads", l.kind);
      break;
    case LayerKind::kConv:
      require_positive(l.batch, "batch", l.kind);
      require_positive(l.in_channels, "in_channels", l.kind);
      require_positive(l.out_channels, "out_channels", l.kind);
      require_positive(l.kernel, "kernel", l.kind);
      require_positive(l.stride, "stride", l.kind);
      require_positive(l.height, "height", l.kind);
      require_positive(l.image_width, "width", l.kind);
      if (conv_out(l.height, l.kernel, l.stride, l.pad) <= 0 ||
          conv_out(l.image_width, l.kernel, l.stride, l.pad) <= 0) {
        throw ConfigError("conv kernel larger than its padded input", "kernel");
      }
      break;
    case LayerKind::kMlp:
      require_positive(l.tokens, "tokens", l.kind);
      if (l.widths.size() < 2) throw ConfigError("mlp layer needs at least two widths", "widths");
      for (Count w : l.widths) require_positive(w, "widths", l.kind);
      break;
    case LayerKind::kNorm:
    case LayerKind::kElementwise:
      require_positive(l.tokens, "tokens", l.kind);
      require_positive(l.width, "width", l.kind);
      break;
  }
}

}  // namespace

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kLinear: return "linear";
    case LayerKind::kAttentionBlock: return "attention_block";
    case LayerKind::kDividedAttentionBlock: return "divided_attention_block";
    case LayerKind::kConv: return "conv";
    case LayerKind::kMlp: return "mlp";
    case LayerKind::kNorm: return "norm";
    case LayerKind::kElementwise: return "elementwise";
  }
  return "?";
}

nlohmann::json Layer::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}};
  if (repeat != 1) j["repeat"] = repeat;
  switch (kind) {
    case LayerKind::kLinear:
      j.update({{"tokens", tokens}, {"in", in}, {"out", out}, {"bias", bias}});
      break;
    case LayerKind::kAttentionBlock:
      j.update({{"tokens", tokens}, {"width", width}, {"ffn", ffn}, {"heads", heads}});
      break;
    case LayerKind::kDividedAttentionBlock:
      j.update({{"frames", frames}, {"patches", patches}, {"width", width}, {"ffn", ffn}, {"heads", heads}});
      break;
    case LayerKind::kConv:
      j.update({{"batch", batch}, {"in_channels", in_channels}, {"out_channels", out_channels},
                {"kernel", kernel}, {"stride", stride}, {"pad", pad}, {"height", height},
                {"width", image_width}});
      break;
    case LayerKind::kMlp:
      j.update({{"tokens", tokens}, {"widths", widths}, {"bias", bias}});
      break;
    case LayerKind::kNorm:
      j.update({{"tokens", tokens}, {"width", width}});
      break;
    case LayerKind::kElementwise:
      j.update({{"tokens", tokens}, {"width", width}, {"inputs", inputs}});
      break;
  }
  return j;
}

Layer Layer::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw ConfigError("layer needs a string \"kind\"", "kind");
  }
  const std::string kind = j["kind"].get<std::string>();
  const auto it = kind_names().find(kind);
  if (it == kind_names().end()) throw ConfigError("unsupported layer kind '" + kind + "'", "kind");
  Layer l;
  l.kind = it->second;
  const auto allowed = allowed_keys(l.kind);
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") continue;
    if (key != "repeat" && !allowed.count(key)) {
      throw ConfigError("unknown key '" + key + "' for " + kind + " layer", key);
    }
    try {
      if (key == "repeat") l.repeat = v.get<Count>();
      else if (key == "tokens") l.tokens = v.get<Count>();
      else if (key == "in") l.in = v.get<Count>();
      else if (key == "out") l.out = v.get<Count>();
      else if (key == "bias") l.bias = v.get<bool>();
      else if (key == "widths") l.widths = v.get<std::vector<Count>>();
      else if (key == "width") (l.kind == LayerKind::kConv ? l.image_width : l.width) = v.get<Count>();
      else if (key == "ffn") l.ffn = v.get<Count>();
      else if (key == "heads") l.heads = v.get<Count>();
      else if (key == "frames") l.frames = v.get<Count>();
      else if (key == "patches") l.patches = v.get<Count>();
      else if (key == "inputs") l.inputs = v.get<Count>();
      else if (key == "batch") l.batch = v.get<Count>();
      else if (key == "in_channels") l.in_channels = v.get<Count>();
      else if (key == "out_channels") l.out_channels = v.get<Count>();
      else if (key == "kernel") l.kernel = v.get<Count>();
      else if (key == "stride") l.stride = v.get<Count>();
      else if (key == "pad") l.pad = v.get<Count>();
      else if (key == "height") l.height = v.get<Count>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("field '" + key + "' has the wrong type", key);
    }
  }
  validate(l);
  return l;
}

nlohmann::json Architecture::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& l : layers) layers_json.push_back(l.to_json());
  return {{"name", name}, {"layers", layers_json}};
}

Architecture Architecture::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("architecture must be an object", "");
  for (const auto& [key, _] : j.items()) {
    if (key != "name" && key != "layers") throw ConfigError("unknown key '" + key + "'", key);
  }
  Architecture a;
  a.name = j.value("name", std::string("model"));
  if (j.contains("layers")) {
    if (!j["layers"].is_array()) throw ConfigError("layers must be an array", "layers");
    for (std::size_t i = 0; i < j["layers"].size(); ++i) {
      try {
        a.layers.push_back(Layer::from_json(j["layers"][i]));
      } catch (const ConfigError& e) {
        throw e.within("layers[" + std::to_string(i) + "]");
      }
    }
  }
  return a;
}

Architecture Architecture::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read architecture file " + path.string(), "arch");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed architecture file: ") + e.what(), "arch");
  }
}

Count count_macs(const Layer& l) {
  Count per = 0;
  switch (l.kind) {
    case LayerKind::kLinear:
      per = l.tokens * l.in * l.out;
      break;
    case LayerKind::kAttentionBlock: {
      const Count n = l.tokens, d = l.width;
      per = 3 * n * d * d + n * n * d + n * n * d + n * d * d + 2 * n * d * l.ffn;
      break;
    }
    case LayerKind::kDividedAttentionBlock: {
      const Count f = l.frames, p = l.patches, d = l.width;
      const Count np = f * p, ns = f * (1 + p), n = 1 + f * p;
      const Count temporal = 3 * np * d * d + 2 * p * f * f * d + np * d * d + np * d * d;
      const Count spatial = 3 * ns * d * d + 2 * f * (1 + p) * (1 + p) * d + ns * d * d;
      per = temporal + spatial + 2 * n * d * l.ffn;
      break;
    }
    case LayerKind::kConv: {
      const Count oh = conv_out(l.height, l.kernel, l.stride, l.pad);
      const Count ow = conv_out(l.image_width, l.kernel, l.stride, l.pad);
      per = l.batch * oh * ow * l.out_channels * l.in_channels * l.kernel * l.kernel;
      break;
    }
    case LayerKind::kMlp:
      for (std::size_t i = 0; i + 1 < l.widths.size(); ++i) per += l.tokens * l.widths[i] * l.widths[i + 1];
      break;
    case LayerKind::kNorm:
    case LayerKind::kElementwise:
      per = 0;
      break;
  }
  return per * l.repeat;
}

Count count_macs(const Architecture& arch) {
  Count total = 0;
  for (const auto& l : arch.layers) total += count_macs(l);
  return total;
}

Count estimate_bytes(const Layer& l, int bytes_per_value) {
  Count values = 0;
  switch (l.kind) {
    case LayerKind::kLinear:
      values = linear_values(l.tokens, l.in, l.out, l.bias);
      break;
    case LayerKind::kAttentionBlock: {
      const Count n = l.tokens, d = l.width;
      values = norm_values(n, d) + linear_values(n, d, 3 * d, true) +
               attention_core_values(1, n, d, l.heads) + linear_values(n, d, d, true) + 3 * n * d +
               ffn_values(n, d, l.ffn);
      break;
    }
    case LayerKind::kDividedAttentionBlock: {
      const Count f = l.frames, p = l.patches, d = l.width;
      const Count np = f * p, ns = f * (1 + p), n = 1 + f * p;
      const Count temporal = norm_values(np, d) + linear_values(np, d, 3 * d, true) +
                             attention_core_values(p, f, d, l.heads) + linear_values(np, d, d, true) +
                             linear_values(np, d, d, true) + 3 * np * d;
      const Count spatial = norm_values(ns, d) + linear_values(ns, d, 3 * d, true) +
                            attention_core_values(f, 1 + p, d, l.heads) + linear_values(ns, d, d, true) +
                            (f * d + d) + 3 * n * d;
      values = temporal + spatial + ffn_values(n, d, l.ffn);
      break;
    }
    case LayerKind::kConv: {
      const Count oh = conv_out(l.height, l.kernel, l.stride, l.pad);
      const Count ow = conv_out(l.image_width, l.kernel, l.stride, l.pad);
      values = l.batch * l.in_channels * l.height * l.image_width + l.batch * l.out_channels * oh * ow +
               l.in_channels * l.kernel * l.kernel * l.out_channels + l.out_channels;
      break;
    }
    case LayerKind::kMlp:
      for (std::size_t i = 0; i + 1 < l.widths.size(); ++i) {
        values += linear_values(l.tokens, l.widths[i], l.widths[i + 1], l.bias);
        if (i + 2 < l.widths.size()) values += 2 * l.tokens * l.widths[i + 1];
      }
      break;
    case LayerKind::kNorm:
      values = norm_values(l.tokens, l.width);
      break;
    case LayerKind::kElementwise:
      values = (l.inputs + 1) * l.tokens * l.width;
      break;
  }
  return values * bytes_per_value * l.repeat;
}

Count estimate_bytes(const Architecture& arch, int bytes_per_value) {
  Count total = 0;
  for (const auto& l : arch.layers) total += estimate_bytes(l, bytes_per_value);
  return total;
}

void PowerConstants::validate() const {
  if (!(alpha_pj_per_mac > 0.0)) throw ConfigError("alpha must be > 0", "alpha_pj_per_mac");
  if (!(beta_pj_per_byte > 0.0)) throw ConfigError("beta must be > 0", "beta_pj_per_byte");
  for (const auto& [k, v] : gamma_mw) {
    if (!(v > 0.0)) throw ConfigError("sensor power must be > 0", "gamma_mw." + k);
  }
}

nlohmann::json PowerConstants::to_json() const {
  return {{"alpha_pj_per_mac", alpha_pj_per_mac}, {"beta_pj_per_byte", beta_pj_per_byte}, {"gamma_mw", gamma_mw}};
}

PowerProfile profile_for(const Architecture& arch, const std::map<std::string, double>& sensor_duty,
                         double interval_s) {
  PowerProfile p;
  p.macs = static_cast<double>(count_macs(arch));
  p.bytes = static_cast<double>(estimate_bytes(arch));
  p.interval_s = interval_s;
  p.sensor_duty = sensor_duty;
  return p;
}

nlohmann::json PowerBreakdown::to_json() const {
  return {{"compute_mw", compute_mw}, {"memory_mw", memory_mw}, {"sensor_mw", sensor_mw},
          {"per_sensor_mw", per_sensor_mw}, {"total_mw", total_mw()}};
}

PowerBreakdown power_mw(const PowerProfile& profile, const PowerConstants& consts) {
  consts.validate();
  if (!(profile.interval_s > 0.0)) throw ConfigError("inference interval must be > 0", "interval_s");
  if (profile.macs < 0.0 || profile.bytes < 0.0) throw ConfigError("counts must be >= 0", "macs");
  PowerBreakdown b;
  b.compute_mw = consts.alpha_pj_per_mac * profile.macs / profile.interval_s * kPicoJoulePerSecondToMilliWatt;
  b.memory_mw = consts.beta_pj_per_byte * profile.bytes / profile.interval_s * kPicoJoulePerSecondToMilliWatt;
  for (const auto& [sensor, duty] : profile.sensor_duty) {
    const auto it = consts.gamma_mw.find(sensor);
    if (it == consts.gamma_mw.end()) throw ConfigError("unknown sensor " + sensor, "sensors." + sensor);
    if (!(duty >= 0.0 && duty <= 1.0)) throw ConfigError("sensor duty must be in [0,1]", "sensors." + sensor);
    b.per_sensor_mw[sensor] = it->second * duty;
    b.sensor_mw += it->second * duty;
  }
  return b;
}

nlohmann::json PowerReport::to_json() const {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json m = {{"name", r.name}, {"power", r.power.to_json()}, {"power_mw", r.power.total_mw()},
                        {"macs", r.macs}, {"bytes", r.bytes}};
    m["accuracy"] = r.accuracy ? nlohmann::json(*r.accuracy) : nlohmann::json(nullptr);
    models.push_back(m);
  }
  return {{"models", models}, {"power_ratios", ratios}};
}

std::string PowerReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "name,power_mw,compute_mw,memory_mw,sensor_mw,macs,bytes,accuracy\n";
  for (const auto& r : rows) {
    os << r.name << ',' << r.power.total_mw() << ',' << r.power.compute_mw << ',' << r.power.memory_mw
       << ',' << r.power.sensor_mw << ',' << r.macs << ',' << r.bytes << ',';
    if (r.accuracy) os << *r.accuracy;
    os << '\n';
  }
  return os.str();
}

PowerReport power_report(std::vector<ReportEntry> models) {
  if (models.empty()) throw ConfigError("power_report needs at least one model", "models");
  std::sort(models.begin(), models.end(),
            [](const ReportEntry& a, const ReportEntry& b) { return a.name < b.name; });
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (models[i].name == models[i - 1].name) throw ConfigError("duplicate model " + models[i].name, "models");
  }
  PowerReport r;
  r.rows = std::move(models);
  for (const auto& a : r.rows) {
    for (const auto& b : r.rows) {
      if (a.name != b.name) r.ratios[a.name][b.name] = a.power.total_mw() / b.power.total_mw();
    }
  }
  return r;
}

void write_power_report(const PowerReport& report, const std::filesystem::path& json_path) {
  if (json_path.has_parent_path()) std::filesystem::create_directories(json_path.parent_path());
  std::ofstream(json_path) << report.to_json().dump(2) << '\n';
  auto csv = json_path;
  csv.replace_extension(".csv");
  std::ofstream(csv) << report.to_csv();
  std::vector<double> x, y;
  for (const auto& r : report.rows) {
    if (!r.accuracy) continue;
    x.push_back(r.power.total_mw());
    y.push_back(*r.accuracy);
  }
  if (!x.empty()) {
    auto png = json_path;
    png.replace_extension(".png");
    write_scatter_png(png, x, y, true);
  }
}

}  // namespace skillsight::power
