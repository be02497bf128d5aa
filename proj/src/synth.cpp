#include "skillsight/synth.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include "skillsight/error.hpp"
#include "skillsight/image.hpp"

namespace skillsight {
namespace {

using Rng = std::mt19937_64;
using Eigen::AngleAxisd;
using Eigen::Matrix3d;

constexpr double kDeg = M_PI / 180.0;
constexpr double kBlobRadiusDeg = 7.0;

double azimuth_of(const Vector3d& d) { return std::atan2(d.x(), d.z()) / kDeg; }
double elevation_of(const Vector3d& d) { return std::atan2(d.y(), std::hypot(d.x(), d.z())) / kDeg; }

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}
double normal(Rng& rng, double mean, double std) {
  return std == 0.0 ? mean : std::normal_distribution<double>(mean, std)(rng);
}

template <typename Map>
std::string sample_key(const Map& probs, Rng& rng) {
  double total = 0.0;
  for (const auto& [_, p] : probs) total += p;
  double r = uniform(rng, 0.0, total);
  for (const auto& [k, p] : probs) {
    if (r < p) return k;
    r -= p;
  }
  return probs.rbegin()->first;
}

void check_probabilities(const std::map<std::string, double>& m, const std::string& field,
                         const std::vector<std::string>& allowed) {
  double total = 0.0;
  for (const auto& [k, p] : m) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ConfigError("unknown region " + k, field + "." + k);
    }
    if (!(p >= 0.0)) throw ConfigError("probabilities must be >= 0", field + "." + k);
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("probabilities must sum to 1", field);
}

using Color = std::array<std::uint8_t, 3>;
const std::array<Color, 4> kClassColors = {{{220, 40, 40}, {40, 80, 220}, {40, 170, 60}, {230, 200, 40}}};
const Color kNeutral = {128, 128, 128};

struct Blob {
  double az = 0.0;  // scene angles relative to the subject's base heading
  double el = 0.0;
  Color color{};
  int color_index = -1;  // class colour index, -1 for neutral
};

struct HeadMotion {
  double base_yaw = 0.0;  // radians
  double amp = 0.0;       // degrees
  double f_yaw = 0.1, f_pitch = 0.07, ph_yaw = 0.0, ph_pitch = 0.0;
  Vector3d start = Vector3d::Zero();
  Vector3d velocity = Vector3d::Zero();

  Matrix3d rotation(double t) const {
    const double yaw = base_yaw + amp * kDeg * std::sin(2 * M_PI * f_yaw * t + ph_yaw);
    const double pitch = 0.5 * amp * kDeg * std::sin(2 * M_PI * f_pitch * t + ph_pitch);
    return (AngleAxisd(yaw, Vector3d::UnitY()) * AngleAxisd(-pitch, Vector3d::UnitX())).toRotationMatrix();
  }
  Vector3d position(double t) const {
    return start + velocity * t + Vector3d(0, 0.01 * std::sin(2 * M_PI * 1.8 * t), 0);
  }
  // World direction of a scene point given by angles relative to the base heading.
  Vector3d scene_to_world(double az, double el) const {
    return AngleAxisd(base_yaw, Vector3d::UnitY()) * direction_from_angles(az, el);
  }
};

// Scene-angle waypoint of the gaze trace.
struct Waypoint {
  double t0, t1;  // fixation interval
  double az, el, depth;
};

std::vector<Waypoint> plan_fixations(const ClassProfile& prof, const SubtaskModifier& mod,
                                     const std::vector<Blob>& blobs, int k_classes, double duration,
                                     Rng& rng) {
  std::vector<Waypoint> plan;
  double az = blobs[0].az + normal(rng, 0, 1.0);
  double el = blobs[0].el + normal(rng, 0, 1.0);
  int on_blob = 0;  // blob under the current fixation, -1 if none
  double t = 0.0;
  while (t < duration) {
    double scale = mod.fixation_duration_scale;
    if (on_blob >= 0 && blobs[static_cast<std::size_t>(on_blob)].color_index >= 0 && k_classes > 1) {
      const double c = blobs[static_cast<std::size_t>(on_blob)].color_index / double(k_classes - 1);
      scale *= 1.0 + prof.color_duration_swing * mod.color_swing_sign * (2.0 * c - 1.0);
    }
    const double fix = std::max(0.12, normal(rng, prof.fixation_duration_mean_s * scale,
                                             prof.fixation_duration_std_s));
    const double depth = std::clamp(normal(rng, prof.depth_mean_m, prof.depth_std_m), 0.2, 5.0);
    plan.push_back({t, t + fix, az, el, depth});
    t += fix;

    // Next target: the target blob or a random distractor.
    const bool to_target = sample_key(prof.roi_dwell, rng) == "target" || blobs.size() == 1;
    const std::size_t b =
        to_target ? 0 : 1 + static_cast<std::size_t>(rng() % (blobs.size() - 1));
    const double amp = std::max(
        2.0, normal(rng, prof.saccade_amplitude_mean_deg * mod.saccade_amplitude_scale,
                    prof.saccade_amplitude_std_deg));
    const double dx = blobs[b].az - az, dy = blobs[b].el - el;
    const double dist = std::hypot(dx, dy);
    double naz, nel;
    if (dist <= amp) {
      naz = blobs[b].az + normal(rng, 0, 1.0);
      nel = blobs[b].el + normal(rng, 0, 1.0);
      on_blob = static_cast<int>(b);
    } else {
      on_blob = -1;
      const double heading = std::atan2(dy, dx) + normal(rng, 0, 20.0 * kDeg);
      naz = az + amp * std::cos(heading);
      nel = el + amp * std::sin(heading);
    }
    naz = std::clamp(naz, -40.0, 40.0);
    nel = std::clamp(nel, -25.0, 25.0);
    const double sacc = std::max(1.0 / 60.0, std::hypot(naz - az, nel - el) / prof.saccade_speed_deg_s);
    t += sacc;
    az = naz;
    el = nel;
  }
  return plan;
}

// Scene angles and depth at time t: fixed inside fixations, linear in between.
void trace_at(const std::vector<Waypoint>& plan, double t, double& az, double& el, double& depth) {
  auto it = std::upper_bound(plan.begin(), plan.end(), t,
                             [](double v, const Waypoint& w) { return v < w.t0; });
  if (it == plan.begin()) {
    az = plan.front().az, el = plan.front().el, depth = plan.front().depth;
    return;
  }
  const Waypoint& a = *(it - 1);
  if (t <= a.t1 || it == plan.end()) {
    az = a.az, el = a.el, depth = a.depth;
    return;
  }
  const Waypoint& b = *it;
  const double f = (t - a.t1) / (b.t0 - a.t1);
  az = a.az + f * (b.az - a.az);
  el = a.el + f * (b.el - a.el);
  depth = a.depth + f * (b.depth - a.depth);
}

std::vector<Blob> place_blobs(const SynthTaskSpec& spec, const ClassProfile& prof, int latent,
                              Rng& rng) {
  std::vector<Blob> blobs;
  const std::string zone = sample_key(prof.target_zone, rng);
  const double lo = zone == "left" ? -30.0 : zone == "center" ? -10.0 : 10.0;
  blobs.push_back({uniform(rng, lo, lo + 20.0), uniform(rng, -15.0, 15.0), kClassColors[latent], latent});
  for (int i = 1; i < spec.n_blobs; ++i) {
    Blob b;
    for (int attempt = 0; attempt < 100; ++attempt) {
      b.az = uniform(rng, -32.0, 32.0);
      b.el = uniform(rng, -18.0, 18.0);
      const bool clear = std::all_of(blobs.begin(), blobs.end(), [&](const Blob& o) {
        return std::hypot(o.az - b.az, o.el - b.el) > 2.0 * kBlobRadiusDeg;
      });
      if (clear) break;
    }
    switch (spec.kind) {
      case SynthTask::kVisuallySeparable:
        b.color = kNeutral;
        break;
      case SynthTask::kGazeSeparable:
      case SynthTask::kDistillation:
        b.color_index = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.k_classes));
        b.color = kClassColors[b.color_index];
        break;
    }
    blobs.push_back(b);
  }
  if (spec.kind == SynthTask::kGazeSeparable) {
    blobs[0].color_index = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.k_classes));
    blobs[0].color = kClassColors[blobs[0].color_index];
  }
  return blobs;
}

Image render_frame(const SynthTaskSpec& spec, const std::vector<Blob>& blobs,
                   const HeadMotion& head, double t, int scenario_index, Rng& rng) {
  const int n = spec.image_size;
  Image img(n, n);
  const Color base = scenario_index % 2 == 0 ? Color{90, 140, 90} : Color{170, 150, 120};
  const Matrix3d r = head.rotation(t);
  // Horizon: where scene elevation 0 straight ahead lands in the image.
  const Vector3d horizon = r.transpose() * head.scene_to_world(0.0, 0.0);
  const double horizon_v = project_to_image(azimuth_of(horizon), elevation_of(horizon)).y() * n;
  for (int y = 0; y < n; ++y) {
    const double shade = y < horizon_v ? 1.1 : 0.8;
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = base[c] * shade + uniform(rng, -8.0, 8.0);
        img.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  const double radius_px = kBlobRadiusDeg / kSynthFovDeg * n;
  for (const auto& b : blobs) {
    const Vector3d d = r.transpose() * head.scene_to_world(b.az, b.el);
    const Vector2d uv = project_to_image(azimuth_of(d), elevation_of(d)) * n;
    for (int y = std::max(0, static_cast<int>(uv.y() - radius_px - 1));
         y <= std::min(n - 1, static_cast<int>(uv.y() + radius_px + 1)); ++y) {
      for (int x = std::max(0, static_cast<int>(uv.x() - radius_px - 1));
           x <= std::min(n - 1, static_cast<int>(uv.x() + radius_px + 1)); ++x) {
        if (std::hypot(x + 0.5 - uv.x(), y + 0.5 - uv.y()) > radius_px) continue;
        for (int c = 0; c < 3; ++c) {
          const double v = b.color[c] + uniform(rng, -8.0, 8.0);
          img.at(x, y)[c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  return img;
}

}  // namespace

Vector3d direction_from_angles(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * kDeg, el = elevation_deg * kDeg;
  return {std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el)};
}

Vector2d project_to_image(double azimuth_deg, double elevation_deg) {
  return {0.5 + azimuth_deg / kSynthFovDeg, 0.5 - elevation_deg / kSynthFovDeg};
}

GazeSequence planted_event_trace(const PlantedScript& script) {
  if (!(script.rate_hz > 0.0)) throw ConfigError("rate_hz must be > 0", "rate_hz");
  if (script.duration_s < 0.0) throw ConfigError("duration_s must be >= 0", "duration_s");
  for (std::size_t i = 0; i < script.fixations.size(); ++i) {
    const auto& f = script.fixations[i];
    if (f.end_s < f.start_s) throw ConfigError("fixation " + std::to_string(i) + " ends before it starts");
    if (i > 0 && f.start_s < script.fixations[i - 1].end_s) {
      throw ConfigError("fixations " + std::to_string(i - 1) + " and " + std::to_string(i) + " overlap");
    }
  }
  std::vector<Waypoint> plan;
  for (const auto& f : script.fixations) {
    plan.push_back({f.start_s, f.end_s, f.azimuth_deg, f.elevation_deg, f.depth_m});
  }
  if (plan.empty()) plan.push_back({0.0, script.duration_s, 0.0, 0.0, 1.0});

  Rng rng(script.seed);
  GazeSequence seq;
  seq.rate_hz = script.rate_hz;
  const auto n = static_cast<long>(std::floor(script.duration_s * script.rate_hz + 1e-9)) + 1;
  const Vector3d head(0.0, 1.6, 0.0);
  for (long k = 0; k < n; ++k) {
    GazeSample s;
    s.time_s = static_cast<double>(k) / script.rate_hz;
    double az, el, depth;
    trace_at(plan, s.time_s, az, el, depth);
    az = normal(rng, az, script.noise_deg);
    el = normal(rng, el, script.noise_deg);
    s.dir3d = direction_from_angles(az, el);
    s.g2d = project_to_image(az, el).cwiseMax(0.0).cwiseMin(1.0);
    s.depth_m = depth;
    s.trans = head;
    s.fix3d = head + s.dir3d * depth;
    seq.samples.push_back(s);
  }
  return seq;
}

SynthTask parse_synth_task(const std::string& s) {
  if (s == "gaze-separable") return SynthTask::kGazeSeparable;
  if (s == "visually-separable") return SynthTask::kVisuallySeparable;
  if (s == "distillation") return SynthTask::kDistillation;
  throw ConfigError("unknown task kind " + s, "task");
}

std::string to_string(SynthTask t) {
  switch (t) {
    case SynthTask::kGazeSeparable: return "gaze-separable";
    case SynthTask::kVisuallySeparable: return "visually-separable";
    case SynthTask::kDistillation: return "distillation";
  }
  return "?";
}

void ClassProfile::validate() const {
  auto nonneg = [](double v, const char* field) {
    if (!(v >= 0.0)) throw ConfigError(std::string(field) + " must be >= 0", field);
  };
  nonneg(fixation_duration_std_s, "fixation_duration_std_s");
  nonneg(saccade_amplitude_std_deg, "saccade_amplitude_std_deg");
  nonneg(depth_std_m, "depth_std_m");
  nonneg(head_motion_deg, "head_motion_deg");
  nonneg(noise_deg, "noise_deg");
  if (!(fixation_duration_mean_s > 0.0)) {
    throw ConfigError("fixation_duration_mean_s must be > 0", "fixation_duration_mean_s");
  }
  if (!(saccade_speed_deg_s > 0.0)) throw ConfigError("saccade_speed_deg_s must be > 0", "saccade_speed_deg_s");
  if (!(depth_mean_m > 0.0)) throw ConfigError("depth_mean_m must be > 0", "depth_mean_m");
  if (!(color_duration_swing >= 0.0 && color_duration_swing < 1.0)) {
    throw ConfigError("color_duration_swing must be in [0, 1)", "color_duration_swing");
  }
  for (std::size_t i = 0; i < subtask_modifiers.size(); ++i) {
    const auto& m = subtask_modifiers[i];
    const std::string at = "subtask_modifiers[" + std::to_string(i) + "].";
    if (!(m.fixation_duration_scale > 0.0)) {
      throw ConfigError("fixation_duration_scale must be > 0", at + "fixation_duration_scale");
    }
    if (!(m.saccade_amplitude_scale > 0.0)) {
      throw ConfigError("saccade_amplitude_scale must be > 0", at + "saccade_amplitude_scale");
    }
    if (!(std::abs(m.color_swing_sign) <= 1.0)) {
      throw ConfigError("color_swing_sign must be in [-1, 1]", at + "color_swing_sign");
    }
  }
  check_probabilities(roi_dwell, "roi_dwell", {"target", "distractor"});
  check_probabilities(target_zone, "target_zone", {"left", "center", "right"});
}

double ClassProfile::saccade_rate_hz() const {
  return 1.0 / (fixation_duration_mean_s + saccade_amplitude_mean_deg / saccade_speed_deg_s);
}

nlohmann::json ClassProfile::to_json() const {
  nlohmann::json mods = nlohmann::json::array();
  for (const auto& m : subtask_modifiers) {
    mods.push_back({{"fixation_duration_scale", m.fixation_duration_scale},
                    {"saccade_amplitude_scale", m.saccade_amplitude_scale},
                    {"color_swing_sign", m.color_swing_sign}});
  }
  return {{"fixation_duration_mean_s", fixation_duration_mean_s},
          {"fixation_duration_std_s", fixation_duration_std_s},
          {"saccade_amplitude_mean_deg", saccade_amplitude_mean_deg},
          {"saccade_amplitude_std_deg", saccade_amplitude_std_deg},
          {"saccade_speed_deg_s", saccade_speed_deg_s},
          {"depth_mean_m", depth_mean_m},
          {"depth_std_m", depth_std_m},
          {"head_motion_deg", head_motion_deg},
          {"noise_deg", noise_deg},
          {"roi_dwell", roi_dwell},
          {"target_zone", target_zone},
          {"subtask_modifiers", mods},
          {"color_duration_swing", color_duration_swing}};
}

ClassProfile ClassProfile::from_json(const nlohmann::json& j) {
  ClassProfile p;
  if (!j.is_object()) throw ConfigError("profile must be an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "fixation_duration_mean_s") p.fixation_duration_mean_s = v.get<double>();
      else if (key == "fixation_duration_std_s") p.fixation_duration_std_s = v.get<double>();
      else if (key == "saccade_amplitude_mean_deg") p.saccade_amplitude_mean_deg = v.get<double>();
      else if (key == "saccade_amplitude_std_deg") p.saccade_amplitude_std_deg = v.get<double>();
      else if (key == "saccade_speed_deg_s") p.saccade_speed_deg_s = v.get<double>();
      else if (key == "depth_mean_m") p.depth_mean_m = v.get<double>();
      else if (key == "depth_std_m") p.depth_std_m = v.get<double>();
      else if (key == "head_motion_deg") p.head_motion_deg = v.get<double>();
      else if (key == "noise_deg") p.noise_deg = v.get<double>();
      else if (key == "roi_dwell") p.roi_dwell = v.get<std::map<std::string, double>>();
      else if (key == "target_zone") p.target_zone = v.get<std::map<std::string, double>>();
      else if (key == "color_duration_swing") p.color_duration_swing = v.get<double>();
      else if (key == "subtask_modifiers") {
        p.subtask_modifiers.clear();
        for (const auto& m : v) {
          SubtaskModifier sm;
          sm.fixation_duration_scale = m.value("fixation_duration_scale", 1.0);
          sm.saccade_amplitude_scale = m.value("saccade_amplitude_scale", 1.0);
          sm.color_swing_sign = m.value("color_swing_sign", 1.0);
          p.subtask_modifiers.push_back(sm);
        }
      } else {
        throw ConfigError("unknown profile key " + key, key);
      }
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("profile field has the wrong type", key);
    }
  }
  p.validate();
  return p;
}

void SynthTaskSpec::validate() const {
  if (n_per_class < 1) throw ConfigError("n_per_class must be >= 1", "n_per_class");
  if (k_classes < 2 || k_classes > static_cast<int>(kClassColors.size())) {
    throw ConfigError("k_classes must be in [2, 4]", "k_classes");
  }
  if (n_subtasks < 1) throw ConfigError("n_subtasks must be >= 1", "n_subtasks");
  if (scenarios.empty()) throw ConfigError("at least one scenario is required", "scenarios");
  if (!(duration_s > 0.0) || !(gaze_rate_hz > 0.0) || !(frame_rate_hz > 0.0)) {
    throw ConfigError("duration and rates must be > 0", "duration_s");
  }
  if (image_size < 8) throw ConfigError("image_size must be >= 8", "image_size");
  if (n_blobs < 1) throw ConfigError("n_blobs must be >= 1", "n_blobs");
  if (label_noise < 0.0 || label_noise >= 1.0) throw ConfigError("label_noise must be in [0,1)", "label_noise");
  if (train_fraction <= 0.0 || val_fraction < 0.0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("invalid split fractions", "train_fraction");
  }
}

nlohmann::json SynthTaskSpec::to_json() const {
  return {{"task", to_string(kind)},       {"n_per_class", n_per_class},
          {"k_classes", k_classes},        {"n_subtasks", n_subtasks},
          {"seed", seed},                  {"scenarios", scenarios},
          {"duration_s", duration_s},      {"gaze_rate_hz", gaze_rate_hz},
          {"frame_rate_hz", frame_rate_hz}, {"image_size", image_size},
          {"n_blobs", n_blobs},            {"label_noise", label_noise},
          {"blink_rate_hz", blink_rate_hz}, {"train_fraction", train_fraction},
          {"val_fraction", val_fraction}};
}

std::vector<ClassProfile> default_profiles(const SynthTaskSpec& spec) {
  std::vector<ClassProfile> out;
  const int k = spec.k_classes;
  for (int c = 0; c < k; ++c) {
    const double f = k > 1 ? static_cast<double>(c) / (k - 1) : 0.0;  // 0 = novice, 1 = expert
    ClassProfile p;
    switch (spec.kind) {
      case SynthTask::kGazeSeparable:
        p.fixation_duration_mean_s = 0.25 + 0.3 * f;
        p.fixation_duration_std_s = 0.06;
        p.saccade_amplitude_mean_deg = 14.0 - 7.0 * f;
        p.saccade_amplitude_std_deg = 3.0;
        p.depth_mean_m = 1.1 + 0.3 * f;
        break;
      case SynthTask::kVisuallySeparable:
        break;
      case SynthTask::kDistillation: {
        // Gaze dynamics are class-independent except for how long each blob
        // colour is looked at, and the second subtask flips that link. Gaze
        // alone only hints at the target colour; the camera sees it exactly.
        p.fixation_duration_mean_s = 0.36;
        p.fixation_duration_std_s = 0.08;
        p.saccade_amplitude_mean_deg = 10.0;
        p.depth_mean_m = 1.2 + 0.1 * f;
        p.depth_std_m = 0.25;
        const double bias = 0.6;
        p.target_zone = {{"left", (1.0 - f) * bias + f * (1 - bias) / 2},
                         {"center", (1 - bias) / 2},
                         {"right", f * bias + (1.0 - f) * (1 - bias) / 2}};
        p.color_duration_swing = 0.3;
        p.subtask_modifiers = {{1.0, 1.0, 1.0}, {1.0, 1.6, -1.0}};
        break;
      }
    }
    out.push_back(p);
  }
  return out;
}

std::vector<ClassProfile> load_profiles(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read profile file " + path.string(), "profiles");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("malformed profile file: ") + e.what(), "profiles");
  }
  if (!j.is_object() || !j.contains("profiles") || !j["profiles"].is_array()) {
    throw ConfigError("profile file needs a \"profiles\" array", "profiles");
  }
  std::vector<ClassProfile> out;
  for (std::size_t i = 0; i < j["profiles"].size(); ++i) {
    try {
      out.push_back(ClassProfile::from_json(j["profiles"][i]));
    } catch (const ConfigError& e) {
      throw e.within("profiles[" + std::to_string(i) + "]");
    }
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 over a counter derived from both inputs.
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + (index + 1) * 0xD1B54A32D192ED03ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<SynthRecordingInfo> generate_dataset(const SynthTaskSpec& spec,
                                                 const std::vector<ClassProfile>& profiles,
                                                 const std::filesystem::path& out) {
  spec.validate();
  if (static_cast<int>(profiles.size()) != spec.k_classes) {
    throw ConfigError("need one profile per class (" + std::to_string(spec.k_classes) + "), got " +
                          std::to_string(profiles.size()),
                      "profiles");
  }
  for (const auto& p : profiles) p.validate();

  std::filesystem::create_directories(out);
  DatasetInfo info;
  info.scenarios = spec.scenarios;
  for (int s = 0; s < spec.n_subtasks; ++s) info.subtasks.push_back("subtask_" + std::to_string(s));
  info.k_classes = spec.k_classes;
  save_dataset_info(info, out);

  const int n_train = std::max(1, static_cast<int>(std::lround(spec.train_fraction * spec.n_per_class)));
  const int n_val = static_cast<int>(std::lround(spec.val_fraction * spec.n_per_class));

  std::vector<SynthRecordingInfo> infos;
  const int total = spec.k_classes * spec.n_per_class;
  for (int i = 0; i < total; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
    SynthRecordingInfo ri;
    const int latent = i % spec.k_classes;
    const int within = i / spec.k_classes;
    const int scenario_index = within % static_cast<int>(spec.scenarios.size());
    char id[32];
    std::snprintf(id, sizeof(id), "rec_%04d", i);
    ri.id = id;
    ri.latent_class = latent;
    ri.scenario = spec.scenarios[static_cast<std::size_t>(scenario_index)];
    ri.split = within < n_train ? "train" : within < n_train + n_val ? "val" : "test";
    ri.subtask = static_cast<int>(rng() % static_cast<std::uint64_t>(spec.n_subtasks));
    ri.label = latent;
    if (uniform(rng, 0.0, 1.0) < spec.label_noise) {
      ri.label = (latent + 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(spec.k_classes - 1))) %
                 spec.k_classes;
    }

    const ClassProfile& prof = profiles[static_cast<std::size_t>(latent)];
    const SubtaskModifier mod = static_cast<std::size_t>(ri.subtask) < prof.subtask_modifiers.size()
                                    ? prof.subtask_modifiers[static_cast<std::size_t>(ri.subtask)]
                                    : SubtaskModifier{};
    const std::vector<Blob> blobs = place_blobs(spec, prof, latent, rng);
    HeadMotion head;
    head.base_yaw = uniform(rng, -M_PI, M_PI);
    head.amp = prof.head_motion_deg;
    head.f_yaw = uniform(rng, 0.05, 0.15);
    head.f_pitch = uniform(rng, 0.04, 0.1);
    head.ph_yaw = uniform(rng, 0.0, 2 * M_PI);
    head.ph_pitch = uniform(rng, 0.0, 2 * M_PI);
    head.start = Vector3d(uniform(rng, -5, 5), 1.6 + uniform(rng, -0.1, 0.1), uniform(rng, -5, 5));
    head.velocity = head.scene_to_world(0.0, 0.0) * uniform(rng, 0.0, 0.3);
    const auto plan = plan_fixations(prof, mod, blobs, spec.k_classes, spec.duration_s, rng);

    Recording rec;
    rec.id = ri.id;
    rec.scenario = ri.scenario;
    rec.subtask = info.subtasks[static_cast<std::size_t>(ri.subtask)];
    rec.skill = ri.label;
    rec.k_classes = spec.k_classes;
    rec.split = ri.split;
    rec.frame_rate_hz = spec.frame_rate_hz;
    rec.gaze.rate_hz = spec.gaze_rate_hz;
    const auto n = static_cast<long>(std::floor(spec.duration_s * spec.gaze_rate_hz + 1e-9)) + 1;
    long blink_left = 0;
    for (long k = 0; k < n; ++k) {
      GazeSample s;
      s.time_s = static_cast<double>(k) / spec.gaze_rate_hz;
      double az, el, depth;
      trace_at(plan, s.time_s, az, el, depth);
      const Matrix3d r = head.rotation(s.time_s);
      const Vector3d world = head.scene_to_world(az, el);
      const Vector3d wearer = r.transpose() * world;
      const double waz = normal(rng, azimuth_of(wearer), prof.noise_deg);
      const double wel = normal(rng, elevation_of(wearer), prof.noise_deg);
      s.dir3d = direction_from_angles(waz, wel);
      s.g2d = project_to_image(waz, wel).cwiseMax(0.0).cwiseMin(1.0);
      s.depth_m = std::max(0.05, depth + normal(rng, 0.0, 0.01));
      s.rot = Quaterniond(r).normalized();
      s.trans = head.position(s.time_s);
      s.fix3d = s.trans + (r * s.dir3d) * s.depth_m;
      if (k > 0 && blink_left == 0 && uniform(rng, 0.0, 1.0) < spec.blink_rate_hz / spec.gaze_rate_hz) {
        blink_left = 3 + static_cast<long>(rng() % 3);
      }
      if (blink_left > 0) {
        s.valid = false;
        --blink_left;
      }
      rec.gaze.samples.push_back(s);
    }

    std::vector<Image> frames;
    std::vector<double> frame_times;
    Rng pixel_rng(derive_seed(spec.seed ^ 0xF00DULL, static_cast<std::uint64_t>(i)));
    const auto nf = static_cast<long>(std::floor(spec.duration_s * spec.frame_rate_hz + 1e-9)) + 1;
    for (long k = 0; k < nf; ++k) {
      const double t = static_cast<double>(k) / spec.frame_rate_hz;
      frame_times.push_back(t);
      frames.push_back(render_frame(spec, blobs, head, t, scenario_index, pixel_rng));
    }
    save_recording(rec, out / ri.id, frames, frame_times);
    infos.push_back(ri);
  }

  nlohmann::json manifest = {{"spec", spec.to_json()}, {"profiles", nlohmann::json::array()},
                             {"recordings", nlohmann::json::array()}};
  for (const auto& p : profiles) manifest["profiles"].push_back(p.to_json());
  for (const auto& ri : infos) {
    manifest["recordings"].push_back({{"id", ri.id}, {"latent_class", ri.latent_class},
                                      {"label", ri.label}, {"subtask", ri.subtask},
                                      {"scenario", ri.scenario}, {"split", ri.split}});
  }
  std::ofstream(out / "synth.json") << manifest.dump(2) << '\n';
  return infos;
}

}  // namespace skillsight
