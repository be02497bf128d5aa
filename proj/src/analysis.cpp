#include "skillsight/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "skillsight/error.hpp"
#include "skillsight/plot.hpp"

namespace skillsight {
namespace {

constexpr double kRadToDeg = 180.0 / M_PI;
// Timestamps are compared with this slack so a uniform time shift cannot flip
// a window that is exactly min_fixation_s long.
constexpr double kTimeEps = 1e-9;

double azimuth_deg(const Vector3d& d) { return std::atan2(d.x(), d.z()) * kRadToDeg; }
double elevation_deg(const Vector3d& d) {
  return std::atan2(d.y(), std::hypot(d.x(), d.z())) * kRadToDeg;
}

double angle_between_deg(const Vector3d& a, const Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b)) * kRadToDeg;
}

struct Extent {
  double az_lo = INFINITY, az_hi = -INFINITY, el_lo = INFINITY, el_hi = -INFINITY;
  void add(const Vector3d& d) {
    const double az = azimuth_deg(d), el = elevation_deg(d);
    az_lo = std::min(az_lo, az);
    az_hi = std::max(az_hi, az);
    el_lo = std::min(el_lo, el);
    el_hi = std::max(el_hi, el);
  }
  double dispersion() const { return (az_hi - az_lo) + (el_hi - el_lo); }
};

FixationEvent make_event(const GazeSequence& seq, std::size_t first, std::size_t last,
                         const FixationParams& params) {
  FixationEvent e;
  e.first = first;
  e.last = last;
  e.start_s = seq.samples[first].time_s;
  e.end_s = seq.samples[last].time_s;
  Vector2d g = Vector2d::Zero();
  Vector3d d = Vector3d::Zero();
  double depth = 0.0;
  for (std::size_t i = first; i <= last; ++i) {
    g += seq.samples[i].g2d;
    d += seq.samples[i].dir3d;
    depth += seq.samples[i].depth_m;
  }
  const double n = static_cast<double>(last - first + 1);
  e.centroid_g2d = (g / n).cwiseMax(0.0).cwiseMin(1.0);
  e.centroid_dir = d.normalized();
  e.mean_depth_m = depth / n;
  e.kind = e.mean_depth_m <= params.movement_depth_m ? FixationKind::kMovementRelated
                                                     : FixationKind::kExploratory;
  return e;
}

Distribution make_distribution(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return Distribution{std::move(v)};
}

nlohmann::json distribution_json(const Distribution& d) {
  const Summary s = d.summary();
  return {{"count", d.count()}, {"mean", d.mean()}, {"std", d.std()},
          {"median", s.median}, {"p90", s.p90}};
}

}  // namespace

const char* to_string(FixationKind k) {
  return k == FixationKind::kMovementRelated ? "movement-related" : "exploratory";
}

double angular_dispersion_deg(std::span<const Vector3d> dirs) {
  Extent e;
  for (const auto& d : dirs) e.add(d);
  return dirs.empty() ? 0.0 : e.dispersion();
}

std::vector<FixationEvent> detect_fixations(const GazeSequence& seq, const FixationParams& params) {
  if (!(params.dispersion_deg > 0.0)) {
    throw ConfigError("dispersion_deg must be > 0", "analysis.dispersion_deg");
  }
  if (params.min_fixation_s < 0.0) {
    throw ConfigError("min_fixation_s must be >= 0", "analysis.min_fixation_s");
  }
  const auto& s = seq.samples;
  const std::size_t n = s.size();
  std::vector<FixationEvent> events;
  std::size_t i = 0;
  while (i < n) {
    if (!s[i].valid) {
      ++i;
      continue;
    }
    // Smallest all-valid window starting at i that lasts min_fixation_s.
    std::size_t j = i;
    while (j < n && s[j].valid && s[j].time_s - s[i].time_s < params.min_fixation_s - kTimeEps) ++j;
    if (j >= n) break;
    if (!s[j].valid) {
      i = j + 1;
      continue;
    }
    Extent ext;
    for (std::size_t k = i; k <= j; ++k) ext.add(s[k].dir3d);
    if (ext.dispersion() > params.dispersion_deg) {
      ++i;
      continue;
    }
    while (j + 1 < n && s[j + 1].valid) {
      Extent grown = ext;
      grown.add(s[j + 1].dir3d);
      if (grown.dispersion() > params.dispersion_deg) break;
      ext = grown;
      ++j;
    }
    events.push_back(make_event(seq, i, j, params));
    i = j + 1;
  }
  return events;
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.median = percentile(values, 0.5);
  s.p90 = percentile(values, 0.9);
  return s;
}

std::vector<double> angular_speed_deg_s(const GazeSequence& seq) {
  const auto& s = seq.samples;
  const std::size_t n = s.size();
  std::vector<double> speed(n, 0.0);
  if (n < 2) return speed;
  std::vector<Vector3d> dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    dir[i] = s[i].valid || i == 0 ? s[i].dir3d : dir[i - 1];
  }
  std::vector<Vector3d> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(i + 1, n - 1);
    Vector3d acc = Vector3d::Zero();
    for (std::size_t k = lo; k <= hi; ++k) acc += dir[k];
    smooth[i] = acc.normalized();
  }
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(i + 1, n - 1);
    speed[i] = angle_between_deg(smooth[lo], smooth[hi]) / (s[hi].time_s - s[lo].time_s);
  }
  return speed;
}

SaccadeStats saccade_stats(const GazeSequence& seq, const std::vector<FixationEvent>& fixations) {
  SaccadeStats out;
  if (fixations.size() < 2) return out;
  const auto speed = angular_speed_deg_s(seq);
  for (std::size_t k = 0; k + 1 < fixations.size(); ++k) {
    const auto& a = fixations[k];
    const auto& b = fixations[k + 1];
    out.amplitudes_deg.push_back(angle_between_deg(a.centroid_dir, b.centroid_dir));
    double peak = 0.0;
    for (std::size_t i = a.last; i <= b.first; ++i) peak = std::max(peak, speed[i]);
    out.peak_speeds_deg_s.push_back(peak);
  }
  out.amplitude = summarize(out.amplitudes_deg);
  out.peak_speed = summarize(out.peak_speeds_deg_s);
  return out;
}

int RoiSpec::locate(const Vector2d& g) const {
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    if (g.x() >= r.u0 && g.x() < r.u1 && g.y() >= r.v0 && g.y() < r.v1) return static_cast<int>(i);
  }
  return -1;
}

void RoiSpec::validate() const {
  auto known = [&](const std::string& name) {
    return std::any_of(regions.begin(), regions.end(),
                       [&](const Region& r) { return r.name == name; });
  };
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    if (!(r.u0 < r.u1 && r.v0 < r.v1)) {
      throw ConfigError("ROI " + r.name + " has an empty box", "regions." + r.name);
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (regions[k].name == r.name) throw ConfigError("duplicate ROI " + r.name, "regions." + r.name);
    }
  }
  for (const auto& [a, b] : tracked) {
    if (!known(a)) throw ConfigError("unknown ROI name " + a, "transitions");
    if (!known(b)) throw ConfigError("unknown ROI name " + b, "transitions");
  }
}

RoiSpec RoiSpec::from_json(const nlohmann::json& j) {
  RoiSpec spec;
  if (!j.is_object()) throw ConfigError("ROI spec must be an object", "");
  for (const auto& [key, _] : j.items()) {
    if (key != "regions" && key != "transitions") throw ConfigError("unknown key " + key, key);
  }
  if (j.contains("regions")) {
    if (!j["regions"].is_object()) throw ConfigError("regions must be an object", "regions");
    for (const auto& [name, box] : j["regions"].items()) {
      if (!box.is_array() || box.size() != 4) {
        throw ConfigError("region box must be [u0, v0, u1, v1]", "regions." + name);
      }
      spec.regions.push_back({name, box[0].get<double>(), box[1].get<double>(),
                              box[2].get<double>(), box[3].get<double>()});
    }
  }
  if (j.contains("transitions")) {
    for (const auto& pair : j["transitions"]) {
      if (!pair.is_array() || pair.size() != 2) {
        throw ConfigError("transition must be [from, to]", "transitions");
      }
      spec.tracked.emplace_back(pair[0].get<std::string>(), pair[1].get<std::string>());
    }
  }
  spec.validate();
  return spec;
}

double Distribution::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double Distribution::std() const {
  if (values.size() < 2) return 0.0;
  const double m = mean();
  double acc = 0.0;
  for (double v : values) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(values.size() - 1));
}

RecordingStats recording_stats(const GazeSequence& seq, const RoiSpec& roi,
                               const FixationParams& params) {
  RecordingStats st;
  const auto fix = detect_fixations(seq, params);
  st.fixations = fix.size();
  for (const auto& f : fix) {
    st.fixation_durations_s.push_back(f.duration());
    (f.kind == FixationKind::kMovementRelated ? st.movement_related : st.exploratory) += 1;
  }
  const auto sac = saccade_stats(seq, fix);
  st.saccade_amplitudes_deg = sac.amplitudes_deg;
  st.saccade_speeds_deg_s = sac.peak_speeds_deg_s;

  Vector3d mean = Vector3d::Zero();
  std::size_t valid = 0;
  for (const auto& s : seq.samples) {
    if (!s.valid) continue;
    st.depths_m.push_back(s.depth_m);
    mean += s.fix3d;
    ++valid;
  }
  if (valid > 0) {
    mean /= static_cast<double>(valid);
    double acc = 0.0;
    for (const auto& s : seq.samples) {
      if (s.valid) acc += (s.fix3d - mean).squaredNorm();
    }
    st.gaze_point_variance = acc / static_cast<double>(valid);
  }

  auto tracked = [&](const std::string& a, const std::string& b) {
    if (roi.tracked.empty()) return true;
    return std::find(roi.tracked.begin(), roi.tracked.end(), std::make_pair(a, b)) !=
           roi.tracked.end();
  };
  int prev = -1;
  for (const auto& f : fix) {
    const int r = roi.locate(f.centroid_g2d);
    if (r < 0) continue;
    const std::string& name = roi.regions[static_cast<std::size_t>(r)].name;
    st.roi_dwell[name] += 1;
    if (prev >= 0 && prev != r) {
      const std::string& from = roi.regions[static_cast<std::size_t>(prev)].name;
      if (tracked(from, name)) st.roi_transitions[{from, name}] += 1;
    }
    prev = r;
  }
  return st;
}

GazeStatsReport group_report(const std::vector<const Recording*>& recordings,
                             const std::vector<int>& labels, const RoiSpec& roi,
                             const FixationParams& params) {
  if (recordings.size() != labels.size()) {
    throw ConfigError("group_report: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(recordings.size()) + " recordings",
                      "labels");
  }
  roi.validate();
  struct Pool {
    std::vector<double> dur, per_rec, amp, speed, depth, var;
  };
  std::map<int, Pool> pools;
  GazeStatsReport report;
  report.params = params;
  for (std::size_t i = 0; i < recordings.size(); ++i) {
    const RecordingStats st = recording_stats(recordings[i]->gaze, roi, params);
    Pool& p = pools[labels[i]];
    GroupStats& g = report.groups[labels[i]];
    g.recordings += 1;
    p.dur.insert(p.dur.end(), st.fixation_durations_s.begin(), st.fixation_durations_s.end());
    p.per_rec.push_back(static_cast<double>(st.fixations));
    p.amp.insert(p.amp.end(), st.saccade_amplitudes_deg.begin(), st.saccade_amplitudes_deg.end());
    p.speed.insert(p.speed.end(), st.saccade_speeds_deg_s.begin(), st.saccade_speeds_deg_s.end());
    p.depth.insert(p.depth.end(), st.depths_m.begin(), st.depths_m.end());
    p.var.push_back(st.gaze_point_variance);
    g.movement_related += st.movement_related;
    g.exploratory += st.exploratory;
    for (const auto& [k, v] : st.roi_dwell) g.roi_dwell[k] += v;
    for (const auto& [k, v] : st.roi_transitions) g.roi_transitions[k] += v;
  }
  for (auto& [label, p] : pools) {
    GroupStats& g = report.groups[label];
    g.fixation_duration_s = make_distribution(std::move(p.dur));
    g.fixations_per_recording = make_distribution(std::move(p.per_rec));
    g.saccade_amplitude_deg = make_distribution(std::move(p.amp));
    g.saccade_speed_deg_s = make_distribution(std::move(p.speed));
    g.depth_m = make_distribution(std::move(p.depth));
    g.gaze_point_variance = make_distribution(std::move(p.var));
  }
  return report;
}

nlohmann::json GazeStatsReport::to_json() const {
  nlohmann::json groups_json = nlohmann::json::object();
  for (const auto& [label, g] : groups) {
    nlohmann::json trans = nlohmann::json::array();
    for (const auto& [k, v] : g.roi_transitions) {
      trans.push_back({{"from", k.first}, {"to", k.second}, {"count", v}});
    }
    groups_json[std::to_string(label)] = {
        {"recordings", g.recordings},
        {"fixation_duration_s", distribution_json(g.fixation_duration_s)},
        {"fixations_per_recording", distribution_json(g.fixations_per_recording)},
        {"saccade_amplitude_deg", distribution_json(g.saccade_amplitude_deg)},
        {"saccade_peak_speed_deg_s", distribution_json(g.saccade_speed_deg_s)},
        {"depth_m", distribution_json(g.depth_m)},
        {"gaze_point_variance_m2", distribution_json(g.gaze_point_variance)},
        {"fixation_kinds",
         {{"movement-related", g.movement_related}, {"exploratory", g.exploratory}}},
        {"roi_dwell", g.roi_dwell},
        {"roi_transitions", trans}};
  }
  return {{"params",
           {{"dispersion_deg", params.dispersion_deg},
            {"min_fixation_s", params.min_fixation_s},
            {"movement_depth_m", params.movement_depth_m}}},
          {"groups", groups_json}};
}

void write_report(const GazeStatsReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream(out_dir / "report.json") << report.to_json().dump(2) << '\n';
  const std::vector<std::pair<std::string, const Distribution GroupStats::*>> plots = {
      {"fixation_duration_s", &GroupStats::fixation_duration_s},
      {"saccade_amplitude_deg", &GroupStats::saccade_amplitude_deg},
      {"saccade_peak_speed_deg_s", &GroupStats::saccade_speed_deg_s},
      {"depth_m", &GroupStats::depth_m},
  };
  for (const auto& [name, member] : plots) {
    std::vector<std::vector<double>> series;
    for (const auto& [_, g] : report.groups) series.push_back((g.*member).values);
    write_histogram_png(out_dir / (name + ".png"), series);
  }
}

}  // namespace skillsight
