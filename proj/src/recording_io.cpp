#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <json.hpp>

#include "skillsight/error.hpp"
#include "skillsight/gaze.hpp"

namespace skillsight {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

template <typename T>
T require(const json& obj, const char* field, const std::string& where) {
  if (!obj.is_object() || !obj.contains(field)) {
    throw FormatError(where + ": missing field \"" + field + "\"");
  }
  try {
    return obj.at(field).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": field \"" + field + "\" has the wrong type");
  }
}

template <int N>
Eigen::Matrix<double, N, 1> read_vec(const json& row, const char* field, const std::string& where,
                                     bool allow_null) {
  if (allow_null && (!row.contains(field) || row.at(field).is_null())) {
    return Eigen::Matrix<double, N, 1>::Zero();
  }
  if (!row.contains(field)) throw FormatError(where + ": missing field \"" + field + "\"");
  const json& v = row.at(field);
  if (!v.is_array() || v.size() != N) {
    throw FormatError(where + ": field \"" + field + "\" must be an array of " +
                      std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) {
    if (!v[i].is_number()) {
      throw FormatError(where + ": field \"" + field + "\" must contain numbers");
    }
    out(i) = v[i].get<double>();
  }
  return out;
}

json vec_json(const auto& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

GazeSample parse_gaze_row(const json& row, const std::string& where) {
  if (!row.is_object()) throw FormatError(where + ": row is not an object");
  GazeSample s;
  s.valid = row.contains("valid") ? require<bool>(row, "valid", where) : true;
  const bool lax = !s.valid;
  s.time_s = require<double>(row, "t", where);
  s.fix3d = read_vec<3>(row, "fix3d", where, lax);
  s.dir3d = read_vec<3>(row, "dir3d", where, lax);
  if (lax && s.dir3d.isZero()) s.dir3d = Vector3d::UnitZ();
  s.g2d = read_vec<2>(row, "g2d", where, lax);
  if (lax && (!row.contains("depth") || row.at("depth").is_null())) {
    s.depth_m = 0.0;
  } else {
    s.depth_m = require<double>(row, "depth", where);
  }
  Eigen::Vector4d q = read_vec<4>(row, "quat", where, lax);
  if (lax && q.isZero()) q << 1, 0, 0, 0;
  s.rot = Quaterniond(q(0), q(1), q(2), q(3));
  s.trans = read_vec<3>(row, "trans", where, lax);

  if (!s.g2d.allFinite()) throw FormatError(where + ": g2d not finite");
  if (std::abs(q.norm() - 1.0) > 1e-6) throw FormatError(where + ": quat not unit");
  if (s.valid) {
    if (std::abs(s.dir3d.norm() - 1.0) > 1e-6) throw FormatError(where + ": dir3d not unit");
    if (!(s.depth_m >= 0.0)) throw FormatError(where + ": depth negative");
  }
  return s;
}

}  // namespace

Recording load_recording(const fs::path& dir) {
  const json meta = read_json_file(dir / "meta.json");
  const std::string where = (dir / "meta.json").string();
  Recording rec;
  rec.id = require<std::string>(meta, "id", where);
  rec.scenario = require<std::string>(meta, "scenario", where);
  rec.subtask = require<std::string>(meta, "subtask", where);
  rec.skill = require<int>(meta, "skill", where);
  rec.split = require<std::string>(meta, "split", where);
  rec.k_classes = require<int>(meta, "k_classes", where);
  rec.frame_rate_hz = require<double>(meta, "frame_rate_hz", where);
  const auto up = require<std::string>(meta, "up_axis", where);
  if (up != "y") throw FormatError(where + ": field \"up_axis\" must be \"y\"");
  if (rec.k_classes < 2) throw FormatError(where + ": field \"k_classes\" must be >= 2");
  if (rec.skill < 0 || rec.skill >= rec.k_classes) {
    throw FormatError(where + ": field \"skill\" outside [0, k_classes)");
  }
  if (rec.split != "train" && rec.split != "val" && rec.split != "test") {
    throw FormatError(where + ": field \"split\" must be train/val/test");
  }
  if (meta.contains("gaze_rate_hz")) rec.gaze.rate_hz = require<double>(meta, "gaze_rate_hz", where);

  const fs::path gaze_path = dir / "gaze.jsonl";
  std::ifstream in(gaze_path);
  if (!in) throw FormatError("missing " + gaze_path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string row_where = gaze_path.string() + ":" + std::to_string(lineno);
    json row;
    try {
      row = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(row_where + ": malformed JSON");
    }
    rec.gaze.samples.push_back(parse_gaze_row(row, row_where));
  }
  if (rec.gaze.samples.empty()) throw EmptyInputError(gaze_path.string() + ": no gaze samples");
  rec.gaze.validate();

  const fs::path frames_dir = dir / "frames";
  if (fs::exists(frames_dir / "index.json")) {
    const json index = read_json_file(frames_dir / "index.json");
    if (!index.is_object()) throw FormatError(frames_dir.string() + "/index.json: not an object");
    std::vector<std::pair<long, double>> entries;
    for (const auto& [k, v] : index.items()) {
      if (!v.is_number()) throw FormatError("frames/index.json: timestamp for " + k + " not a number");
      entries.emplace_back(std::stol(k), v.get<double>());
    }
    std::sort(entries.begin(), entries.end());
    std::vector<double> ts;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (entries[i].first != static_cast<long>(i)) {
        throw FormatError("frames/index.json: frame indices must be contiguous from 0");
      }
      if (i > 0 && !(entries[i].second > entries[i - 1].second)) {
        throw FormatError("frames/index.json: timestamps must increase");
      }
      ts.push_back(entries[i].second);
    }
    if (!ts.empty()) {
      const double half = 0.5 / rec.frame_rate_hz;
      if (rec.gaze.start() < ts.front() - half || rec.gaze.end() > ts.back() + half) {
        throw FormatError(dir.string() + ": gaze timestamps outside frame-source span");
      }
      rec.frames = std::make_shared<FrameSource>(frames_dir, std::move(ts));
    }
  }
  return rec;
}

void save_recording(const Recording& rec, const fs::path& dir, std::span<const Image> frames,
                    std::span<const double> frame_times) {
  fs::create_directories(dir);
  json meta = {{"id", rec.id},
               {"scenario", rec.scenario},
               {"subtask", rec.subtask},
               {"skill", rec.skill},
               {"split", rec.split},
               {"k_classes", rec.k_classes},
               {"up_axis", "y"},
               {"frame_rate_hz", rec.frame_rate_hz},
               {"gaze_rate_hz", rec.gaze.rate_hz}};
  std::ofstream(dir / "meta.json") << meta.dump(2) << '\n';

  std::ofstream out(dir / "gaze.jsonl");
  for (const auto& s : rec.gaze.samples) {
    json row = {{"t", s.time_s},
                {"fix3d", vec_json(s.fix3d)},
                {"dir3d", vec_json(s.dir3d)},
                {"g2d", vec_json(s.g2d)},
                {"depth", s.depth_m},
                {"quat", json::array({s.rot.w(), s.rot.x(), s.rot.y(), s.rot.z()})},
                {"trans", vec_json(s.trans)},
                {"valid", s.valid}};
    out << row.dump() << '\n';
  }
  out.close();

  if (frames.size() != frame_times.size()) {
    throw ShapeError("save_recording: frames and frame_times differ in length");
  }
  const fs::path fdir = dir / "frames";
  json index = json::object();
  if (!frames.empty()) {
    fs::create_directories(fdir);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
      write_png(fdir / name, frames[i]);
      index[std::to_string(i)] = frame_times[i];
    }
  } else if (rec.has_frames() && rec.frames->directory() != fdir) {
    fs::create_directories(fdir);
    for (std::size_t i = 0; i < rec.frames->size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
      fs::copy_file(rec.frames->directory() / name, fdir / name,
                    fs::copy_options::overwrite_existing);
      index[std::to_string(i)] = rec.frames->timestamps()[i];
    }
  }
  if (!index.empty()) std::ofstream(fdir / "index.json") << index.dump(2) << '\n';
}

int DatasetInfo::scenario_index(const std::string& s) const {
  auto it = std::find(scenarios.begin(), scenarios.end(), s);
  if (it == scenarios.end()) throw ConfigError("unknown scenario " + s);
  return static_cast<int>(it - scenarios.begin());
}

int DatasetInfo::subtask_index(const std::string& s) const {
  auto it = std::find(subtasks.begin(), subtasks.end(), s);
  if (it == subtasks.end()) throw ConfigError("unknown subtask " + s);
  return static_cast<int>(it - subtasks.begin());
}

std::vector<const Recording*> Dataset::split(const std::string& name) const {
  std::vector<const Recording*> out;
  for (const auto& r : recordings) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw FormatError("dataset directory " + root.string() + " not found");
  Dataset ds;
  ds.root = root;
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  for (const auto& d : dirs) ds.recordings.push_back(load_recording(d));
  if (ds.recordings.empty()) throw EmptyInputError("dataset " + root.string() + " has no recordings");

  if (fs::exists(root / "dataset.json")) {
    const json j = read_json_file(root / "dataset.json");
    const std::string where = (root / "dataset.json").string();
    ds.info.scenarios = require<std::vector<std::string>>(j, "scenarios", where);
    ds.info.subtasks = require<std::vector<std::string>>(j, "subtasks", where);
    ds.info.k_classes = require<int>(j, "k_classes", where);
  } else {
    std::set<std::string> sc, st;
    for (const auto& r : ds.recordings) {
      sc.insert(r.scenario);
      st.insert(r.subtask);
    }
    ds.info.scenarios.assign(sc.begin(), sc.end());
    ds.info.subtasks.assign(st.begin(), st.end());
    ds.info.k_classes = ds.recordings.front().k_classes;
  }
  for (const auto& r : ds.recordings) {
    if (r.k_classes != ds.info.k_classes) {
      throw FormatError("recording " + r.id + " has k_classes " + std::to_string(r.k_classes) +
                        ", dataset has " + std::to_string(ds.info.k_classes));
    }
    ds.info.scenario_index(r.scenario);
    ds.info.subtask_index(r.subtask);
  }
  return ds;
}

void save_dataset_info(const DatasetInfo& info, const fs::path& root) {
  fs::create_directories(root);
  json j = {{"scenarios", info.scenarios},
            {"subtasks", info.subtasks},
            {"k_classes", info.k_classes}};
  std::ofstream(root / "dataset.json") << j.dump(2) << '\n';
}

}  // namespace skillsight
