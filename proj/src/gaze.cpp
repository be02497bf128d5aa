#include "skillsight/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "skillsight/error.hpp"
#include "skillsight/log.hpp"

namespace skillsight {
namespace {

constexpr double kUnitTol = 1e-6;
constexpr double kMaxSkewS = 0.25;

// Index of the closest timestamp in an increasing vector; ties go to the
// earlier entry.
std::size_t nearest_index(const std::vector<double>& ts, double t) {
  auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.begin()) return 0;
  if (it == ts.end()) return ts.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  return (t - ts[hi - 1] <= ts[hi] - t) ? hi - 1 : hi;
}

// Change of basis from the y-up storage frame (x, y=up, z) to the heading
// frame (forward=z, left=x, up=y). A cyclic permutation, so handedness is kept.
Eigen::Matrix3d storage_to_heading() {
  Eigen::Matrix3d p;
  p << 0, 0, 1,
       1, 0, 0,
       0, 1, 0;
  return p;
}

// Rotation about +y that turns the horizontal direction (hx, hz) onto +z.
// Identity when the direction is degenerate.
Eigen::Matrix3d yaw_to_forward(double hx, double hz) {
  const double r = std::hypot(hx, hz);
  if (r < 1e-12) return Eigen::Matrix3d::Identity();
  const double c = hz / r;
  const double s = hx / r;
  Eigen::Matrix3d y;
  y << c, 0, -s,
       0, 1, 0,
       s, 0, c;
  return y;
}

Quaterniond canonical(Quaterniond q) {
  q.normalize();
  const Eigen::Vector4d c = q.coeffs();  // x, y, z, w
  double lead = q.w();
  if (lead == 0.0) {
    for (int i = 0; i < 3; ++i) {
      if (c(i) != 0.0) {
        lead = c(i);
        break;
      }
    }
  }
  if (lead < 0.0) q.coeffs() = -q.coeffs();
  return q;
}

}  // namespace

bool GazeSample::operator==(const GazeSample& o) const {
  return time_s == o.time_s && fix3d == o.fix3d && dir3d == o.dir3d && g2d == o.g2d &&
         depth_m == o.depth_m && rot.coeffs() == o.rot.coeffs() && trans == o.trans &&
         valid == o.valid;
}

std::size_t GazeSequence::nearest(double t) const {
  auto it = std::lower_bound(samples.begin(), samples.end(), t,
                             [](const GazeSample& s, double v) { return s.time_s < v; });
  if (it == samples.begin()) return 0;
  if (it == samples.end()) return samples.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - samples.begin());
  return (t - samples[hi - 1].time_s <= samples[hi].time_s - t) ? hi - 1 : hi;
}

void GazeSequence::validate() const {
  if (samples.empty()) throw EmptyInputError("gaze sequence is empty");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto fail = [i](const std::string& what) {
      throw FormatError("gaze sample " + std::to_string(i) + ": " + what);
    };
    if (i > 0 && !(s.time_s > samples[i - 1].time_s)) fail("t not strictly increasing");
    if (!std::isfinite(s.time_s)) fail("t not finite");
    if (!s.g2d.allFinite()) fail("g2d not finite");
    if (std::abs(s.rot.norm() - 1.0) > kUnitTol) fail("quat not unit");
    if (s.valid) {
      if (std::abs(s.dir3d.norm() - 1.0) > kUnitTol) fail("dir3d not unit");
      if (!(s.depth_m >= 0.0)) fail("depth negative");
      if (!s.fix3d.allFinite() || !s.trans.allFinite()) fail("non-finite position");
    }
  }
}

FrameSource::FrameSource(std::filesystem::path dir, std::vector<double> timestamps)
    : dir_(std::move(dir)), timestamps_(std::move(timestamps)) {
  if (timestamps_.empty()) throw EmptyInputError("frame source " + dir_.string() + " is empty");
}

std::size_t FrameSource::nearest(double t) const { return nearest_index(timestamps_, t); }

Image FrameSource::frame(std::size_t index) const {
  std::lock_guard lock(mu_);
  if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%06zu.png", index);
  Image img = read_png(dir_ / name);
  cache_.emplace(index, img);
  return img;
}

std::string Clip::key() const {
  std::ostringstream os;
  os << recording_id << "#" << index << "of" << n_clips;
  return os.str();
}

std::vector<Clip> segment_clips(const Recording& rec, int n_clips, const ClipProtocol& protocol) {
  if (n_clips < 1) throw ConfigError("n_clips must be >= 1");
  const auto& seq = rec.gaze;
  if (seq.samples.empty()) throw EmptyInputError("recording " + rec.id + " has no gaze");
  const double t0 = seq.start();
  const double t_end = seq.end();
  const double dur = protocol.duration();
  const bool padded = seq.span() < dur - 1e-9;

  auto build = [&](int index, int total, double start) {
    Clip clip;
    clip.recording_id = rec.id;
    clip.index = index;
    clip.n_clips = total;
    clip.padded = padded;
    for (int k = 0; k < protocol.frames_per_clip; ++k) {
      const double t = std::min(start + k / protocol.fps, t_end);
      clip.frame_times.push_back(t);
      const auto& g = seq.samples[seq.nearest(t)];
      clip.gaze.push_back(g);
      clip.max_skew_s = std::max(clip.max_skew_s, std::abs(g.time_s - t));
      if (rec.has_frames()) {
        const std::size_t fi = rec.frames->nearest(t);
        clip.frames.push_back(rec.frames->frame(fi));
        clip.max_skew_s =
            std::max(clip.max_skew_s, std::abs(rec.frames->timestamps()[fi] - t));
      }
    }
    if (!padded && clip.max_skew_s > kMaxSkewS) {
      log_warning("clip " + clip.key() + ": gaze/frame skew " + std::to_string(clip.max_skew_s) +
                  " s exceeds " + std::to_string(kMaxSkewS) + " s");
    }
    return clip;
  };

  std::vector<Clip> clips;
  if (padded) {
    clips.push_back(build(0, 1, t0));
    return clips;
  }
  const double step = n_clips > 1 ? (seq.span() - dur) / (n_clips - 1) : 0.0;
  for (int i = 0; i < n_clips; ++i) clips.push_back(build(i, n_clips, t0 + i * step));
  return clips;
}

Vector3d world_to_heading(const Vector3d& v) { return {v.z(), v.x(), v.y()}; }
Vector3d heading_to_world(const Vector3d& v) { return {v.y(), v.z(), v.x()}; }

Quaterniond heading_to_world(const Quaterniond& q) {
  const Eigen::Matrix3d p = storage_to_heading();
  return canonical(Quaterniond(p.transpose() * q.toRotationMatrix() * p));
}

NormalizedGaze normalize_gaze(std::span<const GazeSample> samples,
                              const NormalizationOptions& opts) {
  namespace gf = gaze_features;
  if (samples.empty()) throw EmptyInputError("normalize_gaze: empty sequence");
  const auto first_valid =
      std::find_if(samples.begin(), samples.end(), [](const GazeSample& s) { return s.valid; });
  if (first_valid == samples.end()) throw EmptyInputError("normalize_gaze: all samples invalid");
  if (first_valid != samples.begin()) {
    const long idx = static_cast<long>(first_valid - samples.begin());
    throw AnchorError("normalize_gaze: first sample invalid; first valid sample is " +
                          std::to_string(idx),
                      idx);
  }

  const std::size_t n = samples.size();
  // Hold-last-valid imputation.
  std::vector<const GazeSample*> src(n);
  const GazeSample* last = &samples[0];
  for (std::size_t i = 0; i < n; ++i) {
    if (samples[i].valid) last = &samples[i];
    src[i] = last;
  }

  const Eigen::Matrix3d p = storage_to_heading();
  NormalizedGaze out;
  out.features = ag::Matrix::Zero(static_cast<ag::Index>(n), gf::kWidth);
  auto& f = out.features;

  // 3D fixation: centre on the segment mean, then yaw so frame 0's point has
  // no lateral component.
  Vector3d fix_mean = Vector3d::Zero();
  for (const auto* s : src) fix_mean += s->fix3d;
  fix_mean /= static_cast<double>(n);
  const Vector3d c0 = src[0]->fix3d - fix_mean;
  const Eigen::Matrix3d fix_rot = p * yaw_to_forward(c0.x(), c0.z());

  // Glasses rotation: frame 0's heading defines forward.
  const Eigen::Matrix3d r0 = src[0]->rot.toRotationMatrix();
  const Vector3d fwd0 = r0 * Vector3d::UnitZ();
  const Eigen::Matrix3d y0 = yaw_to_forward(fwd0.x(), fwd0.z());

  // Translation: the first horizontal displacement from frame 0 defines +x.
  Vector3d trans_mean = Vector3d::Zero();
  for (const auto* s : src) trans_mean += s->trans;
  trans_mean /= static_cast<double>(n);
  Eigen::Matrix3d trans_yaw = y0;
  for (std::size_t i = 1; i < n; ++i) {
    const Vector3d d = src[i]->trans - src[0]->trans;
    if (std::hypot(d.x(), d.z()) > opts.min_move_m) {
      trans_yaw = yaw_to_forward(d.x(), d.z());
      break;
    }
  }
  const Eigen::Matrix3d trans_rot = p * trans_yaw;
  const Eigen::Matrix3d rel_basis = p * y0;

  for (std::size_t i = 0; i < n; ++i) {
    const GazeSample& s = *src[i];
    const auto r = static_cast<ag::Index>(i);

    Vector3d fx = fix_rot * (s.fix3d - fix_mean);
    if (i == 0) fx = Vector3d(std::hypot(c0.x(), c0.z()), 0.0, c0.y());
    f.block<1, 3>(r, gf::kFix3d) = fx.transpose();

    f.block<1, 3>(r, gf::kDir3d) = s.dir3d.transpose();
    f(r, gf::kG2d) = std::clamp(s.g2d.x(), 0.0, 1.0);
    f(r, gf::kG2d + 1) = std::clamp(s.g2d.y(), 0.0, 1.0);
    f(r, gf::kDepth) = s.depth_m;

    Quaterniond rel = Quaterniond::Identity();
    if (i > 0) {
      const Eigen::Matrix3d delta = s.rot.toRotationMatrix() * r0.transpose();
      rel = canonical(Quaterniond(rel_basis * delta * rel_basis.transpose()));
    }
    f(r, gf::kRelRot) = rel.w();
    f(r, gf::kRelRot + 1) = rel.x();
    f(r, gf::kRelRot + 2) = rel.y();
    f(r, gf::kRelRot + 3) = rel.z();

    f.block<1, 3>(r, gf::kTrans) = (trans_rot * (s.trans - trans_mean)).transpose();
    f(r, gf::kValid) = samples[i].valid ? 1.0 : 0.0;
  }
  return out;
}

std::vector<GazeSample> hold_last_valid(std::span<const GazeSample> samples) {
  const auto first =
      std::find_if(samples.begin(), samples.end(), [](const GazeSample& s) { return s.valid; });
  if (first == samples.end()) throw EmptyInputError("gaze: all samples invalid");
  std::vector<GazeSample> out(samples.begin(), samples.end());
  const GazeSample* last = &*first;
  for (auto& s : out) {
    if (s.valid) {
      last = &s;
      continue;
    }
    const double t = s.time_s;
    s = *last;
    s.time_s = t;
    s.valid = false;
  }
  return out;
}

NormalizedGaze normalize_clip_gaze(std::span<const GazeSample> samples) {
  auto filled = hold_last_valid(samples);
  std::size_t lead = 0;
  while (!filled[lead].valid) filled[lead++].valid = true;
  NormalizedGaze out = normalize_gaze(std::span<const GazeSample>(filled));
  for (std::size_t i = 0; i < lead; ++i) out.features(static_cast<ag::Index>(i), gaze_features::kValid) = 0.0;
  return out;
}

}  // namespace skillsight
