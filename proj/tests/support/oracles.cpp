#include "oracles.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unistd.h>

namespace oracle {

using Eigen::AngleAxisd;
using Eigen::Quaterniond;
using Eigen::Vector3d;

double relative_error(const Matrix& analytic, const Matrix& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale < 1e-12) return 0.0;
  return (analytic - numeric).norm() / scale;
}

Matrix numeric_grad(Var param, const std::function<double()>& loss, double eps) {
  Matrix& v = param.mutable_value();
  Matrix g(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double keep = v.data()[i];
    v.data()[i] = keep + eps;
    const double up = loss();
    v.data()[i] = keep - eps;
    const double down = loss();
    v.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double worst_grad_error(const std::vector<Var>& params, const std::function<Var()>& loss_var,
                        double eps) {
  for (auto p : params) p.zero_grad();
  loss_var().backward();
  std::vector<Matrix> analytic;
  for (const auto& p : params) {
    analytic.push_back(p.has_grad() ? p.grad() : Matrix::Zero(p.rows(), p.cols()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    skillsight::ag::NoGradGuard guard;
    const Matrix num = numeric_grad(params[i], [&] { return loss_var().item(); }, eps);
    worst = std::max(worst, relative_error(analytic[i], num));
  }
  return worst;
}

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

namespace {

// Storage axes (x, y=up, z) -> output axes (forward, left, up).
Vector3d to_output(const Vector3d& v) { return {v.z(), v.x(), v.y()}; }

double heading_angle(const Vector3d& v) { return std::atan2(v.x(), v.z()); }

}  // namespace

Matrix normalize_reference(const std::vector<skillsight::GazeSample>& in) {
  const std::size_t n = in.size();
  // Rule 0: hold the last valid sample.
  std::vector<skillsight::GazeSample> s(in);
  for (std::size_t i = 1; i < n; ++i) {
    if (!in[i].valid) {
      s[i] = s[i - 1];
      s[i].valid = false;
    }
  }

  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), 17);

  // Rule (a): centre the fixation points, then undo the heading of frame 0.
  Vector3d mean = Vector3d::Zero();
  for (const auto& x : s) mean += x.fix3d;
  mean /= static_cast<double>(n);
  const AngleAxisd fix_yaw(-heading_angle(s[0].fix3d - mean), Vector3d::UnitY());

  // Rule (e): heading of the glasses in frame 0.
  const Vector3d forward0 = s[0].rot * Vector3d::UnitZ();
  const Quaterniond yaw0(AngleAxisd(-heading_angle(forward0), Vector3d::UnitY()));

  // Rule (f): centre translations; the first horizontal move gives +x.
  Vector3d tmean = Vector3d::Zero();
  for (const auto& x : s) tmean += x.trans;
  tmean /= static_cast<double>(n);
  Quaterniond trans_yaw = yaw0;
  for (std::size_t i = 1; i < n; ++i) {
    Vector3d d = s[i].trans - s[0].trans;
    d.y() = 0.0;
    if (d.norm() > 0.01) {
      trans_yaw = Quaterniond(AngleAxisd(-heading_angle(d), Vector3d::UnitY()));
      break;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vector3d f = to_output(fix_yaw * (s[i].fix3d - mean));
    out.block<1, 3>(r, 0) = f.transpose();
    out.block<1, 3>(r, 3) = s[i].dir3d.transpose();
    out(r, 6) = std::min(1.0, std::max(0.0, s[i].g2d.x()));
    out(r, 7) = std::min(1.0, std::max(0.0, s[i].g2d.y()));
    out(r, 8) = s[i].depth_m;

    Quaterniond rel = yaw0 * s[i].rot * s[0].rot.conjugate() * yaw0.conjugate();
    rel.normalize();
    if (rel.w() < 0) rel.coeffs() *= -1.0;
    const Vector3d axis = to_output(rel.vec());
    out(r, 9) = rel.w();
    out(r, 10) = axis.x();
    out(r, 11) = axis.y();
    out(r, 12) = axis.z();

    out.block<1, 3>(r, 13) = to_output(trans_yaw * (s[i].trans - tmean)).transpose();
    out(r, 16) = in[i].valid ? 1.0 : 0.0;
  }
  return out;
}

std::vector<skillsight::GazeSample> random_sequence(int n, std::mt19937_64& rng,
                                                    double invalid_rate) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<skillsight::GazeSample> out;
  Vector3d pos(u(rng), 1.6 + 0.1 * u(rng), u(rng));
  double yaw = 3.0 * u(rng);
  for (int i = 0; i < n; ++i) {
    skillsight::GazeSample s;
    s.time_s = i / 30.0;
    yaw += 0.05 * u(rng);
    pos += Vector3d(0.05 * u(rng), 0.005 * u(rng), 0.05 * u(rng));
    const Quaterniond q = AngleAxisd(yaw, Vector3d::UnitY()) *
                          AngleAxisd(0.2 * u(rng), Vector3d::UnitX()) *
                          AngleAxisd(0.1 * u(rng), Vector3d::UnitZ());
    s.rot = q.normalized();
    s.trans = pos;
    s.dir3d = Vector3d(0.3 * u(rng), 0.2 * u(rng), 1.0).normalized();
    s.depth_m = 0.3 + 2.0 * unit(rng);
    s.fix3d = pos + s.rot * (s.dir3d * s.depth_m);
    s.g2d = Eigen::Vector2d(1.2 * unit(rng) - 0.1, 1.2 * unit(rng) - 0.1);
    s.valid = i == 0 || unit(rng) >= invalid_rate;
    out.push_back(s);
  }
  return out;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("skillsight_" + tag + "_" + std::to_string(::getpid()) + "_" +
           std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace oracle

namespace oracle {
namespace {

double dispersion_from_scratch(const std::vector<skillsight::GazeSample>& s, std::size_t a,
                               std::size_t b) {
  std::vector<double> az, el;
  for (std::size_t i = a; i <= b; ++i) {
    const Vector3d& d = s[i].dir3d;
    az.push_back(std::atan2(d.x(), d.z()) * 180.0 / M_PI);
    el.push_back(std::asin(std::clamp(d.y() / d.norm(), -1.0, 1.0)) * 180.0 / M_PI);
  }
  return (*std::max_element(az.begin(), az.end()) - *std::min_element(az.begin(), az.end())) +
         (*std::max_element(el.begin(), el.end()) - *std::min_element(el.begin(), el.end()));
}

bool all_valid(const std::vector<skillsight::GazeSample>& s, std::size_t a, std::size_t b) {
  for (std::size_t i = a; i <= b; ++i) {
    if (!s[i].valid) return false;
  }
  return true;
}

}  // namespace

std::vector<Window> fixations_brute_force(const std::vector<skillsight::GazeSample>& s,
                                          double dispersion_deg, double min_duration_s) {
  std::vector<Window> out;
  std::size_t i = 0;
  while (i < s.size()) {
    // Shortest window from i that is long enough.
    std::size_t j = i;
    while (j < s.size() && s[j].time_s - s[i].time_s < min_duration_s - 1e-9) ++j;
    if (j >= s.size()) break;
    if (!all_valid(s, i, j) || dispersion_from_scratch(s, i, j) > dispersion_deg) {
      ++i;
      continue;
    }
    while (j + 1 < s.size() && all_valid(s, i, j + 1) &&
           dispersion_from_scratch(s, i, j + 1) <= dispersion_deg) {
      ++j;
    }
    out.push_back({i, j});
    i = j + 1;
  }
  return out;
}

double peak_speed_reference(const std::vector<skillsight::GazeSample>& s, std::size_t from,
                            std::size_t to) {
  const std::size_t n = s.size();
  auto smoothed = [&](std::size_t i) {
    Vector3d acc = Vector3d::Zero();
    for (std::size_t k = (i == 0 ? 0 : i - 1); k <= std::min(i + 1, n - 1); ++k) acc += s[k].dir3d;
    return acc.normalized();
  };
  double peak = 0.0;
  for (std::size_t i = from; i <= to; ++i) {
    const std::size_t a = i == 0 ? 0 : i - 1;
    const std::size_t b = std::min(i + 1, n - 1);
    const double cosang = std::clamp(smoothed(a).dot(smoothed(b)), -1.0, 1.0);
    peak = std::max(peak, std::acos(cosang) * 180.0 / M_PI / (s[b].time_s - s[a].time_s));
  }
  return peak;
}

}  // namespace oracle
