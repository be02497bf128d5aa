#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the library code it is checking.

#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "skillsight/autograd.hpp"
#include "skillsight/gaze.hpp"

namespace oracle {

using skillsight::ag::Matrix;
using skillsight::ag::Var;

// Norm-wise relative error between two gradient tensors.
double relative_error(const Matrix& analytic, const Matrix& numeric);

// Central finite-difference gradient of a scalar loss with respect to the
// entries of `param` (perturbed in place and restored).
Matrix numeric_grad(Var param, const std::function<double()>& loss, double eps = 1e-4);

// Runs loss_var() once with autograd, compares every listed parameter against
// numeric_grad and returns the worst relative error.
double worst_grad_error(const std::vector<Var>& params, const std::function<Var()>& loss_var,
                        double eps = 1e-4);

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0);

// Step-by-step transcription of the gaze normalization rules using explicit
// yaw angles and quaternion algebra.
Matrix normalize_reference(const std::vector<skillsight::GazeSample>& samples);

// Random plausible gaze sequence (all valid unless invalid_rate > 0; the first
// sample is always valid).
std::vector<skillsight::GazeSample> random_sequence(int n, std::mt19937_64& rng,
                                                    double invalid_rate = 0.0);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace oracle

namespace oracle {

struct Window {
  std::size_t first, last;
};

// Exhaustive window-growing fixation search: every candidate window's
// dispersion is recomputed from scratch.
std::vector<Window> fixations_brute_force(const std::vector<skillsight::GazeSample>& s,
                                          double dispersion_deg, double min_duration_s);

// Peak angular speed between two sample indices by direct differencing of the
// 3-sample smoothed direction.
double peak_speed_reference(const std::vector<skillsight::GazeSample>& s, std::size_t from,
                            std::size_t to);

}  // namespace oracle
