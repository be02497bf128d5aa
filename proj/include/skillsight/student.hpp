#pragma once

// Gaze-only student with class, distillation and action tokens, trained by
// feature distillation from a frozen teacher.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillsight/gaze.hpp"
#include "skillsight/nn.hpp"
#include "skillsight/teacher.hpp"
#include "skillsight/training.hpp"

namespace skillsight {

struct StudentConfig {
  nn::EncoderConfig encoder{4, 4, 64, 4};
  int frames = 16;
  int common_dim = 0;  // 0: student width
  int teacher_dim = 0;  // width of the teacher's [e_v, e_c, e_g]; 0 when no teacher
  double lambda_dis = 1.0;
  double lambda_act = 0.5;
  bool distill = true;
  bool action = true;
  int k_classes = 2;
  int n_subtasks = 1;
  TrainConfig train{10, 32, 1e-4, 0.0, 0.01, 2, 3, 10};
  std::uint64_t seed = 0;

  int projection_dim() const { return common_dim > 0 ? common_dim : encoder.width; }
  void validate() const;
  nlohmann::json to_json() const;
  static StudentConfig from_json(const nlohmann::json& j, const std::string& where = "/student");
};

struct StudentOutput {
  ag::Var e_s_hat;        // 1 x width, distillation-token feature
  ag::Var skill_logits;   // 1 x K
  ag::Var action_logits;  // 1 x n_subtasks
};

class Student {
 public:
  explicit Student(StudentConfig cfg);

  // Only normalized gaze goes in; frames never reach the student.
  StudentOutput forward(const NormalizedGaze& gaze) const;
  StudentOutput forward(const ag::Matrix& gaze_features) const;

  // mean |f_p(e_s_hat) - f_t(teacher_concat)|; teacher_concat is a constant.
  ag::Var distillation_loss(const ag::Var& e_s_hat, const ag::Matrix& teacher_concat) const;
  ag::Var project_student(const ag::Var& e_s_hat) const;
  ag::Var project_teacher(const ag::Matrix& teacher_concat) const;

  struct Loss {
    ag::Var total;
    double ce = 0.0, dis = 0.0, act = 0.0;
  };
  // CE + lambda_dis * L_dis + lambda_act * L_act, with disabled terms skipped.
  Loss loss(const StudentOutput& out, int label, int subtask, const ag::Matrix* teacher_concat) const;

  const StudentConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const ag::Var& tokens() const { return tokens_; }

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Student load(const std::filesystem::path& dir);

 private:
  StudentConfig cfg_;
  nn::ParamStore store_;
  ag::Var tokens_;  // rows: t_cls, t_dis, t_act
  nn::Linear gaze_embed_;
  nn::SequenceEncoder encoder_;
  nn::Linear skill_head_, action_head_;
  nn::Linear f_p_, f_t_;
};

// Frozen-teacher embedding cache: one binary file per clip under
// <root>/<teacher hash>/, written via rename so readers never see partial
// files.
class EmbeddingCache {
 public:
  EmbeddingCache(std::filesystem::path root, std::string teacher_hash);
  std::optional<ag::Matrix> get(const std::string& clip_key) const;
  void put(const std::string& clip_key, const ag::Matrix& value) const;
  std::filesystem::path path_for(const std::string& clip_key) const;

 private:
  std::filesystem::path dir_;
};

struct StudentTrainResult {
  TrainResult train;
  EvalReport val;
};

// Trains the student on the train split. `teacher` may be null only when
// distillation is disabled. Writes checkpoint, metrics.jsonl and
// val_report.json under out_dir.
StudentTrainResult train_student(Student& student, const Dataset& data, const Teacher* teacher,
                                 const std::filesystem::path& out_dir,
                                 const std::filesystem::path& cache_root = {});

ClipPredictor student_predictor(const Student& student);

}  // namespace skillsight
