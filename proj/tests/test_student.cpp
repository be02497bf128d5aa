#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "skillsight/error.hpp"
#include "skillsight/student.hpp"
#include "skillsight/synth.hpp"

using namespace skillsight;
using ag::Matrix;
using ag::Var;
namespace fs = std::filesystem;

namespace {

Matrix random_gaze(std::mt19937_64& rng) { return normalize_clip_gaze(oracle::random_sequence(16, rng)).features; }

Var param(const Student& s, const std::string& name) {
  const Var* v = s.params().find(name);
  EXPECT_NE(v, nullptr) << name;
  return *v;
}

double log_softmax_at(const Matrix& row, int k) {
  const double mx = row.maxCoeff();
  double s = 0.0;
  for (Eigen::Index j = 0; j < row.cols(); ++j) s += std::exp(row(0, j) - mx);
  return row(0, k) - mx - std::log(s);
}

SynthTaskSpec small_spec(std::uint64_t seed) {
  SynthTaskSpec spec;
  spec.kind = SynthTask::kDistillation;
  spec.n_per_class = 6;
  spec.image_size = 32;
  spec.duration_s = 8.0;
  spec.scenarios = {"default"};
  spec.train_fraction = 0.5;
  spec.val_fraction = 0.25;
  spec.seed = seed;
  return spec;
}

StudentConfig quick_student(int teacher_dim) {
  auto c = fixture::tiny_student_config(teacher_dim);
  c.train.epochs = 2;
  c.train.batch_size = 4;
  c.train.lr = 1e-3;
  c.train.val_clips = 2;
  c.train.eval_clips = 2;
  return c;
}

}  // namespace

TEST(Student, OutputShapes) {
  std::mt19937_64 rng(1);
  auto cfg = fixture::tiny_student_config(40);
  cfg.k_classes = 3;
  cfg.n_subtasks = 5;
  const Student s(cfg);
  const auto out = s.forward(random_gaze(rng));
  EXPECT_EQ(out.e_s_hat.rows(), 1);
  EXPECT_EQ(out.e_s_hat.cols(), 16);
  EXPECT_EQ(out.skill_logits.cols(), 3);
  EXPECT_EQ(out.action_logits.cols(), 5);
  EXPECT_EQ(s.tokens().rows(), 3);
  EXPECT_EQ(s.project_student(out.e_s_hat).cols(), 16);
  EXPECT_EQ(s.project_teacher(Matrix::Zero(1, 40)).cols(), 16);
}

TEST(Student, ZeroGazeGivesFiniteOutputs) {
  const Student s(fixture::tiny_student_config(8));
  const auto out = s.forward(Matrix::Zero(16, gaze_features::kWidth));
  EXPECT_TRUE(out.e_s_hat.value().allFinite());
  EXPECT_TRUE(out.skill_logits.value().allFinite());
  EXPECT_TRUE(out.action_logits.value().allFinite());
}

TEST(Student, RejectsWrongGazeShape) {
  const Student s(fixture::tiny_student_config(8));
  EXPECT_THROW(s.forward(Matrix::Zero(16, 14)), ShapeError);
  EXPECT_THROW(s.forward(Matrix::Zero(15, gaze_features::kWidth)), ShapeError);
  EXPECT_THROW(s.project_teacher(Matrix::Zero(1, 9)), ShapeError);
}

TEST(Student, TokenGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const Student s(fixture::tiny_student_config(12));
  const Matrix g = random_gaze(rng);
  const Matrix t = oracle::random_matrix(1, 12, rng);
  const auto loss = [&] { return s.loss(s.forward(g), 1, 0, &t).total; };
  EXPECT_LE(oracle::worst_grad_error({s.tokens()}, loss), 1e-4);
}

TEST(Student, ProjectionGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Student s(fixture::tiny_student_config(12));
  const Matrix g = random_gaze(rng);
  const Matrix t = oracle::random_matrix(1, 12, rng);
  const auto loss = [&] { return s.distillation_loss(s.forward(g).e_s_hat, t); };
  std::vector<Var> proj;
  for (const char* n : {"student.f_p.weight", "student.f_p.bias", "student.f_t.weight", "student.f_t.bias"}) {
    proj.push_back(param(s, n));
  }
  // L1 has kinks; a small step keeps the difference quotient on one side.
  EXPECT_LE(oracle::worst_grad_error(proj, loss, 1e-6), 1e-4);
}

TEST(Student, DistillationLossIdentityAndUnitDifference) {
  std::mt19937_64 rng(4);
  auto cfg = fixture::tiny_student_config(16);
  const Student s(cfg);
  for (const char* p : {"student.f_p", "student.f_t"}) {
    param(s, std::string(p) + ".weight").mutable_value() = Matrix::Identity(16, 16);
    param(s, std::string(p) + ".bias").mutable_value().setZero();
  }
  const Var e = s.forward(random_gaze(rng)).e_s_hat;
  EXPECT_EQ(s.distillation_loss(e, e.value()).item(), 0.0);
  const Matrix shifted = e.value().array() - 1.0;
  EXPECT_NEAR(s.distillation_loss(e, shifted).item(), 1.0, 1e-12);
  EXPECT_GE(s.distillation_loss(e, oracle::random_matrix(1, 16, rng)).item(), 0.0);
}

TEST(Student, TeacherReceivesNoGradient) {
  std::mt19937_64 rng(5);
  const auto tcfg = fixture::tiny_teacher_config();
  Teacher teacher(tcfg);
  const Student s(fixture::tiny_student_config(teacher.concat_width()));
  teacher.params().zero_grad();
  const auto e = teacher.forward(fixture::random_clip(rng), 0);  // graph attached
  const Matrix concat = e.concat().value();
  s.loss(s.forward(random_gaze(rng)), 0, 1, &concat).total.backward();
  for (const auto& [name, v] : teacher.params().entries()) {
    EXPECT_TRUE(!v.has_grad() || v.grad().norm() == 0.0) << name;
  }
  EXPECT_GT(param(s, "student.f_t.weight").grad().norm(), 0.0);
}

TEST(Student, LossIsTheWeightedTermSum) {
  std::mt19937_64 rng(6);
  auto cfg = fixture::tiny_student_config(10);
  cfg.lambda_dis = 0.7;
  cfg.lambda_act = 0.3;
  cfg.n_subtasks = 3;
  const Student s(cfg);
  const Matrix g = random_gaze(rng);
  const Matrix t = oracle::random_matrix(1, 10, rng);
  const auto out = s.forward(g);
  const auto l = s.loss(out, 1, 2, &t);

  const double ce = -log_softmax_at(out.skill_logits.value(), 1);
  const double act = -log_softmax_at(out.action_logits.value(), 2);
  const Matrix fp = out.e_s_hat.value() * param(s, "student.f_p.weight").value() +
                    param(s, "student.f_p.bias").value();
  const Matrix ft = t * param(s, "student.f_t.weight").value() + param(s, "student.f_t.bias").value();
  const double dis = (fp - ft).cwiseAbs().sum() / static_cast<double>(fp.size());
  EXPECT_NEAR(l.ce, ce, 1e-12);
  EXPECT_NEAR(l.dis, dis, 1e-12);
  EXPECT_NEAR(l.act, act, 1e-12);
  EXPECT_NEAR(l.total.item(), ce + 0.7 * dis + 0.3 * act, 1e-12);

  auto off = cfg;
  off.distill = false;
  off.action = false;
  const Student plain(off);
  EXPECT_EQ(plain.loss(plain.forward(g), 1, 0, nullptr).total.item(), l.ce);
  EXPECT_THROW(s.loss(out, 1, 2, nullptr), ConfigError);
  EXPECT_THROW(s.loss(out, 1, 3, &t), ConfigError);
}

TEST(Student, ConfigRoundTripAndErrors) {
  auto cfg = fixture::tiny_student_config(24);
  cfg.lambda_dis = 0.25;
  EXPECT_EQ(StudentConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  auto j = cfg.to_json();
  j["encoder"]["depth"] = 3;
  try {
    StudentConfig::from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/student/encoder/depth"), std::string::npos) << e.what();
  }
  cfg.lambda_act = -1.0;
  EXPECT_THROW(Student{cfg}, ConfigError);
}

TEST(StudentTraining, CheckpointRoundTrip) {
  oracle::TempDir dir("student_ckpt");
  std::mt19937_64 rng(7);
  const Student s(fixture::tiny_student_config(8));
  s.save(dir.path());
  const Student back = Student::load(dir.path());
  const Matrix g = random_gaze(rng);
  EXPECT_EQ(s.forward(g).skill_logits.value(), back.forward(g).skill_logits.value());
  EXPECT_THROW(Teacher::load(dir.path()), FormatError);
}

class StudentDataTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new oracle::TempDir("student_data");
    const auto spec = small_spec(31);
    generate_dataset(spec, default_profiles(spec), dir_->path() / "data");
    teacher_ = new Teacher(fixture::tiny_teacher_config());
  }
  static void TearDownTestSuite() {
    delete teacher_;
    delete dir_;
  }
  static fs::path root() { return dir_->path(); }
  static oracle::TempDir* dir_;
  static Teacher* teacher_;
};
oracle::TempDir* StudentDataTest::dir_ = nullptr;
Teacher* StudentDataTest::teacher_ = nullptr;

TEST_F(StudentDataTest, ZeroWeightsMatchTheGazeOnlyRun) {
  const Dataset ds = load_dataset(root() / "data");
  auto with = quick_student(teacher_->concat_width());
  with.lambda_dis = 0.0;
  with.lambda_act = 0.0;
  with.train.weight_decay = 0.0;
  auto without = with;
  without.distill = false;
  without.action = false;
  Student a(with), b(without);
  train_student(a, ds, teacher_, root() / "zero_a", root() / "cache_zero");
  train_student(b, ds, nullptr, root() / "zero_b");
  const auto test = ds.split("test");
  ASSERT_FALSE(test.empty());
  for (const Recording* r : test) {
    for (const auto& c : segment_clips(*r, 3)) {
      const auto g = normalize_clip_gaze(c.gaze);
      EXPECT_EQ(a.forward(g).skill_logits.value(), b.forward(g).skill_logits.value());
    }
  }
}

TEST_F(StudentDataTest, TeacherStaysFrozenAndCacheIsReused) {
  const Dataset ds = load_dataset(root() / "data");
  const std::string before = params_hash(teacher_->params());
  const fs::path cache = root() / "cache_reuse";
  Student a(quick_student(teacher_->concat_width()));
  train_student(a, ds, teacher_, root() / "reuse_a", cache);
  EXPECT_EQ(params_hash(teacher_->params()), before);

  std::map<fs::path, fs::file_time_type> stamps;
  for (const auto& e : fs::recursive_directory_iterator(cache)) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(e.path().extension(), ".bin") << e.path();
    stamps[e.path()] = e.last_write_time();
  }
  const std::size_t train_recs = ds.split("train").size();
  EXPECT_EQ(stamps.size(), train_recs * static_cast<std::size_t>(a.config().train.clips_per_recording));
  ASSERT_TRUE(fs::is_directory(cache / before));

  Student b(quick_student(teacher_->concat_width()));
  train_student(b, ds, teacher_, root() / "reuse_b", cache);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(cache)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(stamps.at(e.path()), e.last_write_time()) << e.path();
  }
  EXPECT_EQ(files, stamps.size());
  EXPECT_EQ(params_hash(a.params()), params_hash(b.params()));
  const auto meta = read_checkpoint_meta(root() / "reuse_a" / "checkpoint");
  EXPECT_EQ(meta.extra["teacher_hash"], before);
}

TEST_F(StudentDataTest, InferenceIgnoresFrames) {
  const fs::path copy = root() / "data_copy";
  fs::copy(root() / "data", copy, fs::copy_options::recursive);
  Dataset ds = load_dataset(copy);
  Student s(quick_student(teacher_->concat_width()));
  train_student(s, ds, teacher_, root() / "frames_run", root() / "cache_frames");
  const auto before = evaluate(ds.split("test"), student_predictor(s), 2, 10);

  for (const auto& e : fs::directory_iterator(copy)) {
    if (e.is_directory()) fs::remove_all(e.path() / "frames");
  }
  ds = load_dataset(copy);
  for (const auto& r : ds.recordings) ASSERT_FALSE(r.has_frames());
  const auto after = evaluate(ds.split("test"), student_predictor(s), 2, 10);
  ASSERT_EQ(before.predictions.size(), after.predictions.size());
  for (std::size_t i = 0; i < before.predictions.size(); ++i) {
    EXPECT_EQ(before.predictions[i].probabilities, after.predictions[i].probabilities);
  }
}

TEST_F(StudentDataTest, TrainingPreconditions) {
  const Dataset ds = load_dataset(root() / "data");
  Student needs_teacher(quick_student(teacher_->concat_width()));
  EXPECT_THROW(train_student(needs_teacher, ds, nullptr, root() / "bad1"), ConfigError);

  Student wrong_dim(quick_student(teacher_->concat_width() + 1));
  EXPECT_THROW(train_student(wrong_dim, ds, teacher_, root() / "bad2"), ConfigError);

  auto cfg = quick_student(teacher_->concat_width());
  cfg.n_subtasks = 5;
  Student wrong_subtasks(cfg);
  EXPECT_THROW(train_student(wrong_subtasks, ds, teacher_, root() / "bad3"), ConfigError);

  cfg = quick_student(teacher_->concat_width());
  cfg.k_classes = 3;
  Student wrong_k(cfg);
  EXPECT_THROW(train_student(wrong_k, ds, teacher_, root() / "bad4"), ConfigError);
}
