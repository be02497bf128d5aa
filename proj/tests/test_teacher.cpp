#include <gtest/gtest.h>

#include <Eigen/Geometry>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "skillsight/error.hpp"
#include "skillsight/synth.hpp"
#include "skillsight/teacher.hpp"

using namespace skillsight;
using ag::Matrix;
using ag::Var;

namespace {

bool same(const Var& a, const Var& b) { return a.value() == b.value(); }

double clip_loss(const Teacher& t, const TeacherInput& in, int label) {
  const int l[] = {label};
  return ag::cross_entropy(t.forward(in).logits, l).item();
}

}  // namespace

TEST(Teacher, EmbeddingShapes) {
  std::mt19937_64 rng(1);
  const auto cfg = fixture::tiny_teacher_config();
  const Teacher t(cfg);
  const auto e = t.forward(fixture::random_clip(rng), 0);
  EXPECT_EQ(e.e_v.rows(), 1);
  EXPECT_EQ(e.e_v.cols(), cfg.video.encoder.width);
  EXPECT_EQ(e.e_c.cols(), cfg.crop.temporal.width);
  EXPECT_EQ(e.e_g.cols(), cfg.gaze.encoder.width);
  EXPECT_EQ(e.concat().cols(), t.concat_width());
  ASSERT_EQ(e.logits.cols(), cfg.k_classes);
  EXPECT_TRUE(e.logits.value().allFinite());
  const auto p = softmax(e.logits.value());
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-12);
}

TEST(Teacher, ZeroLambdaEqualsHookRemoved) {
  std::mt19937_64 rng(2);
  auto with = fixture::tiny_teacher_config();
  with.attention.lambda_init = 0.0;
  auto without = with;
  without.masks.gaze_attention = false;
  const Teacher a(with), b(without);
  for (int i = 0; i < 3; ++i) {
    const auto in = prepare_teacher_input(fixture::random_clip(rng), 0, with);
    const auto ea = a.forward(in), eb = b.forward(in);
    EXPECT_TRUE(same(ea.e_v, eb.e_v));
    EXPECT_TRUE(same(ea.logits, eb.logits));
  }
}

TEST(Teacher, GazeAttentionChangesVideoEmbedding) {
  std::mt19937_64 rng(3);
  const auto cfg = fixture::tiny_teacher_config();
  auto off = cfg;
  off.masks.gaze_attention = false;
  const auto in = prepare_teacher_input(fixture::random_clip(rng), 0, cfg);
  EXPECT_FALSE(same(Teacher(cfg).encode_video(in), Teacher(off).encode_video(in)));
}

TEST(Teacher, LambdaGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto cfg = fixture::tiny_teacher_config();
  cfg.attention.lambda_init = 2.0;
  const Teacher t(cfg);
  std::vector<TeacherInput> batch;
  for (int i = 0; i < 2; ++i) batch.push_back(prepare_teacher_input(fixture::random_clip(rng), 0, cfg));
  const auto loss = [&] {
    const int labels[] = {0, 1};
    Var total = Var::scalar(0.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      total = ag::add(total, ag::cross_entropy(t.forward(batch[i]).logits, std::span(labels + i, 1)));
    }
    return total;
  };
  EXPECT_LE(oracle::worst_grad_error({t.lambda(0)}, loss, 1e-5), 1e-4);
}

TEST(Teacher, FusionGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto cfg = fixture::tiny_teacher_config();
  const Teacher t(cfg);
  const auto in = prepare_teacher_input(fixture::random_clip(rng), 0, cfg);
  std::vector<Var> fusion;
  for (const auto& [name, v] : t.params().entries()) {
    if (name.rfind("fusion.", 0) == 0) fusion.push_back(v);
  }
  ASSERT_EQ(fusion.size(), 6u);
  const auto loss = [&] {
    const int l[] = {1};
    return ag::cross_entropy(t.forward(in).logits, l);
  };
  EXPECT_LE(oracle::worst_grad_error(fusion, loss), 1e-4);
}

TEST(Teacher, CropBoxIsClampedInsideImage) {
  EXPECT_EQ(gaze_crop_box(0.9, 0.9, 0.3, 64, 64), (CropBox{44, 44, 20}));
}

TEST(Teacher, FullFrameCropAtCentreIsTheFrame) {
  std::mt19937_64 rng(6);
  auto cfg = fixture::tiny_teacher_config();
  cfg.crop.crop_frac = 1.0;
  cfg.crop.embedder.input_size = 32;
  auto clip = fixture::random_clip(rng);
  for (auto& g : clip.gaze) g.g2d = {0.5, 0.5};
  const auto in = prepare_teacher_input(clip, 0, cfg);
  Matrix full(16, 3 * 32 * 32);
  for (int f = 0; f < 16; ++f) {
    const auto chw = to_chw(clip.frames[static_cast<std::size_t>(f)]);
    for (std::size_t i = 0; i < chw.size(); ++i) full(f, static_cast<Eigen::Index>(i)) = chw[i];
  }
  EXPECT_EQ(in.crops, full);
  const Teacher t(cfg);
  TeacherInput by_hand = in;
  by_hand.crops = full;
  EXPECT_TRUE(same(t.encode_crops(in), t.encode_crops(by_hand)));
}

TEST(Teacher, CropEncoderIsOrderAware) {
  std::mt19937_64 rng(7);
  const auto cfg = fixture::tiny_teacher_config();
  const Teacher t(cfg);
  const auto in = prepare_teacher_input(fixture::random_clip(rng), 0, cfg);
  TeacherInput reversed = in;
  reversed.crops = in.crops.colwise().reverse();
  const Var a = t.encode_crops(in), b = t.encode_crops(reversed);
  EXPECT_GT((a.value() - b.value()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Teacher, GazeEncoderRejectsWrongWidth) {
  const Teacher t(fixture::tiny_teacher_config());
  EXPECT_THROW(t.encode_gaze_dynamics(Matrix::Zero(16, 14)), ShapeError);
  EXPECT_EQ(t.encode_gaze_dynamics(Matrix::Zero(16, gaze_features::kWidth)).cols(), 16);
}

TEST(Teacher, GazeEmbeddingInvariantToYawAndTranslation) {
  std::mt19937_64 rng(8);
  const Teacher t(fixture::tiny_teacher_config());
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto raw = oracle::random_sequence(16, rng);
    const Eigen::Quaterniond r(Eigen::AngleAxisd(u(rng), Eigen::Vector3d::UnitY()));
    const Eigen::Vector3d shift(u(rng), u(rng), u(rng));
    auto moved = raw;
    for (auto& s : moved) {
      s.fix3d = r * s.fix3d + shift;
      s.trans = r * s.trans + shift;
      s.rot = r * s.rot;
    }
    const Var a = t.encode_gaze_dynamics(normalize_clip_gaze(raw).features);
    const Var b = t.encode_gaze_dynamics(normalize_clip_gaze(moved).features);
    EXPECT_LE((a.value() - b.value()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Teacher, EveryMaskCombinationRuns) {
  std::mt19937_64 rng(9);
  const auto clip = fixture::random_clip(rng);
  for (int m = 0; m < 8; ++m) {
    auto cfg = fixture::tiny_teacher_config();
    cfg.masks = {(m & 1) != 0, (m & 2) != 0, (m & 4) != 0};
    const Teacher t(cfg);
    const auto e = t.forward(clip, 0);
    EXPECT_EQ(e.e_c.defined(), cfg.masks.crop_encoder);
    EXPECT_EQ(e.e_g.defined(), cfg.masks.gaze_encoder);
    EXPECT_EQ(e.concat().cols(), t.concat_width());
    EXPECT_TRUE(e.logits.value().allFinite()) << "mask " << m;
  }
}

TEST(Teacher, AllMasksOffIsThePlainVideoClassifier) {
  std::mt19937_64 rng(10);
  const auto full_cfg = fixture::tiny_teacher_config();
  auto off = full_cfg;
  off.masks = {false, false, false};
  const Teacher plain(plain_video_config(full_cfg)), masked(off), full(full_cfg);

  ASSERT_EQ(plain.params().entries().size(), masked.params().entries().size());
  for (std::size_t i = 0; i < plain.params().entries().size(); ++i) {
    EXPECT_EQ(plain.params().entries()[i].first, masked.params().entries()[i].first);
    EXPECT_EQ(plain.params().entries()[i].second.value(), masked.params().entries()[i].second.value());
  }
  // Video weights do not depend on which other branches exist.
  for (const auto& [name, v] : plain.params().entries()) {
    if (name.rfind("video.", 0) != 0) continue;
    EXPECT_EQ(v.value(), full.params().find(name)->value()) << name;
  }

  auto clip = fixture::random_clip(rng);
  const Var before = masked.forward(clip, 0).logits;
  EXPECT_TRUE(same(before, plain.forward(clip, 0).logits));
  auto moved = clip;
  for (auto& g : moved.gaze) {
    g.g2d = {0.1, 0.9};
    g.depth_m += 1.0;
  }
  EXPECT_TRUE(same(before, masked.forward(moved, 0).logits));
}

TEST(Teacher, EveryParameterReceivesGradient) {
  std::mt19937_64 rng(11);
  const auto cfg = fixture::tiny_teacher_config();
  Teacher t(cfg);
  t.params().zero_grad();
  for (int i = 0; i < 2; ++i) {
    const int l[] = {i};
    ag::cross_entropy(t.forward(fixture::random_clip(rng), 0).logits, l).backward();
  }
  for (const auto& [name, v] : t.params().entries()) {
    ASSERT_TRUE(v.has_grad()) << name;
    EXPECT_GT(v.grad().norm(), 0.0) << name;
  }
}

TEST(Teacher, RequiresFrames) {
  std::mt19937_64 rng(12);
  auto clip = fixture::random_clip(rng);
  clip.frames.clear();
  const Teacher t(fixture::tiny_teacher_config());
  EXPECT_THROW(t.forward(clip, 0), UnsupportedModalityError);
}

TEST(Teacher, WrongFrameCountIsAShapeError) {
  std::mt19937_64 rng(13);
  const Teacher t(fixture::tiny_teacher_config());
  EXPECT_THROW(t.forward(fixture::random_clip(rng, 32, 8), 0), ShapeError);
}

TEST(Teacher, ForwardIsDeterministic) {
  std::mt19937_64 rng(14);
  const auto cfg = fixture::tiny_teacher_config();
  const auto clip = fixture::random_clip(rng);
  EXPECT_TRUE(same(Teacher(cfg).forward(clip, 0).logits, Teacher(cfg).forward(clip, 0).logits));
}

TEST(Teacher, ConfigRoundTripAndErrors) {
  auto cfg = fixture::tiny_teacher_config();
  cfg.attention.lambda_by_scenario["court"] = 0.5;
  cfg.scenarios = {"court", "kitchen"};
  const auto back = TeacherConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());

  auto j = cfg.to_json();
  j["video"]["encoder"]["width"] = 15;
  try {
    TeacherConfig::from_json(j).validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/teacher/video"), std::string::npos) << e.what();
  }
  j = cfg.to_json();
  j["crop"]["bogus"] = 1;
  EXPECT_THROW(TeacherConfig::from_json(j), ConfigError);
}

TEST(Teacher, SaveLoadRoundTrip) {
  oracle::TempDir dir("teacher_ckpt");
  std::mt19937_64 rng(15);
  auto cfg = fixture::tiny_teacher_config();
  cfg.seed = 99;
  const Teacher t(cfg);
  t.save(dir.path() / "ckpt");
  const Teacher back = Teacher::load(dir.path() / "ckpt");
  const auto clip = fixture::random_clip(rng);
  EXPECT_TRUE(same(t.forward(clip, 0).logits, back.forward(clip, 0).logits));
  EXPECT_EQ(params_hash(t.params()), params_hash(back.params()));
}

namespace {

Dataset small_visual_dataset(const std::filesystem::path& root) {
  SynthTaskSpec spec;
  spec.kind = SynthTask::kVisuallySeparable;
  spec.n_per_class = 8;
  spec.image_size = 32;
  spec.duration_s = 8.0;
  spec.scenarios = {"default"};
  spec.train_fraction = 1.0;
  spec.val_fraction = 0.0;
  spec.seed = 21;
  generate_dataset(spec, default_profiles(spec), root);
  return load_dataset(root);
}

}  // namespace

TEST(TeacherTraining, LossHalvesAndRunsAreDeterministic) {
  oracle::TempDir dir("teacher_train");
  const Dataset ds = small_visual_dataset(dir.path() / "data");
  auto cfg = fixture::tiny_teacher_config();
  cfg.train.clips_per_recording = 2;  // 16 recordings -> 32 clips
  Teacher a(cfg), b(cfg);
  const auto ra = train_teacher(a, ds, dir.path() / "a");
  const auto rb = train_teacher(b, ds, dir.path() / "b");
  ASSERT_EQ(ra.train.epochs.size(), 15u);
  EXPECT_LT(ra.train.epochs.back().train_loss, 0.5 * ra.train.epochs.front().train_loss);
  EXPECT_EQ(params_hash(a.params()), params_hash(b.params()));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "a" / "metrics.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "a" / "checkpoint" / "checkpoint.json"));
}
