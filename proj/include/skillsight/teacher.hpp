#pragma once

// Multimodal teacher: gaze-biased divided space-time video transformer, gaze
// crop sequence encoder and gaze-dynamics encoder fused by an MLP.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillsight/gaze.hpp"
#include "skillsight/gaze_attention.hpp"
#include "skillsight/nn.hpp"
#include "skillsight/training.hpp"

namespace skillsight {

struct VideoEncoderConfig {
  nn::EncoderConfig encoder{4, 4, 128, 4};
  int frames = 16;
};

struct CropEncoderConfig {
  nn::ConvEmbedderConfig embedder{16, 16, 32, 64};
  nn::EncoderConfig temporal{2, 4, 64, 4};
  double crop_frac = 0.25;
};

struct GazeEncoderConfig {
  nn::EncoderConfig encoder{4, 4, 64, 4};
};

// Disabled branches are not built at all.
struct TeacherMasks {
  bool gaze_attention = true;
  bool crop_encoder = true;
  bool gaze_encoder = true;
};

struct TeacherConfig {
  VideoEncoderConfig video;
  CropEncoderConfig crop;
  GazeEncoderConfig gaze;
  std::vector<int> fusion_hidden{128, 64};
  int k_classes = 2;
  std::vector<std::string> scenarios{"default"};
  AttentionConfig attention;
  TeacherMasks masks;
  TrainConfig train;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TeacherConfig from_json(const nlohmann::json& j, const std::string& where = "teacher");
};

// Clip tensors in the layout the encoders consume.
struct TeacherInput {
  ag::Matrix patches;   // frames*p^2 x 3*L*L, frame-major, patch row-major
  ag::Matrix crops;     // frames x 3*s*s
  ag::Matrix gaze;      // frames x gaze_features::kWidth
  ag::Matrix gaze_map;  // frames x p^2
  int scenario = 0;
};

// Throws UnsupportedModalityError when the clip has no frames.
TeacherInput prepare_teacher_input(const Clip& clip, int scenario, const TeacherConfig& cfg);

struct TeacherEmbeddings {
  ag::Var e_v, e_c, e_g;  // undefined when the branch is masked
  ag::Var logits;          // 1 x K
  // [e_v, e_c, e_g] of the enabled branches, 1 x concat_width().
  ag::Var concat() const;
};

class Teacher {
 public:
  explicit Teacher(TeacherConfig cfg);

  TeacherEmbeddings forward(const TeacherInput& in) const;
  TeacherEmbeddings forward(const Clip& clip, int scenario) const {
    return forward(prepare_teacher_input(clip, scenario, cfg_));
  }

  ag::Var encode_video(const TeacherInput& in) const;
  ag::Var encode_crops(const TeacherInput& in) const;
  ag::Var encode_gaze_dynamics(const ag::Matrix& gaze_features) const;

  const TeacherConfig& config() const { return cfg_; }
  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  int concat_width() const;
  // Gaze-attention strength for a scenario; undefined when the hook is off.
  ag::Var lambda(int scenario) const;

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Teacher load(const std::filesystem::path& dir);

 private:
  struct DividedBlock {
    nn::LayerNorm ln_t, ln_s, ln_ffn;
    nn::Linear qkv_t, proj_t, temporal_fc, qkv_s, proj_s;
    nn::Mlp ffn;
  };

  ag::Var divided_block(const DividedBlock& b, const ag::Var& x, const ag::Var& spatial_bias) const;

  TeacherConfig cfg_;
  nn::ParamStore store_;
  // video
  nn::Linear patch_embed_;
  ag::Var video_cls_, video_pos_;
  std::vector<DividedBlock> video_blocks_;
  nn::LayerNorm video_ln_;
  std::vector<ag::Var> lambdas_;
  nn::Groups temporal_groups_, spatial_groups_;
  // crops
  nn::ConvEmbedder crop_embed_;
  ag::Var crop_cls_;
  nn::SequenceEncoder crop_temporal_;
  // gaze
  nn::Linear gaze_embed_;
  ag::Var gaze_cls_;
  nn::SequenceEncoder gaze_encoder_;
  // fusion
  nn::Mlp fusion_;
};

// Plain video classifier: the video encoder and fusion head alone, with no
// gaze input anywhere. Built from the same seed streams as Teacher so that an
// all-masks-off teacher matches it exactly.
TeacherConfig plain_video_config(TeacherConfig cfg);

struct TeacherTrainResult {
  TrainResult train;
  EvalReport val;
};

// Trains on the dataset's train split, selects on val, writes checkpoint,
// metrics.jsonl and val_report.json under out_dir.
TeacherTrainResult train_teacher(Teacher& teacher, const Dataset& data, const std::filesystem::path& out_dir);

ClipPredictor teacher_predictor(const Teacher& teacher, const DatasetInfo& info);

}  // namespace skillsight
