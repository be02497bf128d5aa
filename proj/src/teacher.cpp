#include "skillsight/teacher.hpp"

#include <algorithm>
#include <fstream>

#include "skillsight/config.hpp"
#include "skillsight/error.hpp"
#include "skillsight/log.hpp"
#include "skillsight/optim.hpp"
#include "skillsight/synth.hpp"

namespace skillsight {
namespace {

using ag::Matrix;
using ag::Var;

// Independent RNG streams per branch, so masking one branch leaves the
// initialization of the others untouched.
enum Stream : std::uint64_t { kVideoStream = 1, kCropStream = 2, kGazeStream = 3, kFusionStream = 4 };

nn::Rng stream_rng(std::uint64_t seed, Stream s) { return nn::Rng(derive_seed(seed, s)); }

Var first_row(const Var& x) { return ag::slice_rows(x, 0, 1); }

std::vector<double> square_chw(const Image& img, int size) {
  if (img.width == size && img.height == size) return to_chw(img);
  const int side = std::min(img.width, img.height);
  const CropBox box{(img.width - side) / 2, (img.height - side) / 2, side};
  return crop_resize_chw(img, box, size);
}

}  // namespace

void TeacherConfig::validate() const {
  validate_encoder(video.encoder, "/teacher/video");
  validate_encoder(crop.temporal, "/teacher/crop/temporal");
  validate_encoder(gaze.encoder, "/teacher/gaze");
  if (video.frames < 1) throw ConfigError("must be >= 1", "/teacher/video/frames");
  if (crop.embedder.out_width != crop.temporal.width) {
    throw ConfigError("crop embedder width must equal the temporal encoder width", "/teacher/crop/embedder/out_width");
  }
  if (crop.embedder.input_size < 4) throw ConfigError("must be >= 4", "/teacher/crop/embedder/input_size");
  if (!(crop.crop_frac > 0.0 && crop.crop_frac <= 1.0)) throw ConfigError("must be in (0,1]", "/teacher/crop/crop_frac");
  for (int w : fusion_hidden) {
    if (w <= 0) throw ConfigError("widths must be > 0", "/teacher/fusion_hidden");
  }
  if (k_classes < 2) throw ConfigError("must be >= 2", "/teacher/k_classes");
  if (scenarios.empty()) throw ConfigError("at least one scenario required", "/teacher/scenarios");
  try {
    attention.validate();
  } catch (const ConfigError& e) {
    throw e.within("/teacher/attention");
  }
  train.validate("/teacher/train");
}

nlohmann::json TeacherConfig::to_json() const {
  nlohmann::json lam = nlohmann::json::object();
  for (const auto& [k, v] : attention.lambda_by_scenario) lam[k] = v;
  return {
      {"video", {{"encoder", encoder_json(video.encoder)}, {"frames", video.frames}}},
      {"crop",
       {{"embedder",
         {{"input_size", crop.embedder.input_size},
          {"channels1", crop.embedder.channels1},
          {"channels2", crop.embedder.channels2},
          {"out_width", crop.embedder.out_width}}},
        {"temporal", encoder_json(crop.temporal)},
        {"crop_frac", crop.crop_frac}}},
      {"gaze", {{"encoder", encoder_json(gaze.encoder)}}},
      {"fusion_hidden", fusion_hidden},
      {"k_classes", k_classes},
      {"scenarios", scenarios},
      {"attention",
       {{"grid_p", attention.grid_p},
        {"patch_len", attention.patch_len},
        {"sigma", attention.sigma},
        {"lambda_init", attention.lambda_init},
        {"lambda_by_scenario", lam}}},
      {"masks",
       {{"gaze_attention", masks.gaze_attention},
        {"crop_encoder", masks.crop_encoder},
        {"gaze_encoder", masks.gaze_encoder}}},
      {"train", train.to_json()},
      {"seed", seed}};
}

TeacherConfig TeacherConfig::from_json(const nlohmann::json& j, const std::string& where) {
  TeacherConfig c;
  ObjectReader r(j, where.empty() || where[0] == '/' ? where : "/" + where);
  r.object("video", [&](ObjectReader& o) {
    read_encoder(o, "encoder", c.video.encoder);
    o.get("frames", c.video.frames);
  });
  r.object("crop", [&](ObjectReader& o) {
    o.object("embedder", [&](ObjectReader& e) {
      e.get("input_size", c.crop.embedder.input_size);
      e.get("channels1", c.crop.embedder.channels1);
      e.get("channels2", c.crop.embedder.channels2);
      e.get("out_width", c.crop.embedder.out_width);
    });
    read_encoder(o, "temporal", c.crop.temporal);
    o.get("crop_frac", c.crop.crop_frac);
  });
  r.object("gaze", [&](ObjectReader& o) { read_encoder(o, "encoder", c.gaze.encoder); });
  r.get("fusion_hidden", c.fusion_hidden);
  r.get("k_classes", c.k_classes);
  r.get("scenarios", c.scenarios);
  r.object("attention", [&](ObjectReader& o) {
    o.get("grid_p", c.attention.grid_p);
    o.get("patch_len", c.attention.patch_len);
    o.get("sigma", c.attention.sigma);
    o.get("lambda_init", c.attention.lambda_init);
    o.get("lambda_by_scenario", c.attention.lambda_by_scenario);
  });
  r.object("masks", [&](ObjectReader& o) {
    o.get("gaze_attention", c.masks.gaze_attention);
    o.get("crop_encoder", c.masks.crop_encoder);
    o.get("gaze_encoder", c.masks.gaze_encoder);
  });
  read_train_config(r, c.train);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

TeacherInput prepare_teacher_input(const Clip& clip, int scenario, const TeacherConfig& cfg) {
  if (!clip.has_frames()) {
    throw UnsupportedModalityError("teacher needs video frames; clip " + clip.key() + " has none");
  }
  const int frames = static_cast<int>(clip.frames.size());
  if (frames != cfg.video.frames) {
    throw ShapeError("clip " + clip.key() + " has " + std::to_string(frames) + " frames, teacher expects " +
                     std::to_string(cfg.video.frames));
  }
  const auto gaze = hold_last_valid(clip.gaze);
  const int p = cfg.attention.grid_p;
  const int len = cfg.attention.patch_len;
  const int size = cfg.attention.image_size();
  const int patch_dim = 3 * len * len;
  const int crop_size = cfg.crop.embedder.input_size;

  TeacherInput in;
  in.scenario = scenario;
  in.patches.resize(static_cast<ag::Index>(frames) * p * p, patch_dim);
  in.crops.resize(frames, 3 * crop_size * crop_size);
  for (int f = 0; f < frames; ++f) {
    const Image& img = clip.frames[static_cast<std::size_t>(f)];
    const auto chw = square_chw(img, size);
    const std::size_t plane = static_cast<std::size_t>(size) * size;
    for (int r = 0; r < p; ++r) {
      for (int c = 0; c < p; ++c) {
        auto row = in.patches.row(static_cast<ag::Index>(f) * p * p + r * p + c);
        for (int ch = 0; ch < 3; ++ch) {
          for (int dy = 0; dy < len; ++dy) {
            for (int dx = 0; dx < len; ++dx) {
              row(ch * len * len + dy * len + dx) =
                  chw[ch * plane + static_cast<std::size_t>(r * len + dy) * size + (c * len + dx)];
            }
          }
        }
      }
    }
    const auto& g = gaze[static_cast<std::size_t>(f)].g2d;
    const CropBox box = gaze_crop_box(g.x(), g.y(), cfg.crop.crop_frac, img.width, img.height);
    const auto crop = crop_resize_chw(img, box, crop_size);
    in.crops.row(f) = Eigen::Map<const ag::RowVector>(crop.data(), static_cast<ag::Index>(crop.size()));
  }
  in.gaze = normalize_clip_gaze(clip.gaze).features;
  in.gaze_map = clip_gaze_maps(gaze, cfg.attention);
  return in;
}

Var TeacherEmbeddings::concat() const {
  std::vector<Var> parts;
  for (const Var* v : {&e_v, &e_c, &e_g}) {
    if (v->defined()) parts.push_back(*v);
  }
  return ag::concat_cols(parts);
}

Teacher::Teacher(TeacherConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int p2 = cfg_.attention.grid_p * cfg_.attention.grid_p;
  const int frames = cfg_.video.frames;
  const auto& ve = cfg_.video.encoder;
  {
    nn::Rng rng = stream_rng(cfg_.seed, kVideoStream);
    const int patch_dim = 3 * cfg_.attention.patch_len * cfg_.attention.patch_len;
    patch_embed_ = nn::Linear(store_, "video.patch_embed", patch_dim, ve.width, rng);
    video_cls_ = store_.add("video.cls", nn::normal_init(1, ve.width, 0.02, rng));
    video_pos_ = store_.add("video.pos", nn::normal_init(1 + frames * p2, ve.width, 0.02, rng));
    for (int i = 0; i < ve.layers; ++i) {
      const std::string n = "video.block" + std::to_string(i);
      DividedBlock b;
      b.ln_t = nn::LayerNorm(store_, n + ".ln_t", ve.width);
      b.qkv_t = nn::Linear(store_, n + ".qkv_t", ve.width, 3 * ve.width, rng);
      b.proj_t = nn::Linear(store_, n + ".proj_t", ve.width, ve.width, rng);
      b.temporal_fc = nn::Linear(store_, n + ".temporal_fc", ve.width, ve.width, rng);
      b.ln_s = nn::LayerNorm(store_, n + ".ln_s", ve.width);
      b.qkv_s = nn::Linear(store_, n + ".qkv_s", ve.width, 3 * ve.width, rng);
      b.proj_s = nn::Linear(store_, n + ".proj_s", ve.width, ve.width, rng);
      b.ln_ffn = nn::LayerNorm(store_, n + ".ln_ffn", ve.width);
      b.ffn = nn::Mlp(store_, n + ".ffn", {ve.width, ve.mlp_ratio * ve.width, ve.width}, rng);
      video_blocks_.push_back(std::move(b));
    }
    video_ln_ = nn::LayerNorm(store_, "video.ln", ve.width);
  }
  // Temporal groups index the patch rows (cls excluded); spatial groups index
  // the full token matrix and share the cls row across frames.
  for (int j = 0; j < p2; ++j) {
    std::vector<ag::Index> g;
    for (int f = 0; f < frames; ++f) g.push_back(static_cast<ag::Index>(f) * p2 + j);
    temporal_groups_.push_back(std::move(g));
  }
  for (int f = 0; f < frames; ++f) {
    std::vector<ag::Index> g{0};
    for (int j = 0; j < p2; ++j) g.push_back(1 + static_cast<ag::Index>(f) * p2 + j);
    spatial_groups_.push_back(std::move(g));
  }
  if (cfg_.masks.gaze_attention) {
    for (const auto& s : cfg_.scenarios) {
      auto it = cfg_.attention.lambda_by_scenario.find(s);
      const double init = it == cfg_.attention.lambda_by_scenario.end() ? cfg_.attention.lambda_init : it->second;
      lambdas_.push_back(store_.add("video.lambda." + s, Matrix::Constant(1, 1, init)));
    }
  }
  if (cfg_.masks.crop_encoder) {
    nn::Rng rng = stream_rng(cfg_.seed, kCropStream);
    crop_embed_ = nn::ConvEmbedder(store_, "crop.embed", cfg_.crop.embedder, rng);
    crop_cls_ = store_.add("crop.cls", nn::normal_init(1, cfg_.crop.temporal.width, 0.02, rng));
    crop_temporal_ = nn::SequenceEncoder(store_, "crop.temporal", cfg_.crop.temporal, frames + 1, rng);
  }
  if (cfg_.masks.gaze_encoder) {
    nn::Rng rng = stream_rng(cfg_.seed, kGazeStream);
    gaze_embed_ = nn::Linear(store_, "gaze.embed", gaze_features::kWidth, cfg_.gaze.encoder.width, rng);
    gaze_cls_ = store_.add("gaze.cls", nn::normal_init(1, cfg_.gaze.encoder.width, 0.02, rng));
    gaze_encoder_ = nn::SequenceEncoder(store_, "gaze.encoder", cfg_.gaze.encoder, frames + 1, rng);
  }
  {
    nn::Rng rng = stream_rng(cfg_.seed, kFusionStream);
    std::vector<ag::Index> widths{concat_width()};
    for (int w : cfg_.fusion_hidden) widths.push_back(w);
    widths.push_back(cfg_.k_classes);
    fusion_ = nn::Mlp(store_, "fusion", widths, rng);
  }
}

int Teacher::concat_width() const {
  int w = cfg_.video.encoder.width;
  if (cfg_.masks.crop_encoder) w += cfg_.crop.temporal.width;
  if (cfg_.masks.gaze_encoder) w += cfg_.gaze.encoder.width;
  return w;
}

Var Teacher::lambda(int scenario) const {
  if (!cfg_.masks.gaze_attention) return Var();
  if (scenario < 0 || scenario >= static_cast<int>(lambdas_.size())) {
    throw ConfigError("scenario index " + std::to_string(scenario) + " out of range");
  }
  return lambdas_[static_cast<std::size_t>(scenario)];
}

Var Teacher::divided_block(const DividedBlock& b, const Var& x, const Var& spatial_bias) const {
  const int width = cfg_.video.encoder.width;
  const int heads = cfg_.video.encoder.heads;
  const ag::Index n_patch = x.rows() - 1;

  Var cls = ag::slice_rows(x, 0, 1);
  Var xp = ag::slice_rows(x, 1, n_patch);
  Var h = b.qkv_t(b.ln_t(xp));
  Var a = ag::grouped_attention(ag::slice_cols(h, 0, width), ag::slice_cols(h, width, width),
                                ag::slice_cols(h, 2 * width, width), temporal_groups_, heads);
  xp = ag::add(xp, b.temporal_fc(b.proj_t(a)));

  const Var rows[] = {cls, xp};
  Var y = ag::concat_rows(rows);
  h = b.qkv_s(b.ln_s(y));
  a = ag::grouped_attention(ag::slice_cols(h, 0, width), ag::slice_cols(h, width, width),
                            ag::slice_cols(h, 2 * width, width), spatial_groups_, heads, spatial_bias);
  y = ag::add(y, b.proj_s(a));
  return ag::add(y, b.ffn(b.ln_ffn(y)));
}

Var Teacher::encode_video(const TeacherInput& in) const {
  const int p2 = cfg_.attention.grid_p * cfg_.attention.grid_p;
  const int frames = cfg_.video.frames;
  if (in.patches.rows() != static_cast<ag::Index>(frames) * p2 ||
      in.patches.cols() != patch_embed_.in_features()) {
    throw ShapeError("encode_video: patch matrix is " + std::to_string(in.patches.rows()) + "x" +
                     std::to_string(in.patches.cols()));
  }
  Var tokens = patch_embed_(ag::constant(in.patches));
  const Var rows[] = {video_cls_, tokens};
  Var x = ag::add(ag::concat_rows(rows), video_pos_);

  Var bias;
  if (cfg_.masks.gaze_attention) {
    Matrix b = Matrix::Zero(frames, 1 + p2);
    b.rightCols(p2) = in.gaze_map;
    bias = ag::mul_scalar(ag::constant(std::move(b)), lambda(in.scenario));
  }
  for (std::size_t i = 0; i < video_blocks_.size(); ++i) {
    // Gaze prior only in the first spatial attention.
    x = divided_block(video_blocks_[i], x, i == 0 ? bias : Var());
  }
  return first_row(video_ln_(x));
}

Var Teacher::encode_crops(const TeacherInput& in) const {
  if (!cfg_.masks.crop_encoder) throw ConfigError("crop encoder is masked off");
  Var emb = crop_embed_(ag::constant(in.crops));
  const Var rows[] = {crop_cls_, emb};
  return first_row(crop_temporal_(ag::concat_rows(rows)));
}

Var Teacher::encode_gaze_dynamics(const Matrix& gaze_features) const {
  if (!cfg_.masks.gaze_encoder) throw ConfigError("gaze encoder is masked off");
  if (gaze_features.cols() != gaze_features::kWidth) {
    throw ShapeError("encode_gaze_dynamics: expected " + std::to_string(gaze_features::kWidth) +
                     " feature columns, got " + std::to_string(gaze_features.cols()));
  }
  Var emb = gaze_embed_(ag::constant(gaze_features));
  const Var rows[] = {gaze_cls_, emb};
  return first_row(gaze_encoder_(ag::concat_rows(rows)));
}

TeacherEmbeddings Teacher::forward(const TeacherInput& in) const {
  TeacherEmbeddings e;
  e.e_v = encode_video(in);
  if (cfg_.masks.crop_encoder) e.e_c = encode_crops(in);
  if (cfg_.masks.gaze_encoder) e.e_g = encode_gaze_dynamics(in.gaze);
  e.logits = fusion_(e.concat());
  return e;
}

void Teacher::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  nlohmann::json x = extra;
  nlohmann::json lam = nlohmann::json::object();
  for (std::size_t i = 0; i < lambdas_.size(); ++i) lam[cfg_.scenarios[i]] = lambdas_[i].value()(0, 0);
  x["lambda"] = lam;
  save_checkpoint(dir, "teacher", cfg_.to_json(), store_, x);
}

Teacher Teacher::load(const std::filesystem::path& dir) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.kind != "teacher") throw FormatError(dir.string() + " is a " + meta.kind + " checkpoint, not a teacher");
  Teacher t(TeacherConfig::from_json(meta.config));
  load_checkpoint_params(dir, t.store_);
  return t;
}

TeacherConfig plain_video_config(TeacherConfig cfg) {
  cfg.masks = {false, false, false};
  return cfg;
}

namespace {

int argmax_row(const Matrix& m) {
  ag::Index best = 0;
  for (ag::Index j = 1; j < m.cols(); ++j) {
    if (m(0, j) > m(0, best)) best = j;
  }
  return static_cast<int>(best);
}

int scenario_of(const TeacherConfig& cfg, const std::string& name) {
  auto it = std::find(cfg.scenarios.begin(), cfg.scenarios.end(), name);
  if (it == cfg.scenarios.end()) throw ConfigError("scenario " + name + " unknown to the model");
  return static_cast<int>(it - cfg.scenarios.begin());
}

}  // namespace

ClipPredictor teacher_predictor(const Teacher& teacher, const DatasetInfo&) {
  return [&teacher](const Recording& rec, const Clip& clip) {
    ag::NoGradGuard guard;
    const auto e = teacher.forward(clip, scenario_of(teacher.config(), rec.scenario));
    return softmax(e.logits.value());
  };
}

TeacherTrainResult train_teacher(Teacher& teacher, const Dataset& data, const std::filesystem::path& out_dir) {
  const auto& cfg = teacher.config();
  if (data.info.k_classes != cfg.k_classes) {
    throw ConfigError("dataset has " + std::to_string(data.info.k_classes) + " classes, teacher expects " +
                      std::to_string(cfg.k_classes));
  }
  const auto train = data.split("train");
  const auto val = data.split("val");
  if (train.empty()) throw EmptyInputError("dataset has no training recordings");

  std::vector<TeacherInput> inputs;
  std::vector<int> labels;
  for (const Recording* r : train) {
    for (const auto& clip : segment_clips(*r, cfg.train.clips_per_recording)) {
      inputs.push_back(prepare_teacher_input(clip, scenario_of(cfg, r->scenario), cfg));
      labels.push_back(r->skill);
    }
  }
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
    log_warning("training set has a single class; the majority baseline is degenerate");
  }

  struct ValItem {
    std::vector<TeacherInput> clips;
    int label;
  };
  std::vector<ValItem> val_items;
  for (const Recording* r : val) {
    ValItem item{{}, r->skill};
    for (const auto& clip : segment_clips(*r, cfg.train.val_clips)) {
      item.clips.push_back(prepare_teacher_input(clip, scenario_of(cfg, r->scenario), cfg));
    }
    val_items.push_back(std::move(item));
  }

  optim::Sgd sgd(teacher.params().vars(), cfg.train.lr, cfg.train.momentum, cfg.train.weight_decay);
  TrainHooks hooks;
  hooks.n_items = inputs.size();
  hooks.step = [&](std::size_t i) {
    StepResult s;
    const auto e = teacher.forward(inputs[i]);
    const int label[] = {labels[i]};
    s.loss = ag::cross_entropy(e.logits, label);
    s.predicted = argmax_row(e.logits.value());
    s.label = labels[i];
    return s;
  };
  if (!val_items.empty()) {
    hooks.validate = [&]() {
      ag::NoGradGuard guard;
      int correct = 0;
      for (const auto& item : val_items) {
        std::vector<std::vector<double>> probs;
        for (const auto& in : item.clips) probs.push_back(softmax(teacher.forward(in).logits.value()));
        correct += average_and_predict(probs) == item.label ? 1 : 0;
      }
      return static_cast<double>(correct) / static_cast<double>(val_items.size());
    };
  }
  hooks.apply = [&]() { sgd.step(); };

  std::filesystem::create_directories(out_dir);
  TeacherTrainResult result;
  result.train = train_loop(teacher.params(), hooks, cfg.train, derive_seed(cfg.seed, 100),
                            out_dir / "metrics.jsonl");
  if (!val.empty()) {
    std::map<std::string, std::vector<int>> ref;
    for (const Recording* r : train) ref[r->scenario].push_back(r->skill);
    result.val = evaluate(val, teacher_predictor(teacher, data.info), cfg.k_classes, cfg.train.eval_clips, ref);
    std::ofstream(out_dir / "val_report.json") << result.val.to_json().dump(2) << '\n';
  }
  teacher.save(out_dir / "checkpoint",
               {{"best_epoch", result.train.best_epoch}, {"best_val_accuracy", result.train.best_val_accuracy}});
  return result;
}

}  // namespace skillsight
