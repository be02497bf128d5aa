#include "skillsight/student.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "skillsight/config.hpp"
#include "skillsight/error.hpp"
#include "skillsight/log.hpp"
#include "skillsight/optim.hpp"
#include "skillsight/synth.hpp"

namespace skillsight {
namespace fs = std::filesystem;
using ag::Matrix;
using ag::Var;

namespace {

enum Stream : std::uint64_t { kCoreStream = 11, kActionStream = 12, kStudentProjStream = 13, kTeacherProjStream = 14 };

int argmax_row(const Matrix& m) {
  ag::Index best = 0;
  for (ag::Index j = 1; j < m.cols(); ++j) {
    if (m(0, j) > m(0, best)) best = j;
  }
  return static_cast<int>(best);
}

std::string clip_cache_key(const Clip& clip) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](double v) {
    const auto* p = reinterpret_cast<const unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(double); ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& g : clip.gaze) {
    mix(g.time_s);
    mix(g.g2d.x());
    mix(g.g2d.y());
  }
  std::ostringstream os;
  os << clip.key() << '-' << std::hex << h;
  std::string key = os.str();
  std::replace(key.begin(), key.end(), '#', '_');
  std::replace(key.begin(), key.end(), '/', '_');
  return key;
}

Recording without_frames(const Recording& r) {
  Recording copy = r;
  copy.frames.reset();
  return copy;
}

}  // namespace

void StudentConfig::validate() const {
  validate_encoder(encoder, "/student/encoder");
  if (frames < 1) throw ConfigError("must be >= 1", "/student/frames");
  if (common_dim < 0) throw ConfigError("must be >= 0", "/student/common_dim");
  if (teacher_dim < 0) throw ConfigError("must be >= 0", "/student/teacher_dim");
  if (lambda_dis < 0.0) throw ConfigError("must be >= 0", "/student/lambda_dis");
  if (lambda_act < 0.0) throw ConfigError("must be >= 0", "/student/lambda_act");
  if (k_classes < 2) throw ConfigError("must be >= 2", "/student/k_classes");
  if (n_subtasks < 1) throw ConfigError("must be >= 1", "/student/n_subtasks");
  train.validate("/student/train");
}

nlohmann::json StudentConfig::to_json() const {
  return {{"encoder", encoder_json(encoder)}, {"frames", frames},         {"common_dim", common_dim},
          {"teacher_dim", teacher_dim},       {"lambda_dis", lambda_dis}, {"lambda_act", lambda_act},
          {"distill", distill},               {"action", action},         {"k_classes", k_classes},
          {"n_subtasks", n_subtasks},         {"train", train.to_json()}, {"seed", seed}};
}

StudentConfig StudentConfig::from_json(const nlohmann::json& j, const std::string& where) {
  StudentConfig c;
  ObjectReader r(j, where);
  read_encoder(r, "encoder", c.encoder);
  r.get("frames", c.frames);
  r.get("common_dim", c.common_dim);
  r.get("teacher_dim", c.teacher_dim);
  r.get("lambda_dis", c.lambda_dis);
  r.get("lambda_act", c.lambda_act);
  r.get("distill", c.distill);
  r.get("action", c.action);
  r.get("k_classes", c.k_classes);
  r.get("n_subtasks", c.n_subtasks);
  read_train_config(r, c.train);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

Student::Student(StudentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int w = cfg_.encoder.width;
  {
    nn::Rng rng(derive_seed(cfg_.seed, kCoreStream));
    tokens_ = store_.add("student.tokens", nn::normal_init(3, w, 0.02, rng));
    gaze_embed_ = nn::Linear(store_, "student.gaze_embed", gaze_features::kWidth, w, rng);
    encoder_ = nn::SequenceEncoder(store_, "student.encoder", cfg_.encoder, 3 + cfg_.frames, rng);
    skill_head_ = nn::Linear(store_, "student.skill_head", w, cfg_.k_classes, rng);
  }
  {
    nn::Rng rng(derive_seed(cfg_.seed, kActionStream));
    action_head_ = nn::Linear(store_, "student.action_head", w, cfg_.n_subtasks, rng);
  }
  {
    nn::Rng rng(derive_seed(cfg_.seed, kStudentProjStream));
    f_p_ = nn::Linear(store_, "student.f_p", w, cfg_.projection_dim(), rng);
  }
  if (cfg_.teacher_dim > 0) {
    nn::Rng rng(derive_seed(cfg_.seed, kTeacherProjStream));
    f_t_ = nn::Linear(store_, "student.f_t", cfg_.teacher_dim, cfg_.projection_dim(), rng);
  }
}

StudentOutput Student::forward(const NormalizedGaze& gaze) const { return forward(gaze.features); }

StudentOutput Student::forward(const Matrix& gaze_features) const {
  if (gaze_features.cols() != gaze_features::kWidth) {
    throw ShapeError("student: expected " + std::to_string(gaze_features::kWidth) + " feature columns, got " +
                     std::to_string(gaze_features.cols()));
  }
  if (gaze_features.rows() != cfg_.frames) {
    throw ShapeError("student: expected " + std::to_string(cfg_.frames) + " gaze rows, got " +
                     std::to_string(gaze_features.rows()));
  }
  const Var rows[] = {tokens_, gaze_embed_(ag::constant(gaze_features))};
  Var h = encoder_(ag::concat_rows(rows));
  StudentOutput out;
  out.skill_logits = skill_head_(ag::slice_rows(h, 0, 1));
  out.e_s_hat = ag::slice_rows(h, 1, 1);
  out.action_logits = action_head_(ag::slice_rows(h, 2, 1));
  return out;
}

Var Student::project_student(const Var& e_s_hat) const { return f_p_(e_s_hat); }

Var Student::project_teacher(const Matrix& teacher_concat) const {
  if (cfg_.teacher_dim == 0) throw ConfigError("student was built without a teacher projection");
  if (teacher_concat.cols() != cfg_.teacher_dim) {
    throw ShapeError("teacher embedding width " + std::to_string(teacher_concat.cols()) + " != configured " +
                     std::to_string(cfg_.teacher_dim));
  }
  return f_t_(ag::constant(teacher_concat));
}

Var Student::distillation_loss(const Var& e_s_hat, const Matrix& teacher_concat) const {
  Var a = project_student(e_s_hat);
  Var b = project_teacher(teacher_concat);
  if (a.cols() != b.cols()) {
    throw ShapeError("projected widths differ: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  }
  return ag::l1_mean(a, b);
}

Student::Loss Student::loss(const StudentOutput& out, int label, int subtask, const Matrix* teacher_concat) const {
  Loss l;
  const int y[] = {label};
  Var total = ag::cross_entropy(out.skill_logits, y);
  l.ce = total.item();
  if (cfg_.distill) {
    if (teacher_concat == nullptr) throw ConfigError("distillation enabled but no teacher embedding given");
    Var d = distillation_loss(out.e_s_hat, *teacher_concat);
    l.dis = d.item();
    total = ag::add(total, ag::scale(d, cfg_.lambda_dis));
  }
  if (cfg_.action) {
    if (subtask < 0 || subtask >= cfg_.n_subtasks) {
      throw ConfigError("subtask label " + std::to_string(subtask) + " outside [0, n_subtasks)");
    }
    const int a[] = {subtask};
    Var act = ag::cross_entropy(out.action_logits, a);
    l.act = act.item();
    total = ag::add(total, ag::scale(act, cfg_.lambda_act));
  }
  l.total = total;
  return l;
}

void Student::save(const fs::path& dir, const nlohmann::json& extra) const {
  save_checkpoint(dir, "student", cfg_.to_json(), store_, extra);
}

Student Student::load(const fs::path& dir) {
  const auto meta = read_checkpoint_meta(dir);
  if (meta.kind != "student") throw FormatError(dir.string() + " is a " + meta.kind + " checkpoint, not a student");
  Student s(StudentConfig::from_json(meta.config));
  load_checkpoint_params(dir, s.store_);
  return s;
}

EmbeddingCache::EmbeddingCache(fs::path root, std::string teacher_hash) : dir_(std::move(root) / teacher_hash) {
  fs::create_directories(dir_);
}

fs::path EmbeddingCache::path_for(const std::string& clip_key) const { return dir_ / (clip_key + ".bin"); }

std::optional<Matrix> EmbeddingCache::get(const std::string& clip_key) const {
  std::ifstream in(path_for(clip_key), std::ios::binary);
  if (!in) return std::nullopt;
  std::int64_t shape[2];
  in.read(reinterpret_cast<char*>(shape), sizeof(shape));
  if (!in || shape[0] <= 0 || shape[1] <= 0) return std::nullopt;
  Matrix m(shape[0], shape[1]);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  if (!in) return std::nullopt;
  return m;
}

void EmbeddingCache::put(const std::string& clip_key, const Matrix& value) const {
  static std::atomic<unsigned> counter{0};
  const fs::path final_path = path_for(clip_key);
  const fs::path tmp = final_path.string() + ".tmp" + std::to_string(::getpid()) + "_" + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const std::int64_t shape[2] = {value.rows(), value.cols()};
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(value.data()), static_cast<std::streamsize>(value.size() * sizeof(double)));
    if (!out) throw Error("failed writing cache file " + tmp.string());
  }
  fs::rename(tmp, final_path);
}

ClipPredictor student_predictor(const Student& student) {
  return [&student](const Recording&, const Clip& clip) {
    ag::NoGradGuard guard;
    return softmax(student.forward(normalize_clip_gaze(clip.gaze)).skill_logits.value());
  };
}

StudentTrainResult train_student(Student& student, const Dataset& data, const Teacher* teacher,
                                 const fs::path& out_dir, const fs::path& cache_root) {
  const auto& cfg = student.config();
  if (data.info.k_classes != cfg.k_classes) {
    throw ConfigError("dataset has " + std::to_string(data.info.k_classes) + " classes, student expects " +
                      std::to_string(cfg.k_classes));
  }
  if (cfg.distill) {
    if (teacher == nullptr) throw ConfigError("distillation needs a teacher checkpoint", "/student/distill");
    if (teacher->config().k_classes != cfg.k_classes) {
      throw ConfigError("teacher has " + std::to_string(teacher->config().k_classes) + " classes, dataset has " +
                        std::to_string(cfg.k_classes));
    }
    if (teacher->concat_width() != cfg.teacher_dim) {
      throw ConfigError("teacher embedding width " + std::to_string(teacher->concat_width()) +
                            " != student teacher_dim " + std::to_string(cfg.teacher_dim),
                        "/student/teacher_dim");
    }
  }
  if (cfg.action) {
    if (data.info.subtasks.empty()) throw ConfigError("action loss needs subtask labels", "/student/action");
    if (static_cast<int>(data.info.subtasks.size()) != cfg.n_subtasks) {
      throw ConfigError("dataset has " + std::to_string(data.info.subtasks.size()) + " subtasks, student expects " +
                            std::to_string(cfg.n_subtasks),
                        "/student/n_subtasks");
    }
  }
  const auto train = data.split("train");
  const auto val = data.split("val");
  if (train.empty()) throw EmptyInputError("dataset has no training recordings");

  std::optional<EmbeddingCache> cache;
  if (cfg.distill) {
    const fs::path root = cache_root.empty() ? out_dir / "teacher_cache" : cache_root;
    cache.emplace(root, params_hash(teacher->params()));
  }

  struct Item {
    Matrix gaze;
    Matrix teacher;
    int label = 0;
    int subtask = 0;
  };
  std::vector<Item> items;
  std::size_t cache_hits = 0;
  for (const Recording* r : train) {
    const Recording source = cfg.distill ? *r : without_frames(*r);
    for (const auto& clip : segment_clips(source, cfg.train.clips_per_recording)) {
      Item it;
      it.gaze = normalize_clip_gaze(clip.gaze).features;
      it.label = r->skill;
      it.subtask = cfg.action ? data.info.subtask_index(r->subtask) : 0;
      if (cfg.distill) {
        const std::string key = clip_cache_key(clip);
        if (auto hit = cache->get(key)) {
          it.teacher = *hit;
          ++cache_hits;
        } else {
          ag::NoGradGuard guard;
          auto scenario = std::find(teacher->config().scenarios.begin(), teacher->config().scenarios.end(),
                                    r->scenario);
          if (scenario == teacher->config().scenarios.end()) {
            throw ConfigError("scenario " + r->scenario + " unknown to the teacher");
          }
          it.teacher = teacher
                           ->forward(clip, static_cast<int>(scenario - teacher->config().scenarios.begin()))
                           .concat()
                           .value();
          cache->put(key, it.teacher);
        }
      }
      items.push_back(std::move(it));
    }
  }
  if (cfg.distill) {
    log_info("teacher embeddings: " + std::to_string(cache_hits) + " cached, " +
             std::to_string(items.size() - cache_hits) + " computed");
  }

  std::vector<Recording> val_recs;
  for (const Recording* r : val) val_recs.push_back(without_frames(*r));
  struct ValItem {
    std::vector<Matrix> clips;
    int label;
  };
  std::vector<ValItem> val_items;
  for (const auto& r : val_recs) {
    ValItem v{{}, r.skill};
    for (const auto& clip : segment_clips(r, cfg.train.val_clips)) v.clips.push_back(normalize_clip_gaze(clip.gaze).features);
    val_items.push_back(std::move(v));
  }

  optim::AdamW adamw(student.params().vars(), cfg.train.lr, cfg.train.weight_decay);
  TrainHooks hooks;
  hooks.n_items = items.size();
  hooks.step = [&](std::size_t i) {
    const auto& it = items[i];
    const auto out = student.forward(it.gaze);
    const auto l = student.loss(out, it.label, it.subtask, cfg.distill ? &it.teacher : nullptr);
    StepResult s;
    s.loss = l.total;
    s.predicted = argmax_row(out.skill_logits.value());
    s.label = it.label;
    s.terms = {{"loss_ce", l.ce}};
    if (cfg.distill) s.terms["loss_dis"] = l.dis;
    if (cfg.action) s.terms["loss_act"] = l.act;
    return s;
  };
  if (!val_items.empty()) {
    hooks.validate = [&]() {
      ag::NoGradGuard guard;
      int correct = 0;
      for (const auto& v : val_items) {
        std::vector<std::vector<double>> probs;
        for (const auto& g : v.clips) probs.push_back(softmax(student.forward(g).skill_logits.value()));
        correct += average_and_predict(probs) == v.label ? 1 : 0;
      }
      return static_cast<double>(correct) / static_cast<double>(val_items.size());
    };
  }
  hooks.apply = [&]() { adamw.step(); };

  fs::create_directories(out_dir);
  StudentTrainResult result;
  result.train = train_loop(student.params(), hooks, cfg.train, derive_seed(cfg.seed, 200), out_dir / "metrics.jsonl");
  if (!val_recs.empty()) {
    std::vector<const Recording*> ptrs;
    for (const auto& r : val_recs) ptrs.push_back(&r);
    std::map<std::string, std::vector<int>> ref;
    for (const Recording* r : train) ref[r->scenario].push_back(r->skill);
    result.val = evaluate(ptrs, student_predictor(student), cfg.k_classes, cfg.train.eval_clips, ref);
    std::ofstream(out_dir / "val_report.json") << result.val.to_json().dump(2) << '\n';
  }
  nlohmann::json extra = {{"best_epoch", result.train.best_epoch},
                          {"best_val_accuracy", result.train.best_val_accuracy}};
  if (teacher) extra["teacher_hash"] = params_hash(teacher->params());
  student.save(out_dir / "checkpoint", extra);
  return result;
}

}  // namespace skillsight
