#include "skillsight/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "skillsight/config.hpp"
#include "skillsight/error.hpp"
#include "skillsight/log.hpp"

namespace skillsight {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

json power_constants_json(const power::PowerConstants& c) { return c.to_json(); }

}  // namespace

SynthTaskSpec synth_spec_from_json(const json& j, const std::string& where) {
  SynthTaskSpec s;
  ObjectReader r(j, where);
  std::string task = to_string(s.kind);
  r.get("task", task);
  try {
    s.kind = parse_synth_task(task);
  } catch (const ConfigError& e) {
    throw ConfigError("unknown task kind " + task, r.child("task"));
  }
  r.get("n_per_class", s.n_per_class);
  r.get("k_classes", s.k_classes);
  r.get("n_subtasks", s.n_subtasks);
  r.get("seed", s.seed);
  r.get("scenarios", s.scenarios);
  r.get("duration_s", s.duration_s);
  r.get("gaze_rate_hz", s.gaze_rate_hz);
  r.get("frame_rate_hz", s.frame_rate_hz);
  r.get("image_size", s.image_size);
  r.get("n_blobs", s.n_blobs);
  r.get("label_noise", s.label_noise);
  r.get("blink_rate_hz", s.blink_rate_hz);
  r.get("train_fraction", s.train_fraction);
  r.get("val_fraction", s.val_fraction);
  r.finish();
  return s;
}

void ExperimentConfig::apply_seed() {
  if (!seed) return;
  synth.seed = *seed;
  teacher.seed = *seed;
  student.seed = *seed;
}

void ExperimentConfig::validate() const {
  try {
    synth.validate();
  } catch (const ConfigError& e) {
    throw e.within("/synth");
  }
  teacher.validate();
  student.validate();
  try {
    power.validate();
  } catch (const ConfigError& e) {
    throw e.within("/power");
  }
  if (!(power_interval_s > 0.0)) throw ConfigError("must be > 0", "/power_interval_s");
  if (!(analysis.dispersion_deg > 0.0)) throw ConfigError("must be > 0", "/analysis/dispersion_deg");
  if (!(analysis.min_fixation_s > 0.0)) throw ConfigError("must be > 0", "/analysis/min_fixation_s");
}

json ExperimentConfig::to_json() const {
  json j = {{"data", data},
            {"out", out},
            {"synth", synth.to_json()},
            {"profiles", profiles},
            {"teacher", teacher.to_json()},
            {"student", student.to_json()},
            {"power", power_constants_json(power)},
            {"power_interval_s", power_interval_s},
            {"analysis",
             {{"dispersion_deg", analysis.dispersion_deg},
              {"min_fixation_s", analysis.min_fixation_s},
              {"movement_depth_m", analysis.movement_depth_m}}},
            {"roi", roi}};
  j["seed"] = seed ? json(*seed) : json(nullptr);
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.get("data", c.data);
  r.get("out", c.out);
  {
    json seed;
    r.get("seed", seed);
    if (!seed.is_null()) {
      if (!seed.is_number_unsigned()) throw ConfigError("must be a non-negative integer", "/seed");
      c.seed = seed.get<std::uint64_t>();
    }
  }
  json sub;
  sub = nullptr;
  r.get("synth", sub);
  if (!sub.is_null()) c.synth = synth_spec_from_json(sub);
  r.get("profiles", c.profiles);
  sub = nullptr;
  r.get("teacher", sub);
  if (!sub.is_null()) c.teacher = TeacherConfig::from_json(sub, "/teacher");
  sub = nullptr;
  r.get("student", sub);
  if (!sub.is_null()) c.student = StudentConfig::from_json(sub, "/student");
  r.object("power", [&](ObjectReader& o) {
    o.get("alpha_pj_per_mac", c.power.alpha_pj_per_mac);
    o.get("beta_pj_per_byte", c.power.beta_pj_per_byte);
    std::map<std::string, double> gamma;
    o.get("gamma_mw", gamma);
    for (const auto& [k, v] : gamma) c.power.gamma_mw[k] = v;
  });
  r.get("power_interval_s", c.power_interval_s);
  r.object("analysis", [&](ObjectReader& o) {
    o.get("dispersion_deg", c.analysis.dispersion_deg);
    o.get("min_fixation_s", c.analysis.min_fixation_s);
    o.get("movement_depth_m", c.analysis.movement_depth_m);
  });
  r.get("roi", c.roi);
  r.finish();
  c.apply_seed();
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) { return from_json(read_json(path)); }

namespace {

struct RunRecord {
  std::string command;
  std::vector<std::string> args;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const fs::path& dir, const json& config, std::uint64_t seed, const json& extra = json::object()) const {
    fs::create_directories(dir);
    json j = {{"command", command},
              {"args", args},
              {"config", config},
              {"seed", seed},
              {"versions",
               {{"skillsight", kVersion},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"compiler", __VERSION__},
                {"cxx", __cplusplus}}},
              {"wall_time_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
    for (const auto& [k, v] : extra.items()) j[k] = v;
    std::ofstream(dir / "run.json") << j.dump(2) << '\n';
  }
};

fs::path parent_or_cwd(const fs::path& p) { return p.has_parent_path() ? p.parent_path() : fs::path("."); }

std::map<std::string, std::vector<int>> train_labels_by_scenario(const Dataset& ds) {
  std::map<std::string, std::vector<int>> ref;
  for (const Recording* r : ds.split("train")) ref[r->scenario].push_back(r->skill);
  return ref;
}

// "eye", "eye:0.5,imu", "none"
std::map<std::string, double> parse_sensors(const std::string& s) {
  std::map<std::string, double> out;
  if (s.empty() || s == "none") return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const std::string name = item.substr(0, colon);
    double duty = 1.0;
    if (colon != std::string::npos) {
      try {
        duty = std::stod(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("bad duty in '" + item + "'", "--sensors");
      }
    }
    out[name] = duty;
  }
  return out;
}

}  // namespace

int run_cli(const std::vector<std::string>& argv_in) {
  CLI::App app{"Gaze-based skill assessment: synthetic data, teacher/student training, evaluation, analytics "
               "and power estimates."};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);
  std::string config_path;
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug|info|warning|error|silent");

  RunRecord record;
  ExperimentConfig cfg;
  // Flags override the config file; they are applied after it is read.
  std::optional<std::string> data_opt, out_opt;
  std::optional<std::uint64_t> seed_opt;
  std::optional<int> epochs_opt;

  auto add_common = [&](CLI::App* sub, bool data, bool out) {
    sub->add_option("--config", config_path, "experiment config file (JSON)")->check(CLI::ExistingFile);
    if (data) sub->add_option("--data", data_opt, "dataset directory");
    if (out) sub->add_option("--out", out_opt, "output directory or file");
    sub->add_option("--seed", seed_opt, "seed for every random choice");
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, false, true);
  std::optional<std::string> task_opt, profiles_opt;
  std::optional<int> n_opt, k_opt, subtasks_opt;
  std::optional<double> noise_opt;
  synth->add_option("--task", task_opt, "gaze-separable | visually-separable | distillation");
  synth->add_option("--n", n_opt, "recordings per class");
  synth->add_option("--k", k_opt, "number of classes");
  synth->add_option("--subtasks", subtasks_opt, "number of subtasks");
  synth->add_option("--label-noise", noise_opt, "probability of a flipped label");
  synth->add_option("--profiles", profiles_opt, "class profile file")->check(CLI::ExistingFile);

  auto* tt = app.add_subcommand("train-teacher", "train the video+gaze teacher");
  add_common(tt, true, true);
  tt->add_option("--epochs", epochs_opt);
  bool no_gaze_att = false, no_crop = false, no_gaze_enc = false;
  tt->add_flag("--no-gaze-attention", no_gaze_att, "drop the gaze attention bias");
  tt->add_flag("--no-crop-encoder", no_crop, "drop the gaze-crop encoder");
  tt->add_flag("--no-gaze-encoder", no_gaze_enc, "drop the gaze-dynamics encoder");

  auto* ts = app.add_subcommand("train-student", "distil the gaze-only student");
  add_common(ts, true, true);
  ts->add_option("--epochs", epochs_opt);
  std::string teacher_ckpt, cache_dir;
  bool no_distill = false, no_action = false;
  ts->add_option("--teacher", teacher_ckpt, "teacher checkpoint directory");
  ts->add_option("--cache", cache_dir, "teacher embedding cache root");
  ts->add_flag("--no-distill", no_distill, "train without the distillation loss");
  ts->add_flag("--no-action", no_action, "train without the action loss");

  auto* ev = app.add_subcommand("eval", "recording-level evaluation of a checkpoint");
  add_common(ev, true, true);
  std::string eval_ckpt, split = "test";
  int eval_clips = 10;
  ev->add_option("--checkpoint", eval_ckpt, "teacher or student checkpoint")->required();
  ev->add_option("--split", split, "train|val|test|all");
  ev->add_option("--clips", eval_clips, "clips per recording")->check(CLI::PositiveNumber);

  auto* an = app.add_subcommand("analyze", "fixation / depth / transition statistics per skill class");
  add_common(an, true, true);
  std::string an_split = "all";
  an->add_option("--split", an_split, "train|val|test|all");
  an->add_option("--roi", cfg.roi, "ROI spec file");

  auto* pw = app.add_subcommand("power", "analytic power estimate for architecture files");
  add_common(pw, false, true);
  std::vector<std::string> arch_specs;
  std::string sensors = "eye";
  std::optional<double> interval_opt;
  std::vector<std::string> accuracies;
  pw->add_option("--arch", arch_specs, "architecture file, optionally path@sensor[:duty],...")->required();
  pw->add_option("--sensors", sensors, "default active sensors, e.g. eye or eye:0.5,imu or none");
  pw->add_option("--interval", interval_opt, "seconds between inferences");
  pw->add_option("--accuracy", accuracies, "name=percent, attached to the report rows");

  std::vector<std::string> rev(argv_in.rbegin(), argv_in.rend());
  record.args = argv_in;
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  const std::map<std::string, LogLevel> levels = {{"debug", LogLevel::kDebug},
                                                  {"info", LogLevel::kInfo},
                                                  {"warning", LogLevel::kWarning},
                                                  {"error", LogLevel::kError},
                                                  {"silent", LogLevel::kSilent}};
  if (!levels.count(log_level)) {
    std::cerr << "error: --log-level: unknown level " << log_level << '\n';
    return 2;
  }
  set_log_level(levels.at(log_level));

  try {
    if (!config_path.empty()) cfg = ExperimentConfig::load(config_path);
    if (data_opt) cfg.data = *data_opt;
    if (out_opt) cfg.out = *out_opt;
    if (seed_opt) {
      cfg.seed = *seed_opt;
      cfg.apply_seed();
    }
    const std::uint64_t seed = cfg.seed.value_or(0);
    auto need = [](const std::string& v, const char* flag) {
      if (v.empty()) throw ConfigError("required (flag or config file)", flag);
    };

    if (synth->parsed()) {
      record.command = "synth";
      need(cfg.out, "--out");
      if (task_opt) cfg.synth.kind = parse_synth_task(*task_opt);
      if (n_opt) cfg.synth.n_per_class = *n_opt;
      if (k_opt) cfg.synth.k_classes = *k_opt;
      if (subtasks_opt) cfg.synth.n_subtasks = *subtasks_opt;
      if (noise_opt) cfg.synth.label_noise = *noise_opt;
      if (profiles_opt) cfg.profiles = *profiles_opt;
      cfg.synth.validate();
      const auto profiles = cfg.profiles.empty() ? default_profiles(cfg.synth) : load_profiles(cfg.profiles);
      const auto infos = generate_dataset(cfg.synth, profiles, cfg.out);
      log_info("wrote " + std::to_string(infos.size()) + " recordings to " + cfg.out);
      record.write(cfg.out, cfg.to_json(), cfg.synth.seed);
      return 0;
    }

    if (tt->parsed()) {
      record.command = "train-teacher";
      need(cfg.data, "--data");
      need(cfg.out, "--out");
      if (epochs_opt) cfg.teacher.train.epochs = *epochs_opt;
      if (no_gaze_att) cfg.teacher.masks.gaze_attention = false;
      if (no_crop) cfg.teacher.masks.crop_encoder = false;
      if (no_gaze_enc) cfg.teacher.masks.gaze_encoder = false;
      const Dataset ds = load_dataset(cfg.data);
      cfg.teacher.scenarios = ds.info.scenarios;
      cfg.teacher.k_classes = ds.info.k_classes;
      cfg.teacher.validate();
      Teacher teacher(cfg.teacher);
      const auto res = train_teacher(teacher, ds, cfg.out);
      record.write(cfg.out, cfg.to_json(), cfg.teacher.seed,
                   {{"best_epoch", res.train.best_epoch}, {"checkpoint", (fs::path(cfg.out) / "checkpoint").string()}});
      return 0;
    }

    if (ts->parsed()) {
      record.command = "train-student";
      need(cfg.data, "--data");
      need(cfg.out, "--out");
      if (epochs_opt) cfg.student.train.epochs = *epochs_opt;
      if (no_distill) cfg.student.distill = false;
      if (no_action) cfg.student.action = false;
      const Dataset ds = load_dataset(cfg.data);
      cfg.student.k_classes = ds.info.k_classes;
      cfg.student.n_subtasks = std::max<int>(1, static_cast<int>(ds.info.subtasks.size()));
      std::optional<Teacher> teacher;
      if (cfg.student.distill) {
        need(teacher_ckpt, "--teacher");
        teacher.emplace(Teacher::load(teacher_ckpt));
        cfg.student.teacher_dim = teacher->concat_width();
      } else if (!teacher_ckpt.empty()) {
        cfg.student.teacher_dim = Teacher::load(teacher_ckpt).concat_width();
      }
      cfg.student.validate();
      Student student(cfg.student);
      const auto res = train_student(student, ds, teacher ? &*teacher : nullptr, cfg.out, cache_dir);
      record.write(cfg.out, cfg.to_json(), cfg.student.seed,
                   {{"best_epoch", res.train.best_epoch}, {"teacher", teacher_ckpt}});
      return 0;
    }

    if (ev->parsed()) {
      record.command = "eval";
      need(cfg.data, "--data");
      need(cfg.out, "--out");
      const Dataset ds = load_dataset(cfg.data);
      std::vector<const Recording*> recs;
      if (split == "all") {
        for (const auto& r : ds.recordings) recs.push_back(&r);
      } else if (split == "train" || split == "val" || split == "test") {
        recs = ds.split(split);
      } else {
        throw ConfigError("must be train, val, test or all", "--split");
      }
      if (recs.empty()) throw EmptyInputError("split " + split + " is empty");
      const auto meta = read_checkpoint_meta(eval_ckpt);
      EvalReport report;
      if (meta.kind == "teacher") {
        const Teacher t = Teacher::load(eval_ckpt);
        report = evaluate(recs, teacher_predictor(t, ds.info), ds.info.k_classes, eval_clips,
                          train_labels_by_scenario(ds));
      } else if (meta.kind == "student") {
        const Student s = Student::load(eval_ckpt);
        std::vector<Recording> gaze_only;
        for (const Recording* r : recs) {
          gaze_only.push_back(*r);
          gaze_only.back().frames.reset();
        }
        std::vector<const Recording*> ptrs;
        for (const auto& r : gaze_only) ptrs.push_back(&r);
        report = evaluate(ptrs, student_predictor(s), ds.info.k_classes, eval_clips, train_labels_by_scenario(ds));
      } else {
        throw FormatError("unknown checkpoint kind " + meta.kind);
      }
      json out = report.to_json();
      out["checkpoint"] = eval_ckpt;
      out["kind"] = meta.kind;
      out["split"] = split;
      const fs::path out_path(cfg.out);
      fs::create_directories(parent_or_cwd(out_path));
      std::ofstream(out_path) << out.dump(2) << '\n';
      std::cout << "accuracy " << report.accuracy * 100.0 << "% (majority vote " << report.majority_accuracy * 100.0
                << "%)\n";
      record.write(parent_or_cwd(out_path), cfg.to_json(), seed, {{"checkpoint", eval_ckpt}});
      return 0;
    }

    if (an->parsed()) {
      record.command = "analyze";
      need(cfg.data, "--data");
      need(cfg.out, "--out");
      const Dataset ds = load_dataset(cfg.data);
      std::vector<const Recording*> recs;
      std::vector<int> labels;
      for (const auto& r : ds.recordings) {
        if (an_split != "all" && r.split != an_split) continue;
        recs.push_back(&r);
        labels.push_back(r.skill);
      }
      if (recs.empty()) throw EmptyInputError("no recordings in split " + an_split);
      const RoiSpec roi = cfg.roi.empty() ? RoiSpec{} : RoiSpec::from_json(read_json(cfg.roi));
      const auto report = group_report(recs, labels, roi, cfg.analysis);
      write_report(report, cfg.out);
      record.write(cfg.out, cfg.to_json(), seed);
      return 0;
    }

    if (pw->parsed()) {
      record.command = "power";
      need(cfg.out, "--out");
      if (interval_opt) cfg.power_interval_s = *interval_opt;
      if (!(cfg.power_interval_s > 0.0)) throw ConfigError("must be > 0", "--interval");
      std::map<std::string, double> acc;
      for (const auto& a : accuracies) {
        const auto eq = a.find('=');
        if (eq == std::string::npos) throw ConfigError("expected name=percent, got " + a, "--accuracy");
        acc[a.substr(0, eq)] = std::stod(a.substr(eq + 1));
      }
      std::vector<power::ReportEntry> entries;
      for (const auto& spec : arch_specs) {
        const auto at = spec.find('@');
        const std::string path = spec.substr(0, at);
        const auto duty = parse_sensors(at == std::string::npos ? sensors : spec.substr(at + 1));
        const auto arch = power::Architecture::load(path);
        const auto profile = power::profile_for(arch, duty, cfg.power_interval_s);
        power::ReportEntry e;
        e.name = arch.name.empty() ? fs::path(path).stem().string() : arch.name;
        e.power = power::power_mw(profile, cfg.power);
        e.macs = profile.macs;
        e.bytes = profile.bytes;
        if (auto it = acc.find(e.name); it != acc.end()) e.accuracy = it->second;
        std::cout << e.name << ": " << e.power.total_mw() << " mW\n";
        entries.push_back(std::move(e));
      }
      const auto report = power::power_report(std::move(entries));
      power::write_power_report(report, cfg.out);
      record.write(parent_or_cwd(cfg.out), cfg.to_json(), seed);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace skillsight
