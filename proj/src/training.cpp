#include "skillsight/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "skillsight/config.hpp"
#include "skillsight/error.hpp"
#include "skillsight/log.hpp"
#include "skillsight/synth.hpp"

namespace skillsight {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "params.bin is written in host order");

void TrainConfig::validate(const std::string& where) const {
  if (epochs < 1) throw ConfigError("must be >= 1", where + "/epochs");
  if (batch_size < 1) throw ConfigError("must be >= 1", where + "/batch_size");
  if (!(lr > 0.0)) throw ConfigError("must be > 0", where + "/lr");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("must be in [0,1)", where + "/momentum");
  if (weight_decay < 0.0) throw ConfigError("must be >= 0", where + "/weight_decay");
  if (clips_per_recording < 1) throw ConfigError("must be >= 1", where + "/clips_per_recording");
  if (val_clips < 1) throw ConfigError("must be >= 1", where + "/val_clips");
  if (eval_clips < 1) throw ConfigError("must be >= 1", where + "/eval_clips");
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr", lr},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"clips_per_recording", clips_per_recording},
          {"val_clips", val_clips},
          {"eval_clips", eval_clips}};
}

void read_train_config(ObjectReader& r, TrainConfig& t) {
  r.object("train", [&](ObjectReader& o) {
    o.get("epochs", t.epochs);
    o.get("batch_size", t.batch_size);
    o.get("lr", t.lr);
    o.get("momentum", t.momentum);
    o.get("weight_decay", t.weight_decay);
    o.get("clips_per_recording", t.clips_per_recording);
    o.get("val_clips", t.val_clips);
    o.get("eval_clips", t.eval_clips);
  });
}

json EpochMetrics::to_json() const {
  json j = {{"epoch", epoch},
            {"train_loss", train_loss},
            {"train_accuracy", train_accuracy},
            {"val_accuracy", val_accuracy},
            {"seconds", seconds}};
  for (const auto& [k, v] : extra) j[k] = v;
  return j;
}

TrainResult train_loop(nn::ParamStore& store, const TrainHooks& hooks, const TrainConfig& cfg, std::uint64_t seed,
                       const fs::path& metrics_path) {
  const std::size_t n = hooks.n_items;
  if (n == 0) throw EmptyInputError("no training items");
  std::ofstream metrics;
  if (!metrics_path.empty()) {
    if (metrics_path.has_parent_path()) fs::create_directories(metrics_path.parent_path());
    metrics.open(metrics_path, std::ios::trunc);
  }

  auto snapshot = [&store]() {
    std::vector<ag::Matrix> v;
    for (const auto& [_, p] : store.entries()) v.push_back(p.value());
    return v;
  };
  std::vector<ag::Matrix> best = snapshot();
  TrainResult result;
  result.best_val_accuracy = -1.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    nn::Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    EpochMetrics m;
    m.epoch = epoch;
    int correct = 0;
    for (std::size_t b = 0; b < n; b += bs) {
      store.zero_grad();
      const std::size_t end = std::min(n, b + bs);
      const double inv = 1.0 / static_cast<double>(end - b);
      for (std::size_t i = b; i < end; ++i) {
        StepResult s = hooks.step(order[i]);
        const double lv = s.loss.item();
        if (!std::isfinite(lv)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", item " << order[i];
          for (const auto& [k, v] : s.terms) os << ", " << k << "=" << v;
          throw TrainingError(os.str());
        }
        ag::scale(s.loss, inv).backward();
        m.train_loss += lv;
        correct += s.predicted == s.label ? 1 : 0;
        for (const auto& [k, v] : s.terms) m.extra[k] += v;
      }
      hooks.apply();
    }
    m.train_loss /= static_cast<double>(n);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    for (auto& [_, v] : m.extra) v /= static_cast<double>(n);

    if (hooks.validate) {
      m.val_accuracy = hooks.validate();
      if (m.val_accuracy > result.best_val_accuracy) {
        result.best_val_accuracy = m.val_accuracy;
        result.best_epoch = epoch;
        best = snapshot();
      }
    } else {
      m.val_accuracy = m.train_accuracy;
      result.best_val_accuracy = m.val_accuracy;
      result.best_epoch = epoch;
      best = snapshot();
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (metrics.is_open()) metrics << m.to_json().dump() << '\n' << std::flush;
    std::ostringstream os;
    os.precision(4);
    os << "epoch " << epoch << " loss " << m.train_loss << " train_acc " << m.train_accuracy << " val_acc "
       << m.val_accuracy << " (" << m.seconds << " s)";
    log_info(os.str());
    result.epochs.push_back(std::move(m));
  }
  std::size_t i = 0;
  for (const auto& [_, p] : store.entries()) {
    ag::Var v = p;
    v.mutable_value() = best[i++];
  }
  return result;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

}  // namespace

std::string params_hash(const nn::ParamStore& store) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, v] : store.entries()) {
    h = fnv1a(h, name.data(), name.size());
    const std::int64_t shape[] = {v.rows(), v.cols()};
    h = fnv1a(h, shape, sizeof(shape));
    h = fnv1a(h, v.value().data(), static_cast<std::size_t>(v.value().size()) * sizeof(double));
  }
  return hex(h);
}

void save_checkpoint(const fs::path& dir, const std::string& kind, const json& config, const nn::ParamStore& store,
                     const json& extra) {
  fs::create_directories(dir);
  json table = json::array();
  {
    std::ofstream bin(dir / "params.bin.tmp", std::ios::binary | std::ios::trunc);
    for (const auto& [name, v] : store.entries()) {
      table.push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
      bin.write(reinterpret_cast<const char*>(v.value().data()),
                static_cast<std::streamsize>(v.value().size() * sizeof(double)));
    }
    if (!bin) throw Error("failed writing " + (dir / "params.bin").string());
  }
  fs::rename(dir / "params.bin.tmp", dir / "params.bin");
  json j = {{"kind", kind}, {"config", config}, {"params", table}, {"hash", params_hash(store)}, {"extra", extra}};
  std::ofstream(dir / "checkpoint.json.tmp") << j.dump(2) << '\n';
  fs::rename(dir / "checkpoint.json.tmp", dir / "checkpoint.json");
}

CheckpointMeta read_checkpoint_meta(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw FormatError("missing " + (dir / "checkpoint.json").string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("malformed checkpoint.json: " + std::string(e.what()));
  }
  CheckpointMeta m;
  try {
    m.kind = j.at("kind").get<std::string>();
    m.config = j.at("config");
    m.hash = j.at("hash").get<std::string>();
    m.extra = j.value("extra", json::object());
  } catch (const json::exception& e) {
    throw FormatError("checkpoint.json: " + std::string(e.what()));
  }
  return m;
}

void load_checkpoint_params(const fs::path& dir, nn::ParamStore& store) {
  std::ifstream in(dir / "checkpoint.json");
  const json j = json::parse(in);
  const auto& table = j.at("params");
  if (table.size() != store.entries().size()) {
    throw FormatError("checkpoint has " + std::to_string(table.size()) + " tensors, model has " +
                      std::to_string(store.entries().size()));
  }
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw FormatError("missing " + (dir / "params.bin").string());
  std::size_t i = 0;
  for (const auto& [name, p] : store.entries()) {
    const auto& t = table[i++];
    if (t.at("name") != name || t.at("rows") != p.rows() || t.at("cols") != p.cols()) {
      throw FormatError("checkpoint tensor " + t.at("name").get<std::string>() + " does not match model tensor " +
                        name);
    }
    ag::Var v = p;
    bin.read(reinterpret_cast<char*>(v.mutable_value().data()),
             static_cast<std::streamsize>(v.value().size() * sizeof(double)));
    if (!bin) throw FormatError("params.bin is truncated");
  }
  if (params_hash(store) != j.at("hash").get<std::string>()) {
    throw FormatError("checkpoint hash mismatch in " + dir.string());
  }
}

std::vector<double> softmax(const ag::Matrix& logits_row) {
  const double mx = logits_row.maxCoeff();
  std::vector<double> p(static_cast<std::size_t>(logits_row.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits_row.data()[i] - mx);
    total += p[i];
  }
  for (auto& v : p) v /= total;
  return p;
}

int average_and_predict(const std::vector<std::vector<double>>& clip_probs, std::vector<double>* mean) {
  if (clip_probs.empty()) throw EmptyInputError("no clip predictions to average");
  std::vector<double> avg(clip_probs.front().size(), 0.0);
  for (const auto& p : clip_probs) {
    if (p.size() != avg.size()) throw ShapeError("clip probability vectors differ in length");
    for (std::size_t k = 0; k < p.size(); ++k) avg[k] += p[k];
  }
  for (auto& v : avg) v /= static_cast<double>(clip_probs.size());
  int best = 0;
  for (std::size_t k = 1; k < avg.size(); ++k) {
    if (avg[k] > avg[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
  }
  if (mean) *mean = std::move(avg);
  return best;
}

namespace {

int mode_of(const std::vector<int>& labels) {
  std::map<int, int> counts;
  for (int l : labels) ++counts[l];
  int best = counts.begin()->first;
  for (const auto& [l, c] : counts) {
    if (c > counts[best]) best = l;
  }
  return best;
}

}  // namespace

double majority_vote_accuracy(const std::vector<int>& labels, const std::vector<int>& reference) {
  if (labels.empty()) throw EmptyInputError("majority vote over no labels");
  const int mode = mode_of(reference.empty() ? labels : reference);
  return static_cast<double>(std::count(labels.begin(), labels.end(), mode)) / static_cast<double>(labels.size());
}

json EvalReport::to_json() const {
  json preds = json::array();
  for (const auto& p : predictions) {
    preds.push_back({{"id", p.id}, {"scenario", p.scenario}, {"label", p.label}, {"predicted", p.predicted},
                     {"probabilities", p.probabilities}});
  }
  return {{"k_classes", k_classes},
          {"accuracy", accuracy},
          {"per_scenario", per_scenario},
          {"confusion", confusion},
          {"majority_vote", {{"accuracy", majority_accuracy}, {"per_scenario", majority_per_scenario}}},
          {"predictions", preds}};
}

EvalReport evaluate(const std::vector<const Recording*>& recordings, const ClipPredictor& predict, int k_classes,
                    int n_clips, const std::map<std::string, std::vector<int>>& reference_labels) {
  if (recordings.empty()) throw EmptyInputError("no recordings to evaluate");
  EvalReport r;
  r.k_classes = k_classes;
  r.confusion.assign(static_cast<std::size_t>(k_classes), std::vector<int>(static_cast<std::size_t>(k_classes), 0));
  std::map<std::string, std::pair<int, int>> per;  // correct, total
  std::map<std::string, std::vector<int>> labels_by_scenario;
  int correct = 0;
  for (const Recording* rec : recordings) {
    if (rec->skill < 0 || rec->skill >= k_classes) throw ConfigError("label outside [0, k) in " + rec->id);
    std::vector<std::vector<double>> probs;
    for (const auto& clip : segment_clips(*rec, n_clips)) probs.push_back(predict(*rec, clip));
    RecordingPrediction p{rec->id, rec->scenario, rec->skill, 0, {}};
    p.predicted = average_and_predict(probs, &p.probabilities);
    const bool ok = p.predicted == p.label;
    correct += ok ? 1 : 0;
    per[rec->scenario].first += ok ? 1 : 0;
    per[rec->scenario].second += 1;
    labels_by_scenario[rec->scenario].push_back(rec->skill);
    ++r.confusion[static_cast<std::size_t>(p.label)][static_cast<std::size_t>(p.predicted)];
    r.predictions.push_back(std::move(p));
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(recordings.size());
  double majority_correct = 0.0;
  for (const auto& [s, ct] : per) {
    r.per_scenario[s] = static_cast<double>(ct.first) / ct.second;
    auto it = reference_labels.find(s);
    const auto& labels = labels_by_scenario[s];
    const double acc = majority_vote_accuracy(
        labels, it != reference_labels.end() && !it->second.empty() ? it->second : std::vector<int>{});
    r.majority_per_scenario[s] = acc;
    majority_correct += acc * static_cast<double>(labels.size());
  }
  r.majority_accuracy = majority_correct / static_cast<double>(recordings.size());
  return r;
}

}  // namespace skillsight
