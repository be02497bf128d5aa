#pragma once

// Shared training loop, checkpoints and the recording-level evaluation
// protocol used by both models.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "skillsight/gaze.hpp"
#include "skillsight/nn.hpp"

namespace skillsight {

struct TrainConfig {
  int epochs = 15;
  int batch_size = 8;
  double lr = 5e-3;
  double momentum = 0.9;   // SGD only
  double weight_decay = 0.0;
  int clips_per_recording = 2;  // training clips per recording (fixed per run)
  int val_clips = 3;            // clips per recording for per-epoch model selection
  int eval_clips = 10;

  void validate(const std::string& where) const;
  nlohmann::json to_json() const;
};

class ObjectReader;
// Reads the optional "train" sub-object.
void read_train_config(ObjectReader& r, TrainConfig& t);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  std::map<std::string, double> extra;  // per-term losses
  double seconds = 0.0;
  nlohmann::json to_json() const;
};

struct StepResult {
  ag::Var loss;
  int predicted = -1;
  int label = -1;
  std::map<std::string, double> terms;
};

struct TrainHooks {
  std::size_t n_items = 0;
  // Loss for one training item (graph attached).
  std::function<StepResult(std::size_t item)> step;
  // Validation accuracy in [0,1]; called after every epoch.
  std::function<double()> validate;
  // Applies one optimizer update from accumulated gradients.
  std::function<void()> apply;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
};

// Mini-batch loop with gradient accumulation over `batch_size` items. Items
// are shuffled per epoch from `seed`. The parameters with the best validation
// accuracy (earliest epoch on ties) are restored at the end. A non-finite loss
// raises TrainingError. Per-epoch metrics are appended to `metrics_path` when
// it is non-empty.
TrainResult train_loop(nn::ParamStore& store, const TrainHooks& hooks, const TrainConfig& cfg,
                       std::uint64_t seed, const std::filesystem::path& metrics_path = {});

// Checkpoint directory: checkpoint.json (kind, config, parameter table, hash)
// and params.bin (little-endian doubles in table order).
struct CheckpointMeta {
  std::string kind;
  nlohmann::json config;
  nlohmann::json extra;
  std::string hash;
};

void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& config,
                     const nn::ParamStore& store, const nlohmann::json& extra = nlohmann::json::object());
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);
// Copies stored values into `store`; names and shapes must match exactly.
void load_checkpoint_params(const std::filesystem::path& dir, nn::ParamStore& store);
std::string params_hash(const nn::ParamStore& store);

// Recording-level evaluation.
struct RecordingPrediction {
  std::string id;
  std::string scenario;
  int label = 0;
  int predicted = 0;
  std::vector<double> probabilities;
};

struct EvalReport {
  int k_classes = 2;
  double accuracy = 0.0;
  std::map<std::string, double> per_scenario;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
  double majority_accuracy = 0.0;
  std::map<std::string, double> majority_per_scenario;
  std::vector<RecordingPrediction> predictions;
  nlohmann::json to_json() const;
};

// Mean of the clip probability rows, argmax with ties to the lowest index.
int average_and_predict(const std::vector<std::vector<double>>& clip_probs, std::vector<double>* mean = nullptr);

// Fraction of `labels` equal to the mode of `reference` (lowest class on
// ties). The reference defaults to `labels` itself.
double majority_vote_accuracy(const std::vector<int>& labels, const std::vector<int>& reference = {});

using ClipPredictor = std::function<std::vector<double>(const Recording&, const Clip&)>;

// Every recording is cut into n_clips clips; predictions are averaged per
// recording. Majority-vote rows use the mode of `reference_labels` per
// scenario when given, otherwise the evaluated labels.
EvalReport evaluate(const std::vector<const Recording*>& recordings, const ClipPredictor& predict,
                    int k_classes, int n_clips = 10,
                    const std::map<std::string, std::vector<int>>& reference_labels = {});

std::vector<double> softmax(const ag::Matrix& logits_row);

}  // namespace skillsight
