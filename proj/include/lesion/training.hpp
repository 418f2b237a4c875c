#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "lesion/data.hpp"
#include "lesion/models.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

enum class OptimizerKind { Adam, Sgd };

std::string_view to_string(OptimizerKind k);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  double learning_rate = 0.001;
  std::size_t batch_size = 8;
  std::size_t epochs = 40;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::optional<std::size_t> early_stop_patience;
  bool augment = true;
  AugmentParams augment_params;
  // Wall time is opt-in so that logs of identical runs are byte-identical.
  bool record_time = false;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> best_epoch;
  bool stopped_early = false;

  std::string csv() const;
  nlohmann::json to_json() const;
  static TrainLog from_json(const nlohmann::json& j);
};

/// Index batches over [0, n) for one epoch: a shuffle seeded by seed ^ epoch,
/// cut into batch_size chunks with the last partial batch kept.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::size_t epoch,
                                                   std::uint64_t seed);

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// p <- p - lr * g
void sgd_step(std::span<const Tensor> params, std::span<const Tensor> grads, double lr);

struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor> m, v;  // allocated lazily on the first step
};

/// Bias-corrected Adam: p <- p - lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

/// Gradient of each parameter as a tensor, zeros where none accumulated.
std::vector<Tensor> gradients(std::span<const Tensor> params);

// ---------------------------------------------------------------------------
// Fitting and inference
// ---------------------------------------------------------------------------

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Inference-mode mean cross-entropy and accuracy.
LossAccuracy evaluate(const Model& model, const LabeledImages& data);

/// Inference-mode softmax rows [N,K].
Tensor predict_proba(const Model& model, std::span<const Image> images);

/// Index of the first maximum of each row of [N,K].
std::vector<int> argmax_rows(const Tensor& scores);

struct FitOptions {
  // When set, trainlog.csv/json and checkpoint_best/last.atnc are written here
  // after every epoch.
  std::optional<std::filesystem::path> out_dir;
  // A checkpoint_last.atnc to continue from.
  std::optional<Checkpoint> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct FitResult {
  TrainLog log;
  Checkpoint best;  // model only, lowest validation loss
  Checkpoint last;  // model, optimizer state and progress
};

/// Trains in place. Validation runs without augmentation or dropout; with an
/// empty validation split the training loss picks the best checkpoint.
FitResult fit(Model& model, const LabeledImages& train, const LabeledImages& val, const TrainConfig& config,
              const FitOptions& options = {});

inline constexpr const char* kBestCheckpointFile = "checkpoint_best.atnc";
inline constexpr const char* kLastCheckpointFile = "checkpoint_last.atnc";
inline constexpr const char* kTrainLogCsvFile = "trainlog.csv";
inline constexpr const char* kTrainLogJsonFile = "trainlog.json";

}  // namespace lesion
