#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fixseg/marida_data.hpp"
#include "fixseg/metrics.hpp"
#include "fixseg/train_config.hpp"
#include "fixseg/unet.hpp"

namespace fixseg {

/// Normalized inputs of one run. Unlabeled images carry no labels at all.
struct TrainData {
  std::vector<Sample> labeled;
  std::vector<Image> unlabeled;
  std::vector<Sample> validation;
  std::vector<Sample> test;
  BandStats band_stats;
};

/// Loads the split's labeled and unlabeled patches plus the val and test splits, computes band
/// statistics over the training patches and normalizes everything with them.
TrainData prepare_train_data(const DatasetLayout& layout, const SplitAssignment& split, const ClassScheme& scheme);

struct StepRecord {
  int epoch = 0;  ///< 1-based
  int step = 0;   ///< 1-based, global
  double sup_loss = 0.0;
  double unsup_loss = 0.0;
  double total_loss = 0.0;
  std::size_t retained_count = 0;
  bool skipped = false;  ///< labeled batch had no labeled pixel
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  int skipped_steps = 0;
  double sup_loss = 0.0;    ///< means over the epoch's executed steps
  double unsup_loss = 0.0;
  double total_loss = 0.0;
  double retained_mean = 0.0;
  double val_miou = 0.0;
  double val_loss = 0.0;
};

struct Evaluation {
  ConfusionMatrix confusion;
  std::vector<std::optional<double>> iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  double loss = 0.0;  ///< supervised loss pooled over all labeled pixels; NaN without labels

  nlohmann::json to_json(std::span<const std::string> class_names) const;
};

struct TrainReport {
  TrainMode mode = TrainMode::SemiSupervised;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  ///< 1-based; 0 while no epoch has completed
  double best_val_miou = 0.0;
  std::vector<float> best_weights;  ///< in-memory copy of the best checkpoint
  std::optional<std::filesystem::path> best_checkpoint;
  std::optional<Evaluation> test;

  nlohmann::json to_json(std::span<const std::string> class_names) const;
};

struct TrainerOptions {
  /// When set: checkpoints/best.ckpt, metrics_steps.csv and metrics_epochs.csv are written here.
  std::optional<std::filesystem::path> run_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Earliest index (1-based) of the maximum; 0 for an empty sequence.
int best_epoch_index(std::span<const double> val_mious);

/// Confusion matrix, IoUs and pooled supervised loss of `model` on `samples`.
Evaluation evaluate(const UNet& model, std::span<const Sample> samples, const LossConfig& loss, int batch_size);

/// Labeled-only training. Throws ConfigError unless cfg.mode is FullySupervised.
TrainReport train_supervised(const TrainConfig& cfg, const TrainData& data, UNet& model,
                             const TrainerOptions& options = {});

/// FixMatch training. Throws ConfigError unless cfg.mode is SemiSupervised.
TrainReport train_fixmatch(const TrainConfig& cfg, const TrainData& data, UNet& model,
                           const TrainerOptions& options = {});

/// Dispatches on cfg.mode.
TrainReport train(const TrainConfig& cfg, const TrainData& data, UNet& model, const TrainerOptions& options = {});

/// Restores the best checkpoint into `model` and evaluates it on `test`.
/// Throws NoCheckpointError when no epoch was completed or the checkpoint is gone.
TrainReport select_and_evaluate(TrainReport report, std::span<const Sample> test, UNet& model, const LossConfig& loss,
                                int batch_size = 5);

}  // namespace fixseg
