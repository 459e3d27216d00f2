#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"

#include "fixseg/raster.hpp"

namespace fixseg {

struct UNetConfig {
  int in_bands = 11;
  int num_classes = 5;
  /// Feature count per encoder level; depth = size() pooling levels.
  std::vector<int> channel_widths{16, 32, 64, 128};
  bool batch_norm = false;
  std::uint64_t init_seed = 0;

  int depth() const { return static_cast<int>(channel_widths.size()); }
  /// Throws ConfigError on non-positive sizes or an empty ladder.
  void validate() const;

  /// The budget-matched configuration used throughout: widths 16..128, no normalization.
  static UNetConfig reference();

  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
  bool operator==(const UNetConfig&) const = default;
};

/// One convolution of the network, as listed by conv_layers().
struct ConvLayerShape {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int scale = 1;  ///< spatial size relative to the input is 1/scale
};

/// Weights plus biases of one convolution.
std::int64_t conv_parameter_count(const ConvLayerShape& layer);

/// All convolutions in forward order.
std::vector<ConvLayerShape> conv_layers(const UNetConfig& cfg);

struct ModelBudgetReport {
  std::int64_t param_count = 0;
  std::int64_t macs = 0;           ///< multiply-accumulates of all convolutions for one input
  double flops = 0.0;              ///< 2 * macs
  std::int64_t serialized_size = 0;  ///< checkpoint bytes with float32 weights
  int input_height = 256;
  int input_width = 256;

  nlohmann::json to_json() const;
};

/// Closed-form budget for a [in_bands, height, width] input.
ModelBudgetReport budget_report(const UNetConfig& cfg, int height = 256, int width = 256);

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Metadata stored next to the weights in a checkpoint file.
struct CheckpointInfo {
  UNetConfig config;
  int epoch = 0;
  double val_miou = 0.0;
};

/// U-Net: 3x3 conv blocks with 2x2 max pooling down, bilinear x2 upsampling and skip
/// concatenation up, 1x1 output convolution. Runs on CPU in float32.
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg);
  ~UNet();
  UNet(UNet&&) noexcept;
  UNet& operator=(UNet&&) noexcept;
  UNet(const UNet&) = delete;
  UNet& operator=(const UNet&) = delete;

  const UNetConfig& config() const;

  /// Scores [num_classes, H, W] per image. All images must share one shape; H and W must be
  /// divisible by 2^depth (ShapeError otherwise). Evaluation mode, no gradient tracking.
  std::vector<ScoreMap> forward(std::span<const Image> images) const;

  void enable_training(const AdamOptions& opts);
  bool training_enabled() const;

  /// Per group: score gradients for each image of that group.
  using GradientFn = std::function<std::vector<std::vector<ScoreMap>>(const std::vector<std::vector<ScoreMap>>& scores)>;

  /// One optimizer step. Each group is run through the network in training mode, `loss_grad`
  /// receives the scores of every group and returns d loss / d scores for each; gradients are
  /// back-propagated and Adam updates the weights. Groups may have different spatial sizes.
  void optimize(const std::vector<std::vector<Image>>& groups, const GradientFn& loss_grad);

  /// Parameter count obtained by walking the registered tensors.
  std::int64_t parameter_count() const;
  std::vector<float> flat_weights() const;
  void load_flat_weights(std::span<const float> weights);

  void save_checkpoint(const std::filesystem::path& file, int epoch, double val_miou) const;
  /// Restores weights from a checkpoint whose config matches this model.
  CheckpointInfo load_checkpoint(const std::filesystem::path& file);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Reads only the header of a checkpoint.
CheckpointInfo read_checkpoint_info(const std::filesystem::path& file);
/// Builds a model from a checkpoint.
UNet load_model(const std::filesystem::path& file);

}  // namespace fixseg
