#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fixseg/augmentation.hpp"
#include "fixseg/raster.hpp"

namespace fixseg {

/// Probabilities are clamped to [kLogFloor, 1] before taking logs.
inline constexpr double kLogFloor = 1e-8;

struct LossConfig {
  std::vector<double> alphas{1.0, 1.0, 1.0, 1.0, 1.0};
  double gamma = 2.0;
  double lambda_coeff = 1.0;
  double threshold = 0.9;
  /// Use the focal form (same alphas and gamma) instead of cross entropy in the unsupervised term.
  bool unsupervised_focal = false;

  /// Throws ConfigError unless alphas has num_classes non-negative entries and gamma, lambda >= 0.
  void validate(int num_classes) const;
};

// --- per-pixel losses ------------------------------------------------------------------------

/// -log p[target].
double cross_entropy_pixel(std::span<const double> pred, int target);
/// -sum_i t_i log p_i for a soft target.
double cross_entropy_pixel(std::span<const double> pred, std::span<const double> target);

/// Binary form on the probability of the positive class; y in {0, 1}.
double binary_cross_entropy(double y_hat, int y);
/// alpha weights the positive class, 1 - alpha the negative one.
double balanced_binary_cross_entropy(double y_hat, int y, double alpha);

/// -alpha[cls] (1 - p)^gamma log p, p = probability of the true class.
double focal_pixel(double p_true, int cls, const LossConfig& cfg);
/// d focal_pixel / d p_true; zero where the log clamp is active.
double focal_pixel_derivative(double p_true, int cls, const LossConfig& cfg);

// --- batch losses ----------------------------------------------------------------------------

struct SupervisedLoss {
  double value = 0.0;
  std::size_t labeled_count = 0;
  std::vector<ScoreMap> score_grad;  ///< d value / d scores, one map per image
};

/// Mean focal loss over labeled pixels. Throws NoLabeledPixelError if there are none.
double supervised_loss(std::span<const PredictionMap> pred, std::span<const SegmentationMap> labels,
                       const LossConfig& cfg);
/// Same value from raw scores (softmax applied here) plus its gradient.
SupervisedLoss supervised_loss_from_scores(std::span<const ScoreMap> scores, std::span<const SegmentationMap> labels,
                                           const LossConfig& cfg);

struct UnsupervisedLoss {
  double value = 0.0;
  std::size_t retained_count = 0;
  std::vector<ScoreMap> score_grad;  ///< only filled by the score-based variant
};

/// Pseudo-labels come from the weak predictions moved into strong-view coordinates by the
/// geometric part of `strong_plan` (nearest neighbour). A pixel of the strong view is retained when
/// it is valid in `strong_validity`, not covered by the image's cutout, not replay padding, and its
/// pseudo-label confidence is >= threshold. The loss is the mean cross entropy (or focal loss, see
/// LossConfig) of the strong prediction against the pseudo-label over retained pixels, (0, 0) when
/// none is retained.
UnsupervisedLoss unsupervised_loss(std::span<const PredictionMap> weak_pred, std::span<const PredictionMap> strong_pred,
                                   const AugmentationPlan& strong_plan, std::span<const ValidityMask> strong_validity,
                                   std::span<const CutoutSpec> cutouts, const LossConfig& cfg);
/// Weak predictions are treated as constants; the gradient flows to the strong scores only.
UnsupervisedLoss unsupervised_loss_from_scores(std::span<const PredictionMap> weak_pred,
                                               std::span<const ScoreMap> strong_scores,
                                               const AugmentationPlan& strong_plan,
                                               std::span<const ValidityMask> strong_validity,
                                               std::span<const CutoutSpec> cutouts, const LossConfig& cfg);

/// sup + lambda * unsup
double total_loss(double sup, double unsup, const LossConfig& cfg);

}  // namespace fixseg
