#include "fixseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fixseg {

namespace {

double clamped_log(double p) { return std::log(std::clamp(p, kLogFloor, 1.0)); }

void check_batch(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeMismatchError(std::string("batch size mismatch: ") + what);
}

void check_same_plane(const ClassMap& m, int h, int w, const char* what) {
  if (m.height() != h || m.width() != w) throw ShapeMismatchError(std::string("spatial size mismatch: ") + what);
}

// Per image: pseudo-label class of each strong-view pixel, or kUnlabeled if not retained.
SegmentationMap retained_pseudo_labels(const PredictionMap& weak, int strong_h, int strong_w,
                                       const AugmentationPlan& plan, const ValidityMask& validity,
                                       const CutoutSpec& cutout, double threshold) {
  const auto pseudo = PseudoLabelMap::from(weak);
  auto [moved, replay_mask] =
      apply_geometric_only(plan, pseudo, ValidityMask(weak.height(), weak.width(), true));
  if (moved.classes.height() != strong_h || moved.classes.width() != strong_w) {
    throw ShapeMismatchError("replayed weak prediction does not match the strong view");
  }
  if (validity.height() != strong_h || validity.width() != strong_w) {
    throw ShapeMismatchError("validity mask does not match the strong view");
  }
  SegmentationMap out(strong_h, strong_w, kUnlabeled);
  for (int y = 0; y < strong_h; ++y) {
    for (int x = 0; x < strong_w; ++x) {
      if (!validity.at(y, x) || !replay_mask.at(y, x) || cutout.covers(x, y)) continue;
      const std::size_t p = static_cast<std::size_t>(y) * strong_w + x;
      if (moved.confidence[p] >= threshold) out.at(y, x) = moved.classes.at(y, x);
    }
  }
  return out;
}

double pseudo_label_loss(double p, int cls, const LossConfig& cfg) {
  return cfg.unsupervised_focal ? focal_pixel(p, cls, cfg) : -clamped_log(p);
}

double pseudo_label_loss_derivative(double p, int cls, const LossConfig& cfg) {
  if (cfg.unsupervised_focal) return focal_pixel_derivative(p, cls, cfg);
  return p < kLogFloor ? 0.0 : -1.0 / p;
}

struct Retained {
  std::vector<SegmentationMap> labels;
  std::size_t count = 0;
};

Retained retain(std::span<const PredictionMap> weak_pred, std::span<const ClassMap> strong, const AugmentationPlan& plan,
                std::span<const ValidityMask> validity, std::span<const CutoutSpec> cutouts, double threshold) {
  check_batch(weak_pred.size(), strong.size(), "weak vs strong predictions");
  check_batch(weak_pred.size(), validity.size(), "predictions vs validity masks");
  check_batch(weak_pred.size(), cutouts.size(), "predictions vs cutouts");
  Retained r;
  for (std::size_t i = 0; i < weak_pred.size(); ++i) {
    auto labels = retained_pseudo_labels(weak_pred[i], strong[i].height(), strong[i].width(), plan, validity[i],
                                         cutouts[i], threshold);
    r.count += labels.labeled_count();
    r.labels.push_back(std::move(labels));
  }
  return r;
}

}  // namespace

void LossConfig::validate(int num_classes) const {
  if (static_cast<int>(alphas.size()) != num_classes) {
    throw ConfigError("alphas has " + std::to_string(alphas.size()) + " entries, expected " +
                      std::to_string(num_classes));
  }
  if (std::any_of(alphas.begin(), alphas.end(), [](double a) { return !(a >= 0.0); })) {
    throw ConfigError("alphas must be non-negative");
  }
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(lambda_coeff >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (std::isnan(threshold) || threshold < 0.0) throw ConfigError("threshold must be >= 0");
}

double cross_entropy_pixel(std::span<const double> pred, int target) { return -clamped_log(pred[target]); }

double cross_entropy_pixel(std::span<const double> pred, std::span<const double> target) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (target[i] != 0.0) sum -= target[i] * clamped_log(pred[i]);
  }
  return sum;
}

double binary_cross_entropy(double y_hat, int y) { return -clamped_log(y == 1 ? y_hat : 1.0 - y_hat); }

double balanced_binary_cross_entropy(double y_hat, int y, double alpha) {
  return (y == 1 ? alpha : 1.0 - alpha) * binary_cross_entropy(y_hat, y);
}

double focal_pixel(double p_true, int cls, const LossConfig& cfg) {
  const double value = -cfg.alphas[cls] * std::pow(1.0 - p_true, cfg.gamma) * clamped_log(p_true);
  return value == 0.0 ? 0.0 : value;  // no negative zero at p = 1
}

double focal_pixel_derivative(double p_true, int cls, const LossConfig& cfg) {
  if (p_true < kLogFloor) {
    // log is clamped to a constant; only the modulating factor varies
    if (cfg.gamma == 0.0) return 0.0;
    return cfg.alphas[cls] * cfg.gamma * std::pow(1.0 - p_true, cfg.gamma - 1.0) * std::log(kLogFloor);
  }
  const double q = 1.0 - p_true;
  double modulated_log = 0.0;
  if (cfg.gamma != 0.0 && q > 0.0) modulated_log = cfg.gamma * std::pow(q, cfg.gamma - 1.0) * std::log(p_true);
  return cfg.alphas[cls] * (modulated_log - std::pow(q, cfg.gamma) / p_true);
}

double supervised_loss(std::span<const PredictionMap> pred, std::span<const SegmentationMap> labels,
                       const LossConfig& cfg) {
  check_batch(pred.size(), labels.size(), "predictions vs labels");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_same_plane(pred[i], labels[i].height(), labels[i].width(), "prediction vs labels");
    const auto l = labels[i].labels();
    for (std::size_t p = 0; p < l.size(); ++p) {
      if (l[p] == kUnlabeled) continue;
      if (l[p] < 0 || l[p] >= pred[i].classes()) throw UnknownClassError("label " + std::to_string(l[p]) + " out of range");
      sum += focal_pixel(pred[i].at(l[p], p), l[p], cfg);
      ++count;
    }
  }
  if (count == 0) throw NoLabeledPixelError("batch has no labeled pixel");
  return sum / static_cast<double>(count);
}

SupervisedLoss supervised_loss_from_scores(std::span<const ScoreMap> scores, std::span<const SegmentationMap> labels,
                                           const LossConfig& cfg) {
  check_batch(scores.size(), labels.size(), "scores vs labels");
  std::vector<PredictionMap> probs;
  probs.reserve(scores.size());
  for (const auto& s : scores) probs.push_back(softmax(s));

  SupervisedLoss out;
  out.value = supervised_loss(probs, labels, cfg);
  for (const auto& l : labels) out.labeled_count += l.labeled_count();
  const double inv_n = 1.0 / static_cast<double>(out.labeled_count);

  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& p = probs[i];
    ScoreMap grad(p.classes(), p.height(), p.width(), 0.0);
    const auto l = labels[i].labels();
    for (std::size_t px = 0; px < l.size(); ++px) {
      const int t = l[px];
      if (t == kUnlabeled) continue;
      const double pt = p.at(t, px);
      // chain rule through softmax: d p_t / d z_j = p_t (delta_tj - p_j)
      const double scale = focal_pixel_derivative(pt, t, cfg) * pt * inv_n;
      for (int c = 0; c < p.classes(); ++c) grad.at(c, px) = scale * ((c == t ? 1.0 : 0.0) - p.at(c, px));
    }
    out.score_grad.push_back(std::move(grad));
  }
  return out;
}

UnsupervisedLoss unsupervised_loss(std::span<const PredictionMap> weak_pred, std::span<const PredictionMap> strong_pred,
                                   const AugmentationPlan& strong_plan, std::span<const ValidityMask> strong_validity,
                                   std::span<const CutoutSpec> cutouts, const LossConfig& cfg) {
  const Retained r = retain(weak_pred, strong_pred, strong_plan, strong_validity, cutouts, cfg.threshold);
  UnsupervisedLoss out;
  out.retained_count = r.count;
  if (r.count == 0) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < strong_pred.size(); ++i) {
    const auto l = r.labels[i].labels();
    for (std::size_t p = 0; p < l.size(); ++p) {
      if (l[p] != kUnlabeled) sum += pseudo_label_loss(strong_pred[i].at(l[p], p), l[p], cfg);
    }
  }
  out.value = sum / static_cast<double>(r.count);
  return out;
}

UnsupervisedLoss unsupervised_loss_from_scores(std::span<const PredictionMap> weak_pred,
                                               std::span<const ScoreMap> strong_scores,
                                               const AugmentationPlan& strong_plan,
                                               std::span<const ValidityMask> strong_validity,
                                               std::span<const CutoutSpec> cutouts, const LossConfig& cfg) {
  std::vector<PredictionMap> probs;
  probs.reserve(strong_scores.size());
  for (const auto& s : strong_scores) probs.push_back(softmax(s));
  const Retained r = retain(weak_pred, probs, strong_plan, strong_validity, cutouts, cfg.threshold);

  UnsupervisedLoss out;
  out.retained_count = r.count;
  const double inv_n = r.count == 0 ? 0.0 : 1.0 / static_cast<double>(r.count);
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto& p = probs[i];
    ScoreMap grad(p.classes(), p.height(), p.width(), 0.0);
    const auto l = r.labels[i].labels();
    for (std::size_t px = 0; px < l.size(); ++px) {
      const int t = l[px];
      if (t == kUnlabeled) continue;
      const double pt = p.at(t, px);
      sum += pseudo_label_loss(pt, t, cfg);
      const double scale = pseudo_label_loss_derivative(pt, t, cfg) * pt * inv_n;
      for (int c = 0; c < p.classes(); ++c) grad.at(c, px) = scale * ((c == t ? 1.0 : 0.0) - p.at(c, px));
    }
    out.score_grad.push_back(std::move(grad));
  }
  out.value = sum * inv_n;
  return out;
}

double total_loss(double sup, double unsup, const LossConfig& cfg) { return sup + cfg.lambda_coeff * unsup; }

}  // namespace fixseg
