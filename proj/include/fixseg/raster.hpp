#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fixseg/error.hpp"

namespace fixseg {

inline constexpr std::int32_t kUnlabeled = -1;

/// Band-major float raster [bands, height, width].
class Image {
 public:
  Image() = default;
  Image(int bands, int height, int width, float fill = 0.0f)
      : bands_(bands), height_(height), width_(width),
        data_(static_cast<std::size_t>(bands) * height * width, fill) {}
  Image(int bands, int height, int width, std::vector<float> data);

  int bands() const { return bands_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  float& at(int b, int y, int x) { return data_[(static_cast<std::size_t>(b) * height_ + y) * width_ + x]; }
  float at(int b, int y, int x) const { return data_[(static_cast<std::size_t>(b) * height_ + y) * width_ + x]; }
  std::span<float> band(int b) { return {data_.data() + b * plane_size(), plane_size()}; }
  std::span<const float> band(int b) const { return {data_.data() + b * plane_size(), plane_size()}; }
  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int bands_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Per-pixel class indices; kUnlabeled marks pixels without ground truth.
class SegmentationMap {
 public:
  SegmentationMap() = default;
  SegmentationMap(int height, int width, std::int32_t fill = kUnlabeled)
      : height_(height), width_(width), labels_(static_cast<std::size_t>(height) * width, fill) {}
  SegmentationMap(int height, int width, std::vector<std::int32_t> labels);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return labels_.size(); }
  std::int32_t& at(int y, int x) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::int32_t at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const std::int32_t> labels() const { return labels_; }
  std::span<std::int32_t> labels() { return labels_; }
  std::size_t labeled_count() const;

  bool operator==(const SegmentationMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::int32_t> labels_;
};

/// true = real pixel, false = padding or cutout-removed.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(int height, int width, bool fill = true)
      : height_(height), width_(width), valid_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return valid_.size(); }
  bool at(int y, int x) const { return valid_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool v) { valid_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0; }
  bool operator[](std::size_t i) const { return valid_[i] != 0; }
  std::size_t valid_count() const;

  bool operator==(const ValidityMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> valid_;
};

/// Class-major double raster [classes, height, width]. Holds either raw scores (logits) or
/// per-pixel probability distributions depending on context.
class ClassMap {
 public:
  ClassMap() = default;
  ClassMap(int classes, int height, int width, double fill = 0.0)
      : classes_(classes), height_(height), width_(width),
        data_(static_cast<std::size_t>(classes) * height * width, fill) {}

  int classes() const { return classes_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }
  double& at(int c, int y, int x) { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x]; }
  double& at(int c, std::size_t pixel) { return data_[c * plane_size() + pixel]; }
  double at(int c, std::size_t pixel) const { return data_[c * plane_size() + pixel]; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  bool operator==(const ClassMap&) const = default;

 private:
  int classes_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

using ScoreMap = ClassMap;       ///< pre-normalization model outputs
using PredictionMap = ClassMap;  ///< per-pixel probability distributions

/// Numerically stable per-pixel softmax over the class axis.
PredictionMap softmax(const ScoreMap& scores);

/// Per-pixel argmax; ties resolve to the lowest class index.
SegmentationMap argmax(const ClassMap& map);

/// Hard pseudo-labels derived from a prediction map: argmax class and its probability.
struct PseudoLabelMap {
  SegmentationMap classes;
  std::vector<double> confidence;

  static PseudoLabelMap from(const PredictionMap& probs);
};

}  // namespace fixseg
