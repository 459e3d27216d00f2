#include "fixseg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fixseg {

Image::Image(int bands, int height, int width, std::vector<float> data)
    : bands_(bands), height_(height), width_(width), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(bands) * height * width) {
    throw ShapeMismatchError("image buffer holds " + std::to_string(data_.size()) + " values, expected " +
                             std::to_string(static_cast<std::size_t>(bands) * height * width));
  }
}

SegmentationMap::SegmentationMap(int height, int width, std::vector<std::int32_t> labels)
    : height_(height), width_(width), labels_(std::move(labels)) {
  if (labels_.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeMismatchError("label buffer holds " + std::to_string(labels_.size()) + " values, expected " +
                             std::to_string(static_cast<std::size_t>(height) * width));
  }
}

std::size_t SegmentationMap::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels_.begin(), labels_.end(), [](std::int32_t v) { return v != kUnlabeled; }));
}

std::size_t ValidityMask::valid_count() const {
  return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), std::uint8_t{1}));
}

PredictionMap softmax(const ScoreMap& scores) {
  PredictionMap out(scores.classes(), scores.height(), scores.width());
  const std::size_t n = scores.plane_size();
  for (std::size_t p = 0; p < n; ++p) {
    double top = scores.at(0, p);
    for (int c = 1; c < scores.classes(); ++c) top = std::max(top, scores.at(c, p));
    double sum = 0.0;
    for (int c = 0; c < scores.classes(); ++c) {
      const double e = std::exp(scores.at(c, p) - top);
      out.at(c, p) = e;
      sum += e;
    }
    for (int c = 0; c < scores.classes(); ++c) out.at(c, p) /= sum;
  }
  return out;
}

SegmentationMap argmax(const ClassMap& map) {
  SegmentationMap out(map.height(), map.width(), 0);
  auto labels = out.labels();
  for (std::size_t p = 0; p < map.plane_size(); ++p) {
    int best = 0;
    for (int c = 1; c < map.classes(); ++c) {
      if (map.at(c, p) > map.at(best, p)) best = c;
    }
    labels[p] = best;
  }
  return out;
}

PseudoLabelMap PseudoLabelMap::from(const PredictionMap& probs) {
  PseudoLabelMap out{argmax(probs), std::vector<double>(probs.plane_size(), 0.0)};
  const auto classes = out.classes.labels();
  for (std::size_t p = 0; p < probs.plane_size(); ++p) out.confidence[p] = probs.at(classes[p], p);
  return out;
}

}  // namespace fixseg
