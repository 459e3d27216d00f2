#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fixseg/raster.hpp"

namespace fixseg {

/// counts[truth][prediction]; pixels whose truth is kUnlabeled are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = 0);
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::int64_t>>& rows);

  int num_classes() const { return n_; }
  std::int64_t at(int truth, int pred) const { return counts_[static_cast<std::size_t>(truth) * n_ + pred]; }
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;
  std::int64_t total() const;
  std::int64_t trace() const;

  void add(int truth, int pred, std::int64_t n = 1);
  /// Throws ShapeMismatchError on size mismatch and UnknownClassError on out-of-range classes.
  void accumulate(const SegmentationMap& pred, const SegmentationMap& truth);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int n_ = 0;
  std::vector<std::int64_t> counts_;
};

/// trace / total. Throws EmptyMatrixError when nothing was counted.
double pixel_accuracy(const ConfusionMatrix& cm);

/// TP / (TP + FP + FN) per class; nullopt when the class is absent from truth and prediction.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm);

/// Mean over defined entries. Throws AllUndefinedError if none is defined.
double miou(std::span<const std::optional<double>> ious);
double miou(std::span<const double> ious);

/// Variance of a row of signed score differences with the mean fixed at zero:
/// sum(x^2) / (n - 1). Throws DegenerateInputError for n < 2.
double score_difference_variance(std::span<const double> row);

/// Half-up rounding to `decimals` places, as used in printed tables.
double round_report(double v, int decimals = 2);

/// Rows truth, columns prediction, Sum(gt) column, Sum(pred) and IoU rows.
std::string format_confusion_table(const ConfusionMatrix& cm, std::span<const std::string> class_names);

/// Named numeric rows: each non-empty line is a label followed by numbers. Lines starting
/// with '#' are skipped; the label may contain spaces and may be empty.
struct NamedRow {
  std::string name;
  std::vector<double> values;
};
std::vector<NamedRow> parse_named_rows(std::istream& in);

/// Square integer matrix rows; a leading non-numeric label per row and any line whose first
/// token is non-numeric but has no numbers (a header) are ignored. Sum(gt)/Sum(pred)/IoU
/// lines from format_confusion_table are skipped so exports round-trip.
ConfusionMatrix parse_confusion_matrix(std::istream& in);

}  // namespace fixseg
