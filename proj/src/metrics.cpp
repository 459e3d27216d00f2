#include "fixseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <sstream>

namespace fixseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : n_(num_classes), counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
  ConfusionMatrix cm(static_cast<int>(rows.size()));
  for (int t = 0; t < cm.n_; ++t) {
    if (static_cast<int>(rows[t].size()) != cm.n_) throw ShapeMismatchError("confusion matrix must be square");
    for (int p = 0; p < cm.n_; ++p) cm.add(t, p, rows[t][p]);
  }
  return cm;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int t = 0; t < n_; ++t) s += at(t, pred);
  return s;
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int c = 0; c < n_; ++c) s += at(c, c);
  return s;
}

void ConfusionMatrix::add(int truth, int pred, std::int64_t n) {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_) {
    throw UnknownClassError("class pair (" + std::to_string(truth) + ", " + std::to_string(pred) + ") out of range");
  }
  if (n < 0) throw DataError("confusion counts must be non-negative");
  counts_[static_cast<std::size_t>(truth) * n_ + pred] += n;
}

void ConfusionMatrix::accumulate(const SegmentationMap& pred, const SegmentationMap& truth) {
  if (pred.height() != truth.height() || pred.width() != truth.width()) {
    throw ShapeMismatchError("prediction and truth maps differ in size");
  }
  const auto p = pred.labels();
  const auto t = truth.labels();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != kUnlabeled) add(t[i], p[i]);
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw ShapeMismatchError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw EmptyMatrixError("confusion matrix is empty");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.num_classes());
  for (int c = 0; c < cm.num_classes(); ++c) {
    const std::int64_t uni = cm.row_sum(c) + cm.col_sum(c) - cm.at(c, c);
    if (uni > 0) out[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(uni);
  }
  return out;
}

double miou(std::span<const std::optional<double>> ious) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : ious) {
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) throw AllUndefinedError("no class has a defined IoU");
  return sum / n;
}

double miou(std::span<const double> ious) {
  std::vector<std::optional<double>> v(ious.begin(), ious.end());
  return miou(std::span<const std::optional<double>>(v));
}

double score_difference_variance(std::span<const double> row) {
  if (row.size() < 2) throw DegenerateInputError("variance needs at least two differences");
  double ss = 0.0;
  for (double x : row) ss += x * x;
  return ss / static_cast<double>(row.size() - 1);
}

double round_report(double v, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::floor(v * scale + 0.5) / scale;
}

std::string format_confusion_table(const ConfusionMatrix& cm, std::span<const std::string> class_names) {
  const int n = cm.num_classes();
  if (static_cast<int>(class_names.size()) != n) throw ShapeMismatchError("class name count differs from matrix size");
  std::size_t label_w = 9;  // "Sum(pred)"
  for (const auto& s : class_names) label_w = std::max(label_w, s.size());
  std::size_t cell_w = 8;
  for (const auto& s : class_names) cell_w = std::max(cell_w, s.size() + 1);
  cell_w = std::max(cell_w, std::to_string(cm.total()).size() + 1);

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_w)) << "" << std::right;
  for (const auto& s : class_names) os << std::setw(static_cast<int>(cell_w)) << s;
  os << std::setw(static_cast<int>(cell_w)) << "Sum(gt)" << '\n';
  for (int t = 0; t < n; ++t) {
    os << std::left << std::setw(static_cast<int>(label_w)) << class_names[t] << std::right;
    for (int p = 0; p < n; ++p) os << std::setw(static_cast<int>(cell_w)) << cm.at(t, p);
    os << std::setw(static_cast<int>(cell_w)) << cm.row_sum(t) << '\n';
  }
  os << std::left << std::setw(static_cast<int>(label_w)) << "Sum(pred)" << std::right;
  for (int p = 0; p < n; ++p) os << std::setw(static_cast<int>(cell_w)) << cm.col_sum(p);
  os << std::setw(static_cast<int>(cell_w)) << cm.total() << '\n';
  os << std::left << std::setw(static_cast<int>(label_w)) << "IoU" << std::right << std::fixed << std::setprecision(2);
  for (const auto& v : iou_per_class(cm)) {
    if (v) os << std::setw(static_cast<int>(cell_w)) << round_report(*v);
    else os << std::setw(static_cast<int>(cell_w)) << "n/a";
  }
  os << '\n';
  return os.str();
}

namespace {

bool parse_number(const std::string& tok, double& out) {
  std::istringstream is(tok);
  is >> out;
  return is && is.eof();
}

}  // namespace

std::vector<NamedRow> parse_named_rows(std::istream& in) {
  std::vector<NamedRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    NamedRow row;
    bool first = true;
    while (ls >> tok) {
      if (first && tok.front() == '#') break;
      first = false;
      double v = 0.0;
      if (parse_number(tok, v)) {
        row.values.push_back(v);
      } else if (row.values.empty()) {
        row.name += (row.name.empty() ? "" : " ") + tok;
      } else {
        throw DataError("unexpected token '" + tok + "' after numbers in: " + line);
      }
    }
    if (!row.values.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

ConfusionMatrix parse_confusion_matrix(std::istream& in) {
  std::vector<std::vector<std::int64_t>> rows;
  for (const auto& r : parse_named_rows(in)) {
    if (r.name == "Sum(pred)" || r.name == "IoU") continue;
    std::vector<std::int64_t> ints;
    for (double v : r.values) {
      if (v < 0 || v != std::floor(v)) throw DataError("confusion counts must be non-negative integers");
      ints.push_back(static_cast<std::int64_t>(v));
    }
    rows.push_back(std::move(ints));
  }
  if (rows.empty()) throw EmptyMatrixError("no matrix rows found");
  // drop a trailing Sum(gt) column if present
  const std::size_t n = rows.size();
  for (auto& r : rows) {
    if (r.size() == n + 1 && std::accumulate(r.begin(), r.end() - 1, std::int64_t{0}) == r.back()) r.pop_back();
  }
  return ConfusionMatrix::from_rows(rows);
}

}  // namespace fixseg
