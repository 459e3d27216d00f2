#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fixseg/raster.hpp"

namespace fixseg {

inline constexpr int kPatchBands = 11;

/// An 11-band surface-reflectance tile.
struct MultispectralPatch {
  std::string patch_id;
  Image bands;

  MultispectralPatch() = default;
  /// Throws MissingBandError unless `bands` has exactly kPatchBands bands.
  MultispectralPatch(std::string id, Image bands);

  int height() const { return bands.height(); }
  int width() const { return bands.width(); }
  bool has_nan() const;
};

/// Ordered grouped class names plus a name-keyed grouping of source classes onto them.
class ClassScheme {
 public:
  ClassScheme(std::vector<std::string> class_names, std::map<std::string, std::string> grouping);

  /// The 5-class MARIDA grouping: Marine Debris, Algae/Organic Material, Ship, Cloud, Water.
  static const ClassScheme& marida();

  int num_classes() const { return static_cast<int>(names_.size()); }
  const std::string& name(int index) const { return names_.at(static_cast<std::size_t>(index)); }
  std::span<const std::string> class_names() const { return names_; }
  const std::map<std::string, std::string>& grouping() const { return grouping_; }

  /// Grouped index for a source class name. Grouped names map to themselves, which makes regrouping
  /// idempotent. Throws UnknownClassError.
  int group_index(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::string> grouping_;
};

/// How raw integer values in a label raster are interpreted.
struct LabelEncoding {
  /// Raw value -> source class name. Empty means the raster already holds grouped indices.
  std::map<std::int32_t, std::string> names;
  /// Raw values meaning "no ground truth".
  std::set<std::int32_t> unlabeled_values{kUnlabeled};

  static LabelEncoding grouped();
  /// MARIDA distribution convention: 0 = unlabeled, 1..15 = source classes.
  static LabelEncoding marida_original();
  static LabelEncoding from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Maps raw label values through `encoding` and `scheme` to grouped indices (kUnlabeled kept).
SegmentationMap regroup(const SegmentationMap& raw, const ClassScheme& scheme, const LabelEncoding& encoding);

struct LoadedPatch {
  MultispectralPatch patch;
  SegmentationMap labels;
};

/// Reads a float32 [11,H,W] .npy patch and its int [H,W] label raster.
/// Throws MissingBandError, ShapeMismatchError, UnknownClassError.
LoadedPatch load_patch(const std::filesystem::path& patch_file, const std::filesystem::path& label_file,
                       const ClassScheme& scheme, const LabelEncoding& encoding = LabelEncoding::grouped());

void save_patch(const std::filesystem::path& patch_file, const std::filesystem::path& label_file,
                const MultispectralPatch& patch, const SegmentationMap& labels);

// --- NaN exclusion -------------------------------------------------------------------------

/// Patch ids excluded per split because their rasters contain NaN values.
class NanRegistry {
 public:
  /// The seven MARIDA patches known to contain NaNs.
  static NanRegistry marida_default();
  static NanRegistry load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  void flag(const std::string& split, const std::string& id);
  bool flagged(const std::string& id) const;
  std::vector<std::string> ids(const std::string& split) const;

 private:
  std::map<std::string, std::set<std::string>> by_split_;
};

/// Order-preserving removal of every flagged id.
std::vector<std::string> filter_nan_patches(std::span<const std::string> ids, const NanRegistry& registry);

// --- statistics ----------------------------------------------------------------------------

struct ClassPixelStats {
  std::vector<std::int64_t> counts;
  std::vector<double> fractions;  ///< percent of all labeled pixels
  std::int64_t total = 0;
};

/// Throws EmptyDatasetError when no labeled pixel exists.
ClassPixelStats class_pixel_stats(std::span<const SegmentationMap> maps, const ClassScheme& scheme);

// --- Two Training Sets split ---------------------------------------------------------------

struct SplitAssignment {
  std::vector<std::string> labeled_ids;
  std::vector<std::string> unlabeled_ids;
  double target_percent = 0.0;
  std::uint64_t seed = 0;
  /// Achieved percentage of each class's training labeled pixels held by the labeled subset.
  /// nullopt for classes with no labeled training pixel.
  std::vector<std::optional<double>> per_class_fraction;
};

struct SplitSearchOptions {
  int attempts_per_size = 10000;
  double tolerance = 5.0;  ///< percentage points around the target
};

/// Randomized image-level partition of `train_ids` such that every class's labeled-pixel share in the
/// labeled subset lies within target +- tolerance. `maps[i]` belongs to `train_ids[i]`.
/// Throws InfeasibleSplitError with the closest attempt's fractions.
SplitAssignment two_training_sets_split(std::span<const std::string> train_ids, std::span<const SegmentationMap> maps,
                                        int num_classes, double percent, std::uint64_t seed,
                                        const SplitSearchOptions& options = {});

nlohmann::json split_to_json(const SplitAssignment& split, const ClassScheme& scheme);
SplitAssignment split_from_json(const nlohmann::json& j, const ClassScheme& scheme);
void write_split_manifest(const std::filesystem::path& file, const SplitAssignment& split, const ClassScheme& scheme);
SplitAssignment read_split_manifest(const std::filesystem::path& file, const ClassScheme& scheme);

// --- band normalization --------------------------------------------------------------------

struct BandStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  nlohmann::json to_json() const;
  static BandStats from_json(const nlohmann::json& j);
};

BandStats compute_band_stats(std::span<const MultispectralPatch> patches);
/// In-place (x - mean) / stddev per band.
void normalize(Image& image, const BandStats& stats);

// --- on-disk dataset -----------------------------------------------------------------------

/// root/{patches,labels}/<id>.npy, root/splits/{train,val,test}.txt, optional root/label_encoding.json
/// and root/nan_registry.json.
class DatasetLayout {
 public:
  explicit DatasetLayout(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path patch_file(const std::string& id) const { return root_ / "patches" / (id + ".npy"); }
  std::filesystem::path label_file(const std::string& id) const { return root_ / "labels" / (id + ".npy"); }
  std::filesystem::path split_list(const std::string& split) const { return root_ / "splits" / (split + ".txt"); }
  std::filesystem::path manifest_file(double percent, std::uint64_t seed) const;

  std::vector<std::string> read_ids(const std::string& split) const;
  void write_ids(const std::string& split, std::span<const std::string> ids) const;
  LabelEncoding label_encoding() const;
  NanRegistry nan_registry() const;

 private:
  std::filesystem::path root_;
};

struct Sample {
  MultispectralPatch patch;
  SegmentationMap labels;
};

struct LoadedSplit {
  std::vector<Sample> samples;
  std::vector<std::string> excluded;  ///< registry-flagged or NaN-bearing ids
};

/// Loads every id of `split` that is neither registry-flagged nor found to contain NaNs at ingest.
LoadedSplit load_split(const DatasetLayout& layout, const std::string& split, const ClassScheme& scheme);
/// Loads exactly `ids` (no exclusion).
std::vector<Sample> load_samples(const DatasetLayout& layout, std::span<const std::string> ids,
                                 const ClassScheme& scheme);

// --- synthetic data ------------------------------------------------------------------------

struct SyntheticOptions {
  int n_patches = 8;  ///< training patches
  int height = 64;
  int width = 64;
  double label_fraction = 1.0;
  std::uint64_t seed = 0;
  int n_val = 0;
  int n_test = 0;
  double noise_sigma = 0.012;
};

/// Per-class mean reflectance of the synthetic generator (5 x 11).
const std::vector<std::vector<double>>& synthetic_signatures();

/// Writes an on-disk dataset of 11-band patches with elliptic blobs of the five classes over a
/// Water background, plus root/placement_log.json recording every planted region and how many of its
/// pixels carry labels. Returns the placement log.
nlohmann::json generate_synthetic_dataset(const std::filesystem::path& root, const SyntheticOptions& options);

}  // namespace fixseg
