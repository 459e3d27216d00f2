#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "fixseg/random.hpp"
#include "fixseg/raster.hpp"

namespace fixseg {

enum class AugKind {
  Identity,
  Rotate,
  ShearX,
  ShearY,
  TranslateX,
  TranslateY,
  Solarize,
  Sharpness,
  HFlip,
  VFlip,
  Rotate90,
};

enum class AugTag { Geometric, Color };

std::string to_string(AugKind kind);
AugKind aug_kind_from_string(const std::string& name);
AugTag tag_of(AugKind kind);

/// Parameter units: degrees for Rotate/ShearX/ShearY/Rotate90, fraction of the image side for
/// TranslateX/TranslateY, normalized threshold for Solarize, blend factor for Sharpness.
struct AugStep {
  AugKind kind = AugKind::Identity;
  double param = 0.0;

  AugTag tag() const { return tag_of(kind); }
  bool operator==(const AugStep&) const = default;
};

/// Admissible parameter set of a kind: [lo, hi], or [-hi, -lo] U [lo, hi] when `symmetric`.
struct ParamRange {
  double lo = 0.0;
  double hi = 0.0;
  bool symmetric = false;

  bool contains(double v) const;
};

ParamRange parameter_range(AugKind kind);

struct AugmentationPlan {
  std::vector<AugStep> steps;

  /// True if applying the plan cannot change any input.
  bool is_identity() const;
  /// The same plan with color steps removed.
  AugmentationPlan geometric_only() const;
  bool has_color_step() const;

  nlohmann::json to_json() const;
  static AugmentationPlan from_json(const nlohmann::json& j);
  bool operator==(const AugmentationPlan&) const = default;
};

/// HFlip and VFlip each with probability 0.5, then a +-90 degree rotation with probability 0.5.
/// Always consumes four draws.
AugmentationPlan sample_weak_plan(RandomSource& rng);

/// Two steps drawn with repetition: the first from the full strong list, the second from its
/// geometric part, so a color step can only come first. Always consumes four draws.
AugmentationPlan sample_strong_plan(RandomSource& rng);

/// Exactly two steps, a color step only in first position, all parameters inside their ranges.
bool is_valid_strong_plan(const AugmentationPlan& plan);

/// Forward affine map x' = a*x + b*y + c, y' = d*x + e*y + f in pixel-index coordinates.
struct Affine {
  double a = 1, b = 0, c = 0;
  double d = 0, e = 1, f = 0;

  Affine then(const Affine& next) const;  ///< next(this(p))
  Affine inverse() const;
};

/// Composite forward transform of a run of geometric steps on an input of the given size.
struct Warp {
  Affine forward;
  int out_height = 0;
  int out_width = 0;
};

/// Affine of a single geometric step on an (h, w) input; rotations and shears act about the centre.
Warp step_warp(const AugStep& step, int height, int width);
/// Consecutive geometric steps compose into one warp; the input is resampled once.
Warp compose_warp(const std::vector<AugStep>& geometric_steps, int height, int width);

/// Applies every step. Geometric runs resample bilinearly with zero fill; pixels whose source falls
/// outside the input become false in the returned mask. Color steps alter valid pixels only.
std::pair<Image, ValidityMask> apply_plan(const AugmentationPlan& plan, const Image& image, const ValidityMask& mask);

/// Replays only the geometric steps with nearest-neighbour sampling. Padding becomes kUnlabeled
/// (labels), zero probability (class maps) and false (mask).
std::pair<SegmentationMap, ValidityMask> apply_geometric_only(const AugmentationPlan& plan,
                                                              const SegmentationMap& labels, const ValidityMask& mask);
std::pair<ClassMap, ValidityMask> apply_geometric_only(const AugmentationPlan& plan, const ClassMap& map,
                                                       const ValidityMask& mask);
std::pair<PseudoLabelMap, ValidityMask> apply_geometric_only(const AugmentationPlan& plan,
                                                             const PseudoLabelMap& pseudo, const ValidityMask& mask);

// --- color operations ----------------------------------------------------------------------

/// Per band, inverts the min-max normalized value above `threshold` (statistics over valid pixels).
void solarize(Image& image, const ValidityMask& mask, double threshold);
/// Per band, unsharp masking against the 3x3 box blur of valid neighbours: v + factor * (v - blur).
void sharpen(Image& image, const ValidityMask& mask, double factor);

// --- cutout --------------------------------------------------------------------------------

/// Axis-aligned rectangle with a 1-based centre; covers 0-based pixel (x, y) when
/// |x + 1 - cx| <= w/2 and |y + 1 - cy| <= h/2. May extend past the border.
struct CutoutRect {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool covers(int x, int y) const;
};

struct CutoutSpec {
  std::array<CutoutRect, 3> rects{};

  bool covers(int x, int y) const;
  std::size_t covered_pixels(int height, int width) const;
  nlohmann::json to_json() const;
};

/// Three rectangles: side lengths U(0.05, 0.15) times the image side, centres U(1, W) x U(1, H).
CutoutSpec sample_cutout(RandomSource& rng, int height, int width);

/// Zeroes covered image pixels and marks them invalid.
void apply_cutout(const CutoutSpec& spec, Image& image, ValidityMask& mask);

}  // namespace fixseg
