#include "fixseg/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fixseg {

using nlohmann::json;

namespace {

constexpr AugKind kStrongList[] = {AugKind::Identity,   AugKind::Rotate,     AugKind::ShearX,   AugKind::ShearY,
                                   AugKind::TranslateX, AugKind::TranslateY, AugKind::Solarize, AugKind::Sharpness};
constexpr AugKind kStrongGeometric[] = {AugKind::Identity,   AugKind::Rotate,     AugKind::ShearX,
                                        AugKind::ShearY,     AugKind::TranslateX, AugKind::TranslateY};

// Source coordinates within this distance outside [0, n-1] still count as inside; absorbs
// rounding in composed rotations.
constexpr double kEdgeSlack = 1e-6;

double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }

// Maps u in [0,1) uniformly onto the range (over the union's measure when symmetric).
double draw_param(const ParamRange& r, double u) {
  if (!r.symmetric) return r.lo + (r.hi - r.lo) * u;
  if (u < 0.5) return -r.hi + (r.hi - r.lo) * (2.0 * u);
  return r.lo + (r.hi - r.lo) * (2.0 * u - 1.0);
}

struct SourcePoint {
  double x, y;
  bool inside;
};

SourcePoint source_of(const Affine& inv, int x, int y, int in_h, int in_w) {
  const double sx = inv.a * x + inv.b * y + inv.c;
  const double sy = inv.d * x + inv.e * y + inv.f;
  const bool inside = sx >= -kEdgeSlack && sx <= in_w - 1 + kEdgeSlack && sy >= -kEdgeSlack && sy <= in_h - 1 + kEdgeSlack;
  return {std::clamp(sx, 0.0, static_cast<double>(in_w - 1)), std::clamp(sy, 0.0, static_cast<double>(in_h - 1)),
          inside};
}

int nearest(double v) { return static_cast<int>(std::floor(v + 0.5)); }

// Splits the plan into maximal geometric runs and single color steps, preserving order.
template <typename OnGeometric, typename OnColor>
void for_each_run(const AugmentationPlan& plan, OnGeometric&& on_geometric, OnColor&& on_color) {
  std::vector<AugStep> run;
  for (const auto& step : plan.steps) {
    if (step.tag() == AugTag::Geometric) {
      run.push_back(step);
      continue;
    }
    if (!run.empty()) on_geometric(run);
    run.clear();
    on_color(step);
  }
  if (!run.empty()) on_geometric(run);
}

// Nearest-neighbour resampling shared by every map type; `copy(dst_pixel, src_pixel)` moves one
// pixel and `pad(dst_pixel)` fills padding.
template <typename Copy, typename Pad>
ValidityMask warp_nearest(const Warp& warp, const ValidityMask& mask, Copy&& copy, Pad&& pad) {
  const Affine inv = warp.forward.inverse();
  ValidityMask out(warp.out_height, warp.out_width, false);
  for (int y = 0; y < warp.out_height; ++y) {
    for (int x = 0; x < warp.out_width; ++x) {
      const std::size_t dst = static_cast<std::size_t>(y) * warp.out_width + x;
      const auto src = source_of(inv, x, y, mask.height(), mask.width());
      if (!src.inside) {
        pad(dst);
        continue;
      }
      const int sx = nearest(src.x);
      const int sy = nearest(src.y);
      copy(dst, static_cast<std::size_t>(sy) * mask.width() + sx);
      out.set(y, x, mask.at(sy, sx));
    }
  }
  return out;
}

}  // namespace

std::string to_string(AugKind kind) {
  switch (kind) {
    case AugKind::Identity: return "Identity";
    case AugKind::Rotate: return "Rotate";
    case AugKind::ShearX: return "ShearX";
    case AugKind::ShearY: return "ShearY";
    case AugKind::TranslateX: return "TranslateX";
    case AugKind::TranslateY: return "TranslateY";
    case AugKind::Solarize: return "Solarize";
    case AugKind::Sharpness: return "Sharpness";
    case AugKind::HFlip: return "HFlip";
    case AugKind::VFlip: return "VFlip";
    case AugKind::Rotate90: return "Rotate90";
  }
  return "?";
}

AugKind aug_kind_from_string(const std::string& name) {
  for (AugKind k : {AugKind::Identity, AugKind::Rotate, AugKind::ShearX, AugKind::ShearY, AugKind::TranslateX,
                    AugKind::TranslateY, AugKind::Solarize, AugKind::Sharpness, AugKind::HFlip, AugKind::VFlip,
                    AugKind::Rotate90}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown augmentation '" + name + "'");
}

AugTag tag_of(AugKind kind) {
  return (kind == AugKind::Solarize || kind == AugKind::Sharpness) ? AugTag::Color : AugTag::Geometric;
}

bool ParamRange::contains(double v) const {
  const double m = symmetric ? std::abs(v) : v;
  return m >= lo && m <= hi;
}

ParamRange parameter_range(AugKind kind) {
  switch (kind) {
    case AugKind::Rotate:
    case AugKind::ShearX:
    case AugKind::ShearY: return {5.0, 30.0, true};
    case AugKind::TranslateX:
    case AugKind::TranslateY: return {0.1, 0.2, true};
    case AugKind::Solarize: return {0.01, 0.99, false};
    case AugKind::Sharpness: return {0.2, 0.5, false};
    case AugKind::Rotate90: return {90.0, 90.0, true};
    case AugKind::Identity:
    case AugKind::HFlip:
    case AugKind::VFlip: return {0.0, 0.0, false};
  }
  return {};
}

// --- plans ---------------------------------------------------------------------------------

bool AugmentationPlan::is_identity() const {
  return std::all_of(steps.begin(), steps.end(), [](const AugStep& s) { return s.kind == AugKind::Identity; });
}

AugmentationPlan AugmentationPlan::geometric_only() const {
  AugmentationPlan p;
  std::copy_if(steps.begin(), steps.end(), std::back_inserter(p.steps),
               [](const AugStep& s) { return s.tag() == AugTag::Geometric; });
  return p;
}

bool AugmentationPlan::has_color_step() const {
  return std::any_of(steps.begin(), steps.end(), [](const AugStep& s) { return s.tag() == AugTag::Color; });
}

json AugmentationPlan::to_json() const {
  json arr = json::array();
  for (const auto& s : steps) {
    arr.push_back({{"kind", to_string(s.kind)},
                   {"param", s.param},
                   {"tag", s.tag() == AugTag::Geometric ? "geometric" : "color"}});
  }
  return arr;
}

AugmentationPlan AugmentationPlan::from_json(const json& j) {
  AugmentationPlan p;
  for (const auto& s : j) p.steps.push_back({aug_kind_from_string(s.at("kind").get<std::string>()), s.at("param").get<double>()});
  return p;
}

AugmentationPlan sample_weak_plan(RandomSource& rng) {
  const bool hflip = rng.bernoulli(0.5);
  const bool vflip = rng.bernoulli(0.5);
  const bool rotate = rng.bernoulli(0.5);
  const double angle = rng.uniform01() < 0.5 ? -90.0 : 90.0;
  AugmentationPlan p;
  if (hflip) p.steps.push_back({AugKind::HFlip, 0.0});
  if (vflip) p.steps.push_back({AugKind::VFlip, 0.0});
  if (rotate) p.steps.push_back({AugKind::Rotate90, angle});
  return p;
}

AugmentationPlan sample_strong_plan(RandomSource& rng) {
  const AugKind first = kStrongList[rng.index(std::size(kStrongList))];
  const double first_u = rng.uniform01();
  const AugKind second = kStrongGeometric[rng.index(std::size(kStrongGeometric))];
  const double second_u = rng.uniform01();
  AugmentationPlan p;
  p.steps.push_back({first, draw_param(parameter_range(first), first_u)});
  p.steps.push_back({second, draw_param(parameter_range(second), second_u)});
  return p;
}

bool is_valid_strong_plan(const AugmentationPlan& plan) {
  if (plan.steps.size() != 2) return false;
  if (plan.steps[1].tag() == AugTag::Color) return false;
  for (const auto& s : plan.steps) {
    if (std::find(std::begin(kStrongList), std::end(kStrongList), s.kind) == std::end(kStrongList)) return false;
    if (!parameter_range(s.kind).contains(s.param)) return false;
  }
  return true;
}

// --- geometry ------------------------------------------------------------------------------

Affine Affine::then(const Affine& n) const {
  return {n.a * a + n.b * d, n.a * b + n.b * e, n.a * c + n.b * f + n.c,
          n.d * a + n.e * d, n.d * b + n.e * e, n.d * c + n.e * f + n.f};
}

Affine Affine::inverse() const {
  const double det = a * e - b * d;
  const double ia = e / det, ib = -b / det, id = -d / det, ie = a / det;
  return {ia, ib, -(ia * c + ib * f), id, ie, -(id * c + ie * f)};
}

Warp step_warp(const AugStep& step, int h, int w) {
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  // Rotation by theta, counter-clockwise on screen (y axis pointing down), about the centre.
  auto rotation = [&](double cos_t, double sin_t, double out_cx, double out_cy) {
    return Affine{cos_t, sin_t, out_cx - cos_t * cx - sin_t * cy, -sin_t, cos_t, out_cy + sin_t * cx - cos_t * cy};
  };
  switch (step.kind) {
    case AugKind::Identity:
    case AugKind::Solarize:
    case AugKind::Sharpness: return {Affine{}, h, w};
    case AugKind::HFlip: return {Affine{-1, 0, static_cast<double>(w - 1), 0, 1, 0}, h, w};
    case AugKind::VFlip: return {Affine{1, 0, 0, 0, -1, static_cast<double>(h - 1)}, h, w};
    case AugKind::Rotate90: {
      const double s = step.param >= 0 ? 1.0 : -1.0;
      return {rotation(0.0, s, (h - 1) / 2.0, (w - 1) / 2.0), w, h};
    }
    case AugKind::Rotate: {
      const double t = deg2rad(step.param);
      return {rotation(std::cos(t), std::sin(t), cx, cy), h, w};
    }
    case AugKind::ShearX: return {Affine{1, std::tan(deg2rad(step.param)), -std::tan(deg2rad(step.param)) * cy, 0, 1, 0}, h, w};
    case AugKind::ShearY: return {Affine{1, 0, 0, std::tan(deg2rad(step.param)), 1, -std::tan(deg2rad(step.param)) * cx}, h, w};
    case AugKind::TranslateX: return {Affine{1, 0, step.param * w, 0, 1, 0}, h, w};
    case AugKind::TranslateY: return {Affine{1, 0, 0, 0, 1, step.param * h}, h, w};
  }
  return {Affine{}, h, w};
}

Warp compose_warp(const std::vector<AugStep>& steps, int h, int w) {
  Warp total{Affine{}, h, w};
  for (const auto& s : steps) {
    const Warp next = step_warp(s, total.out_height, total.out_width);
    total = {total.forward.then(next.forward), next.out_height, next.out_width};
  }
  return total;
}

namespace {

std::pair<Image, ValidityMask> warp_bilinear(const Warp& warp, const Image& img, const ValidityMask& mask) {
  const Affine inv = warp.forward.inverse();
  Image out(img.bands(), warp.out_height, warp.out_width, 0.0f);
  ValidityMask out_mask(warp.out_height, warp.out_width, false);
  for (int y = 0; y < warp.out_height; ++y) {
    for (int x = 0; x < warp.out_width; ++x) {
      const auto src = source_of(inv, x, y, img.height(), img.width());
      if (!src.inside) continue;
      const int x0 = static_cast<int>(std::floor(src.x));
      const int y0 = static_cast<int>(std::floor(src.y));
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const int y1 = std::min(y0 + 1, img.height() - 1);
      const double fx = src.x - x0;
      const double fy = src.y - y0;
      for (int b = 0; b < img.bands(); ++b) {
        const double top = img.at(b, y0, x0) * (1.0 - fx) + img.at(b, y0, x1) * fx;
        const double bottom = img.at(b, y1, x0) * (1.0 - fx) + img.at(b, y1, x1) * fx;
        out.at(b, y, x) = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
      out_mask.set(y, x, mask.at(nearest(src.y), nearest(src.x)));
    }
  }
  return {std::move(out), std::move(out_mask)};
}

}  // namespace

std::pair<Image, ValidityMask> apply_plan(const AugmentationPlan& plan, const Image& image, const ValidityMask& mask) {
  if (mask.height() != image.height() || mask.width() != image.width()) {
    throw ShapeMismatchError("validity mask does not match image");
  }
  Image img = image;
  ValidityMask m = mask;
  for_each_run(
      plan,
      [&](const std::vector<AugStep>& run) {
        const Warp warp = compose_warp(run, img.height(), img.width());
        auto [next_img, next_mask] = warp_bilinear(warp, img, m);
        img = std::move(next_img);
        m = std::move(next_mask);
      },
      [&](const AugStep& step) {
        if (step.kind == AugKind::Solarize) solarize(img, m, step.param);
        else sharpen(img, m, step.param);
      });
  return {std::move(img), std::move(m)};
}

std::pair<SegmentationMap, ValidityMask> apply_geometric_only(const AugmentationPlan& plan,
                                                              const SegmentationMap& labels, const ValidityMask& mask) {
  if (mask.height() != labels.height() || mask.width() != labels.width()) {
    throw ShapeMismatchError("validity mask does not match label map");
  }
  const Warp warp = compose_warp(plan.geometric_only().steps, labels.height(), labels.width());
  SegmentationMap out(warp.out_height, warp.out_width, kUnlabeled);
  auto dst = out.labels();
  const auto src = labels.labels();
  auto out_mask = warp_nearest(warp, mask, [&](std::size_t d, std::size_t s) { dst[d] = src[s]; }, [](std::size_t) {});
  return {std::move(out), std::move(out_mask)};
}

std::pair<ClassMap, ValidityMask> apply_geometric_only(const AugmentationPlan& plan, const ClassMap& map,
                                                       const ValidityMask& mask) {
  if (mask.height() != map.height() || mask.width() != map.width()) {
    throw ShapeMismatchError("validity mask does not match class map");
  }
  const Warp warp = compose_warp(plan.geometric_only().steps, map.height(), map.width());
  ClassMap out(map.classes(), warp.out_height, warp.out_width, 0.0);
  auto out_mask = warp_nearest(
      warp, mask,
      [&](std::size_t d, std::size_t s) {
        for (int c = 0; c < map.classes(); ++c) out.at(c, d) = map.at(c, s);
      },
      [](std::size_t) {});
  return {std::move(out), std::move(out_mask)};
}

std::pair<PseudoLabelMap, ValidityMask> apply_geometric_only(const AugmentationPlan& plan,
                                                             const PseudoLabelMap& pseudo, const ValidityMask& mask) {
  const auto& labels = pseudo.classes;
  if (mask.height() != labels.height() || mask.width() != labels.width()) {
    throw ShapeMismatchError("validity mask does not match pseudo-label map");
  }
  const Warp warp = compose_warp(plan.geometric_only().steps, labels.height(), labels.width());
  PseudoLabelMap out{SegmentationMap(warp.out_height, warp.out_width, kUnlabeled),
                     std::vector<double>(static_cast<std::size_t>(warp.out_height) * warp.out_width, 0.0)};
  auto dst = out.classes.labels();
  const auto src = labels.labels();
  auto out_mask = warp_nearest(
      warp, mask,
      [&](std::size_t d, std::size_t s) {
        dst[d] = src[s];
        out.confidence[d] = pseudo.confidence[s];
      },
      [](std::size_t) {});
  return {std::move(out), std::move(out_mask)};
}

// --- color -----------------------------------------------------------------------------------

void solarize(Image& image, const ValidityMask& mask, double threshold) {
  const std::size_t n = image.plane_size();
  for (int b = 0; b < image.bands(); ++b) {
    auto band = image.band(b);
    float lo = 0.0f, hi = 0.0f;
    bool any = false;
    for (std::size_t p = 0; p < n; ++p) {
      if (!mask[p]) continue;
      lo = any ? std::min(lo, band[p]) : band[p];
      hi = any ? std::max(hi, band[p]) : band[p];
      any = true;
    }
    if (!any || hi <= lo) continue;
    const double span = static_cast<double>(hi) - lo;
    for (std::size_t p = 0; p < n; ++p) {
      if (!mask[p]) continue;
      const double v = (band[p] - lo) / span;
      if (v > threshold) band[p] = static_cast<float>(lo + (1.0 - v) * span);
    }
  }
}

void sharpen(Image& image, const ValidityMask& mask, double factor) {
  const int h = image.height();
  const int w = image.width();
  for (int b = 0; b < image.bands(); ++b) {
    const std::vector<float> src(image.band(b).begin(), image.band(b).end());
    auto band = image.band(b);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!mask.at(y, x)) continue;
        double sum = 0.0;
        int count = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= h || xx < 0 || xx >= w || !mask.at(yy, xx)) continue;
            sum += src[static_cast<std::size_t>(yy) * w + xx];
            ++count;
          }
        }
        const double v = src[static_cast<std::size_t>(y) * w + x];
        const double blur = sum / count;
        band[static_cast<std::size_t>(y) * w + x] = static_cast<float>(v + factor * (v - blur));
      }
    }
  }
}

// --- cutout ----------------------------------------------------------------------------------

bool CutoutRect::covers(int x, int y) const {
  return std::abs(x + 1 - cx) <= w / 2.0 && std::abs(y + 1 - cy) <= h / 2.0;
}

bool CutoutSpec::covers(int x, int y) const {
  return std::any_of(rects.begin(), rects.end(), [&](const CutoutRect& r) { return r.covers(x, y); });
}

std::size_t CutoutSpec::covered_pixels(int height, int width) const {
  std::size_t n = 0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) n += covers(x, y) ? 1 : 0;
  }
  return n;
}

json CutoutSpec::to_json() const {
  json arr = json::array();
  for (const auto& r : rects) arr.push_back({{"cx", r.cx}, {"cy", r.cy}, {"w", r.w}, {"h", r.h}});
  return arr;
}

CutoutSpec sample_cutout(RandomSource& rng, int height, int width) {
  if (height < 8 || width < 8) throw ShapeError("cutout needs an image of at least 8x8 pixels");
  CutoutSpec spec;
  for (auto& r : spec.rects) {
    r.h = rng.uniform(0.05, 0.15) * height;
    r.w = rng.uniform(0.05, 0.15) * width;
    r.cx = rng.uniform(1.0, static_cast<double>(width));
    r.cy = rng.uniform(1.0, static_cast<double>(height));
  }
  return spec;
}

void apply_cutout(const CutoutSpec& spec, Image& image, ValidityMask& mask) {
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      if (!spec.covers(x, y)) continue;
      for (int b = 0; b < image.bands(); ++b) image.at(b, y, x) = 0.0f;
      mask.set(y, x, false);
    }
  }
}

}  // namespace fixseg
