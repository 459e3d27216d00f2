#include "fixseg/marida_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "fixseg/npy.hpp"
#include "fixseg/random.hpp"

namespace fixseg {

using nlohmann::json;
namespace fs = std::filesystem;

MultispectralPatch::MultispectralPatch(std::string id, Image b) : patch_id(std::move(id)), bands(std::move(b)) {
  if (bands.bands() != kPatchBands) {
    throw MissingBandError("patch '" + patch_id + "' has " + std::to_string(bands.bands()) + " bands, expected " +
                           std::to_string(kPatchBands));
  }
}

bool MultispectralPatch::has_nan() const {
  const auto d = bands.data();
  return std::any_of(d.begin(), d.end(), [](float v) { return std::isnan(v); });
}

// --- class scheme ----------------------------------------------------------------------------

ClassScheme::ClassScheme(std::vector<std::string> class_names, std::map<std::string, std::string> grouping)
    : names_(std::move(class_names)), grouping_(std::move(grouping)) {
  for (const auto& [source, target] : grouping_) {
    if (std::find(names_.begin(), names_.end(), target) == names_.end()) {
      throw UnknownClassError("grouping maps '" + source + "' onto unknown class '" + target + "'");
    }
  }
}

const ClassScheme& ClassScheme::marida() {
  static const ClassScheme scheme(
      {"Marine Debris", "Algae/Organic Material", "Ship", "Cloud", "Water"},
      {
          {"Marine Debris", "Marine Debris"},
          {"Dense Sargassum", "Algae/Organic Material"},
          {"Sparse Sargassum", "Algae/Organic Material"},
          {"Natural Organic Material", "Algae/Organic Material"},
          {"Ship", "Ship"},
          {"Clouds", "Cloud"},
          {"Marine Water", "Water"},
          {"Sediment-Laden Water", "Water"},
          {"Foam", "Water"},
          {"Turbid Water", "Water"},
          {"Shallow Water", "Water"},
          {"Waves", "Water"},
          {"Cloud Shadows", "Water"},
          {"Wakes", "Water"},
          {"Mixed Water", "Water"},
      });
  return scheme;
}

int ClassScheme::group_index(const std::string& name) const {
  std::string target = name;
  if (auto it = grouping_.find(name); it != grouping_.end()) target = it->second;
  auto pos = std::find(names_.begin(), names_.end(), target);
  if (pos == names_.end()) throw UnknownClassError("class '" + name + "' is not part of the grouping");
  return static_cast<int>(pos - names_.begin());
}

// --- label encodings -----------------------------------------------------------------------

LabelEncoding LabelEncoding::grouped() { return LabelEncoding{}; }

LabelEncoding LabelEncoding::marida_original() {
  LabelEncoding e;
  e.unlabeled_values = {0, kUnlabeled};
  const char* names[] = {"Marine Debris", "Dense Sargassum", "Sparse Sargassum", "Natural Organic Material",
                         "Ship", "Clouds", "Marine Water", "Sediment-Laden Water", "Foam", "Turbid Water",
                         "Shallow Water", "Waves", "Cloud Shadows", "Wakes", "Mixed Water"};
  for (int i = 0; i < 15; ++i) e.names[i + 1] = names[i];
  return e;
}

LabelEncoding LabelEncoding::from_json(const json& j) {
  LabelEncoding e;
  if (j.contains("unlabeled")) e.unlabeled_values = j.at("unlabeled").get<std::set<std::int32_t>>();
  if (j.contains("names")) {
    for (const auto& [key, value] : j.at("names").items()) e.names[std::stoi(key)] = value.get<std::string>();
  }
  return e;
}

json LabelEncoding::to_json() const {
  json names_json = json::object();
  for (const auto& [value, name] : names) names_json[std::to_string(value)] = name;
  return {{"unlabeled", unlabeled_values}, {"names", names_json}};
}

SegmentationMap regroup(const SegmentationMap& raw, const ClassScheme& scheme, const LabelEncoding& encoding) {
  SegmentationMap out(raw.height(), raw.width());
  auto dst = out.labels();
  const auto src = raw.labels();
  // resolve each distinct raw value once
  std::map<std::int32_t, std::int32_t> lut;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::int32_t v = src[i];
    auto it = lut.find(v);
    if (it == lut.end()) {
      std::int32_t mapped;
      if (encoding.unlabeled_values.contains(v)) {
        mapped = kUnlabeled;
      } else if (encoding.names.empty()) {
        if (v < 0 || v >= scheme.num_classes()) {
          throw UnknownClassError("label value " + std::to_string(v) + " is outside the " +
                                  std::to_string(scheme.num_classes()) + " grouped classes");
        }
        mapped = v;
      } else {
        auto name = encoding.names.find(v);
        if (name == encoding.names.end()) {
          throw UnknownClassError("label value " + std::to_string(v) + " has no class name in the encoding");
        }
        mapped = scheme.group_index(name->second);
      }
      it = lut.emplace(v, mapped).first;
    }
    dst[i] = it->second;
  }
  return out;
}

LoadedPatch load_patch(const fs::path& patch_file, const fs::path& label_file, const ClassScheme& scheme,
                       const LabelEncoding& encoding) {
  auto image = npy::read_float(patch_file);
  if (image.shape.size() != 3) {
    throw ShapeMismatchError(patch_file.string() + ": expected a [bands,H,W] array");
  }
  if (image.shape[0] != kPatchBands) {
    throw MissingBandError(patch_file.string() + ": " + std::to_string(image.shape[0]) + " bands, expected " +
                           std::to_string(kPatchBands));
  }
  auto labels = npy::read_int(label_file);
  if (labels.shape.size() != 2 || labels.shape[0] != image.shape[1] || labels.shape[1] != image.shape[2]) {
    throw ShapeMismatchError(label_file.string() + ": label raster does not match patch spatial shape");
  }
  const int h = static_cast<int>(image.shape[1]);
  const int w = static_cast<int>(image.shape[2]);
  LoadedPatch out;
  out.patch = MultispectralPatch(patch_file.stem().string(), Image(kPatchBands, h, w, std::move(image.values)));
  out.labels = regroup(SegmentationMap(h, w, std::move(labels.values)), scheme, encoding);
  return out;
}

void save_patch(const fs::path& patch_file, const fs::path& label_file, const MultispectralPatch& patch,
                const SegmentationMap& labels) {
  const auto d = patch.bands.data();
  npy::write(patch_file, {patch.bands.bands(), patch.height(), patch.width()}, std::vector<float>(d.begin(), d.end()));
  const auto l = labels.labels();
  npy::write(label_file, {labels.height(), labels.width()}, std::vector<std::int32_t>(l.begin(), l.end()));
}

// --- NaN registry --------------------------------------------------------------------------

NanRegistry NanRegistry::marida_default() {
  NanRegistry r;
  r.flag("train", "21-2-17_16PCC_0");
  for (const char* id : {"18-9-20_16PCC_47", "18-9-20_16PCC_48", "18-9-20_16PCC_50"}) r.flag("val", id);
  for (const char* id : {"30-8-18_16PCC_0", "30-8-18_16PCC_1", "30-8-18_16PCC_2"}) r.flag("test", id);
  return r;
}

NanRegistry NanRegistry::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open NaN registry " + file.string());
  const json j = json::parse(in);
  NanRegistry r;
  for (const auto& [split, ids] : j.items()) {
    for (const auto& id : ids) r.flag(split, id.get<std::string>());
  }
  return r;
}

void NanRegistry::save(const fs::path& file) const {
  json j = json::object();
  for (const auto& [split, ids] : by_split_) j[split] = ids;
  std::ofstream(file) << j.dump(2) << '\n';
}

void NanRegistry::flag(const std::string& split, const std::string& id) { by_split_[split].insert(id); }

bool NanRegistry::flagged(const std::string& id) const {
  return std::any_of(by_split_.begin(), by_split_.end(), [&](const auto& kv) { return kv.second.contains(id); });
}

std::vector<std::string> NanRegistry::ids(const std::string& split) const {
  auto it = by_split_.find(split);
  if (it == by_split_.end()) return {};
  return {it->second.begin(), it->second.end()};
}

std::vector<std::string> filter_nan_patches(std::span<const std::string> ids, const NanRegistry& registry) {
  std::vector<std::string> out;
  std::copy_if(ids.begin(), ids.end(), std::back_inserter(out), [&](const auto& id) { return !registry.flagged(id); });
  return out;
}

// --- statistics ----------------------------------------------------------------------------

ClassPixelStats class_pixel_stats(std::span<const SegmentationMap> maps, const ClassScheme& scheme) {
  ClassPixelStats stats;
  stats.counts.assign(static_cast<std::size_t>(scheme.num_classes()), 0);
  for (const auto& map : maps) {
    for (std::int32_t v : map.labels()) {
      if (v == kUnlabeled) continue;
      if (v < 0 || v >= scheme.num_classes()) throw UnknownClassError("label " + std::to_string(v) + " out of range");
      ++stats.counts[static_cast<std::size_t>(v)];
    }
  }
  stats.total = std::accumulate(stats.counts.begin(), stats.counts.end(), std::int64_t{0});
  if (stats.total == 0) throw EmptyDatasetError("no labeled pixel in the dataset");
  for (auto c : stats.counts) stats.fractions.push_back(100.0 * static_cast<double>(c) / static_cast<double>(stats.total));
  return stats;
}

// --- split ---------------------------------------------------------------------------------

namespace {

std::string format_fractions(const std::vector<std::optional<double>>& f) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << "[";
  for (std::size_t c = 0; c < f.size(); ++c) {
    if (c) os << ", ";
    if (f[c]) os << *f[c];
    else os << "n/a";
  }
  os << "]";
  return os.str();
}

}  // namespace

SplitAssignment two_training_sets_split(std::span<const std::string> train_ids, std::span<const SegmentationMap> maps,
                                        int num_classes, double percent, std::uint64_t seed,
                                        const SplitSearchOptions& options) {
  if (train_ids.size() != maps.size()) throw ShapeMismatchError("split: one label map per training id required");
  if (train_ids.empty()) throw EmptyDatasetError("split: empty training set");
  if (!(percent > 0.0 && percent <= 100.0)) throw ConfigError("split: percentage must lie in (0, 100]");

  const std::size_t n = train_ids.size();
  const auto classes = static_cast<std::size_t>(num_classes);
  std::vector<std::vector<std::int64_t>> per_image(n, std::vector<std::int64_t>(classes, 0));
  std::vector<std::int64_t> totals(classes, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::int32_t v : maps[i].labels()) {
      if (v == kUnlabeled) continue;
      if (v < 0 || v >= num_classes) throw UnknownClassError("split: label " + std::to_string(v) + " out of range");
      ++per_image[i][static_cast<std::size_t>(v)];
      ++totals[static_cast<std::size_t>(v)];
    }
  }

  auto fractions_of = [&](std::span<const std::size_t> chosen) {
    std::vector<std::int64_t> held(classes, 0);
    for (std::size_t i : chosen) {
      for (std::size_t c = 0; c < classes; ++c) held[c] += per_image[i][c];
    }
    std::vector<std::optional<double>> f(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      if (totals[c] > 0) f[c] = 100.0 * static_cast<double>(held[c]) / static_cast<double>(totals[c]);
    }
    return f;
  };
  auto violation = [&](const std::vector<std::optional<double>>& f) {
    double worst = 0.0;
    for (const auto& v : f) {
      if (v) worst = std::max(worst, std::abs(*v - percent) - options.tolerance);
    }
    return worst;
  };

  const auto base = static_cast<std::size_t>(
      std::clamp<double>(std::ceil(percent / 100.0 * static_cast<double>(n) - 1e-9), 1.0, static_cast<double>(n)));
  std::vector<std::size_t> sizes{base};
  if (base + 1 <= n) sizes.push_back(base + 1);
  if (base > 1) sizes.push_back(base - 1);

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_violation = std::numeric_limits<double>::infinity();
  std::vector<std::optional<double>> best_fractions;

  for (std::size_t k : sizes) {
    const int attempts = (k == n) ? 1 : options.attempts_per_size;
    for (int a = 0; a < attempts; ++a) {
      rng.shuffle(std::span<std::size_t>(order));
      std::span<const std::size_t> chosen(order.data(), k);
      auto f = fractions_of(chosen);
      const double v = violation(f);
      if (v <= 0.0) {
        std::vector<bool> labeled(n, false);
        for (std::size_t i : chosen) labeled[i] = true;
        SplitAssignment split;
        split.target_percent = percent;
        split.seed = seed;
        split.per_class_fraction = std::move(f);
        for (std::size_t i = 0; i < n; ++i) {
          (labeled[i] ? split.labeled_ids : split.unlabeled_ids).push_back(train_ids[i]);
        }
        return split;
      }
      if (v < best_violation) {
        best_violation = v;
        best_fractions = std::move(f);
      }
    }
  }
  std::ostringstream msg;
  msg << "no labeled subset keeps every class within " << percent << " +- " << options.tolerance
      << " percent of its labeled pixels; closest attempt per-class fractions " << format_fractions(best_fractions);
  throw InfeasibleSplitError(msg.str());
}

json split_to_json(const SplitAssignment& split, const ClassScheme& scheme) {
  json fractions = json::object();
  for (std::size_t c = 0; c < split.per_class_fraction.size(); ++c) {
    const auto& f = split.per_class_fraction[c];
    fractions[scheme.name(static_cast<int>(c))] = f ? json(*f) : json(nullptr);
  }
  return {{"m", split.target_percent},
          {"seed", split.seed},
          {"labeled_ids", split.labeled_ids},
          {"unlabeled_ids", split.unlabeled_ids},
          {"per_class_fraction", fractions}};
}

SplitAssignment split_from_json(const json& j, const ClassScheme& scheme) {
  SplitAssignment s;
  s.target_percent = j.at("m").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.labeled_ids = j.at("labeled_ids").get<std::vector<std::string>>();
  s.unlabeled_ids = j.at("unlabeled_ids").get<std::vector<std::string>>();
  s.per_class_fraction.resize(static_cast<std::size_t>(scheme.num_classes()));
  for (const auto& [name, value] : j.at("per_class_fraction").items()) {
    if (!value.is_null()) s.per_class_fraction[static_cast<std::size_t>(scheme.group_index(name))] = value.get<double>();
  }
  return s;
}

void write_split_manifest(const fs::path& file, const SplitAssignment& split, const ClassScheme& scheme) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw DataError("cannot write split manifest " + file.string());
  out << split_to_json(split, scheme).dump(2) << '\n';
}

SplitAssignment read_split_manifest(const fs::path& file, const ClassScheme& scheme) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open split manifest " + file.string());
  return split_from_json(json::parse(in), scheme);
}

// --- normalization -------------------------------------------------------------------------

json BandStats::to_json() const { return {{"mean", mean}, {"std", stddev}}; }

BandStats BandStats::from_json(const json& j) {
  return {j.at("mean").get<std::vector<double>>(), j.at("std").get<std::vector<double>>()};
}

BandStats compute_band_stats(std::span<const MultispectralPatch> patches) {
  if (patches.empty()) throw EmptyDatasetError("band statistics need at least one patch");
  const int bands = patches.front().bands.bands();
  BandStats s{std::vector<double>(static_cast<std::size_t>(bands), 0.0),
              std::vector<double>(static_cast<std::size_t>(bands), 0.0)};
  std::vector<double> sq(static_cast<std::size_t>(bands), 0.0);
  double count = 0.0;
  for (const auto& p : patches) {
    for (int b = 0; b < bands; ++b) {
      for (float v : p.bands.band(b)) {
        s.mean[b] += v;
        sq[b] += static_cast<double>(v) * v;
      }
    }
    count += static_cast<double>(p.bands.plane_size());
  }
  for (int b = 0; b < bands; ++b) {
    s.mean[b] /= count;
    const double var = std::max(0.0, sq[b] / count - s.mean[b] * s.mean[b]);
    s.stddev[b] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void normalize(Image& image, const BandStats& stats) {
  if (static_cast<int>(stats.mean.size()) != image.bands()) {
    throw ShapeMismatchError("band statistics cover " + std::to_string(stats.mean.size()) + " bands, image has " +
                             std::to_string(image.bands()));
  }
  for (int b = 0; b < image.bands(); ++b) {
    const auto mean = static_cast<float>(stats.mean[b]);
    const auto inv = static_cast<float>(1.0 / stats.stddev[b]);
    for (float& v : image.band(b)) v = (v - mean) * inv;
  }
}

// --- dataset layout ------------------------------------------------------------------------

fs::path DatasetLayout::manifest_file(double percent, std::uint64_t seed) const {
  std::ostringstream name;
  name << "split_m" << percent << "_s" << seed << ".json";
  return root_ / "splits" / name.str();
}

std::vector<std::string> DatasetLayout::read_ids(const std::string& split) const {
  std::ifstream in(split_list(split));
  if (!in) throw DataError("missing split list " + split_list(split).string());
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

void DatasetLayout::write_ids(const std::string& split, std::span<const std::string> ids) const {
  fs::create_directories(split_list(split).parent_path());
  std::ofstream out(split_list(split), std::ios::trunc);
  for (const auto& id : ids) out << id << '\n';
}

LabelEncoding DatasetLayout::label_encoding() const {
  const fs::path file = root_ / "label_encoding.json";
  if (!fs::exists(file)) return LabelEncoding::grouped();
  std::ifstream in(file);
  return LabelEncoding::from_json(json::parse(in));
}

NanRegistry DatasetLayout::nan_registry() const {
  const fs::path file = root_ / "nan_registry.json";
  return fs::exists(file) ? NanRegistry::load(file) : NanRegistry::marida_default();
}

std::vector<Sample> load_samples(const DatasetLayout& layout, std::span<const std::string> ids,
                                 const ClassScheme& scheme) {
  const LabelEncoding encoding = layout.label_encoding();
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto loaded = load_patch(layout.patch_file(id), layout.label_file(id), scheme, encoding);
    out.push_back({std::move(loaded.patch), std::move(loaded.labels)});
  }
  return out;
}

LoadedSplit load_split(const DatasetLayout& layout, const std::string& split, const ClassScheme& scheme) {
  const auto all = layout.read_ids(split);
  const auto kept = filter_nan_patches(all, layout.nan_registry());
  LoadedSplit result;
  for (const auto& id : all) {
    if (std::find(kept.begin(), kept.end(), id) == kept.end()) result.excluded.push_back(id);
  }
  const LabelEncoding encoding = layout.label_encoding();
  for (const auto& id : kept) {
    auto loaded = load_patch(layout.patch_file(id), layout.label_file(id), scheme, encoding);
    if (loaded.patch.has_nan()) {
      result.excluded.push_back(id);
      continue;
    }
    result.samples.push_back({std::move(loaded.patch), std::move(loaded.labels)});
  }
  return result;
}

// --- synthetic generator -------------------------------------------------------------------

const std::vector<std::vector<double>>& synthetic_signatures() {
  static const std::vector<std::vector<double>> sig = {
      {0.060, 0.070, 0.072, 0.070, 0.080, 0.090, 0.100, 0.100, 0.090, 0.070, 0.060},  // Marine Debris
      {0.030, 0.040, 0.050, 0.040, 0.070, 0.120, 0.140, 0.150, 0.120, 0.060, 0.040},  // Algae/Organic Material
      {0.120, 0.130, 0.140, 0.150, 0.150, 0.160, 0.160, 0.170, 0.160, 0.140, 0.120},  // Ship
      {0.300, 0.310, 0.320, 0.330, 0.330, 0.340, 0.340, 0.340, 0.330, 0.280, 0.240},  // Cloud
      {0.050, 0.045, 0.035, 0.025, 0.018, 0.014, 0.012, 0.010, 0.009, 0.006, 0.004},  // Water
  };
  return sig;
}

namespace {

constexpr int kWater = 4;

struct Box {
  int x0, y0, x1, y1;
  bool overlaps(const Box& o, int margin) const {
    return !(x1 + margin < o.x0 || o.x1 + margin < x0 || y1 + margin < o.y0 || o.y1 + margin < y0);
  }
};

// Labels exactly round(fraction * |pixels|) of `pixels`, chosen at random.
std::int64_t label_subset(std::vector<std::size_t>& pixels, double fraction, std::int32_t cls, SegmentationMap& labels,
                          RandomSource& rng) {
  const auto n = static_cast<std::int64_t>(std::llround(fraction * static_cast<double>(pixels.size())));
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t j = static_cast<std::size_t>(i) + rng.index(pixels.size() - static_cast<std::size_t>(i));
    std::swap(pixels[static_cast<std::size_t>(i)], pixels[j]);
    labels.labels()[pixels[static_cast<std::size_t>(i)]] = cls;
  }
  return n;
}

json make_patch(const std::string& id, const std::string& split, const SyntheticOptions& opt, RandomSource& rng,
                const DatasetLayout& layout) {
  const int h = opt.height;
  const int w = opt.width;
  std::vector<std::int32_t> truth(static_cast<std::size_t>(h) * w, kWater);
  std::vector<Box> boxes;
  json regions = json::array();
  std::vector<std::vector<std::size_t>> region_pixels;
  std::vector<int> region_class;

  for (int cls = 0; cls < kWater; ++cls) {
    if (!rng.bernoulli(0.75)) continue;
    const int blobs = 1 + static_cast<int>(rng.index(2));
    for (int b = 0; b < blobs; ++b) {
      const int small = std::max(2, std::min(h, w) / 16);
      const int large = std::max(small + 1, std::min(h, w) / (cls == 3 ? 4 : 8));
      for (int attempt = 0; attempt < 30; ++attempt) {
        const int rx = small + static_cast<int>(rng.index(static_cast<std::size_t>(large - small + 1)));
        const int ry = small + static_cast<int>(rng.index(static_cast<std::size_t>(large - small + 1)));
        if (2 * rx + 1 >= w || 2 * ry + 1 >= h) continue;
        const int cx = rx + static_cast<int>(rng.index(static_cast<std::size_t>(w - 2 * rx)));
        const int cy = ry + static_cast<int>(rng.index(static_cast<std::size_t>(h - 2 * ry)));
        const Box box{cx - rx, cy - ry, cx + rx, cy + ry};
        if (std::any_of(boxes.begin(), boxes.end(), [&](const Box& o) { return box.overlaps(o, 1); })) continue;
        boxes.push_back(box);
        std::vector<std::size_t> pixels;
        for (int y = box.y0; y <= box.y1; ++y) {
          for (int x = box.x0; x <= box.x1; ++x) {
            const double dx = static_cast<double>(x - cx) / rx;
            const double dy = static_cast<double>(y - cy) / ry;
            if (dx * dx + dy * dy <= 1.0) {
              const std::size_t p = static_cast<std::size_t>(y) * w + x;
              truth[p] = cls;
              pixels.push_back(p);
            }
          }
        }
        regions.push_back({{"kind", "blob"}, {"class", cls}, {"cx", cx}, {"cy", cy}, {"rx", rx}, {"ry", ry},
                           {"pixels", pixels.size()}});
        region_pixels.push_back(std::move(pixels));
        region_class.push_back(cls);
        break;
      }
    }
  }
  std::vector<std::size_t> background;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (truth[p] == kWater) background.push_back(p);
  }
  regions.push_back({{"kind", "background"}, {"class", kWater}, {"pixels", background.size()}});
  region_pixels.push_back(std::move(background));
  region_class.push_back(kWater);

  SegmentationMap labels(h, w);
  for (std::size_t r = 0; r < region_pixels.size(); ++r) {
    regions[r]["labeled"] = label_subset(region_pixels[r], opt.label_fraction, region_class[r], labels, rng);
  }

  const auto& sig = synthetic_signatures();
  Image bands(kPatchBands, h, w);
  for (int b = 0; b < kPatchBands; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const auto cls = static_cast<std::size_t>(truth[static_cast<std::size_t>(y) * w + x]);
        bands.at(b, y, x) = static_cast<float>(sig[cls][static_cast<std::size_t>(b)] + opt.noise_sigma * rng.normal());
      }
    }
  }
  save_patch(layout.patch_file(id), layout.label_file(id), MultispectralPatch(id, std::move(bands)), labels);
  return {{"id", id}, {"split", split}, {"regions", regions}};
}

}  // namespace

json generate_synthetic_dataset(const fs::path& root, const SyntheticOptions& opt) {
  if (opt.n_patches < 1) throw ConfigError("synthetic dataset needs at least one patch");
  if (opt.height < 8 || opt.width < 8) throw ConfigError("synthetic patches must be at least 8x8");
  if (!(opt.label_fraction > 0.0 && opt.label_fraction <= 1.0)) throw ConfigError("label fraction must lie in (0, 1]");

  const DatasetLayout layout(root);
  fs::create_directories(root / "patches");
  fs::create_directories(root / "labels");
  fs::create_directories(root / "splits");

  Rng rng(opt.seed);
  json patches = json::array();
  auto emit = [&](const std::string& split, int count) {
    std::vector<std::string> ids;
    for (int i = 0; i < count; ++i) {
      std::ostringstream id;
      id << "synth_" << split << "_" << std::setw(4) << std::setfill('0') << i;
      ids.push_back(id.str());
      patches.push_back(make_patch(id.str(), split, opt, rng, layout));
    }
    layout.write_ids(split, ids);
  };
  emit("train", opt.n_patches);
  emit("val", opt.n_val);
  emit("test", opt.n_test);

  std::ofstream(root / "label_encoding.json") << LabelEncoding::grouped().to_json().dump(2) << '\n';
  NanRegistry{}.save(root / "nan_registry.json");

  json log = {{"options",
               {{"n_patches", opt.n_patches},
                {"height", opt.height},
                {"width", opt.width},
                {"label_fraction", opt.label_fraction},
                {"seed", opt.seed},
                {"n_val", opt.n_val},
                {"n_test", opt.n_test},
                {"noise_sigma", opt.noise_sigma}}},
              {"class_names", ClassScheme::marida().class_names()},
              {"signatures", synthetic_signatures()},
              {"patches", patches}};
  std::ofstream(root / "placement_log.json") << log.dump(2) << '\n';
  return log;
}

}  // namespace fixseg
