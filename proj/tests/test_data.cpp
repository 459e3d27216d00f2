#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "fixseg/marida_data.hpp"
#include "fixseg/npy.hpp"
#include "test_support.hpp"

using namespace fixseg;
using fixseg::testing::TempDir;

namespace {

Image ramp_image(int bands, int h, int w) {
  Image img(bands, h, w);
  for (int b = 0; b < bands; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(b, y, x) = 0.01f * b + 0.001f * (y * w + x);
  return img;
}

SegmentationMap filled(int h, int w, std::vector<std::int32_t> values) { return SegmentationMap(h, w, std::move(values)); }

}  // namespace

TEST_CASE("npy float and int arrays round-trip") {
  TempDir tmp("npy");
  npy::Array<float> f{{2, 3}, {1.5f, -2.f, 0.f, 3.25f, 7.f, -0.5f}};
  npy::write(tmp.path() / "f.npy", f.shape, f.values);
  const auto back = npy::read_float(tmp.path() / "f.npy");
  CHECK(back.shape == f.shape);
  CHECK(back.values == f.values);

  npy::Array<std::int32_t> i{{4}, {-1, 0, 4, 15}};
  npy::write(tmp.path() / "i.npy", i.shape, i.values);
  const auto ib = npy::read_int(tmp.path() / "i.npy");
  CHECK(ib.values == i.values);
}

TEST_CASE("npy reader rejects garbage") {
  TempDir tmp("npybad");
  std::ofstream(tmp.path() / "bad.npy") << "not an npy file";
  CHECK_THROWS_AS(npy::read_float(tmp.path() / "bad.npy"), DataError);
}

TEST_CASE("patch needs exactly eleven bands") {
  CHECK_NOTHROW(MultispectralPatch("p", Image(11, 4, 4)));
  CHECK_THROWS_AS(MultispectralPatch("p", Image(10, 4, 4)), MissingBandError);
  CHECK_THROWS_AS(MultispectralPatch("p", Image(12, 4, 4)), MissingBandError);
}

TEST_CASE("fifteen source classes collapse onto five") {
  const auto& s = ClassScheme::marida();
  REQUIRE(s.num_classes() == 5);
  CHECK(s.grouping().size() == 15);
  CHECK(s.group_index("Marine Debris") == 0);
  for (const char* n : {"Dense Sargassum", "Sparse Sargassum", "Natural Organic Material"}) CHECK(s.group_index(n) == 1);
  CHECK(s.group_index("Ship") == 2);
  CHECK(s.group_index("Clouds") == 3);
  for (const char* n : {"Marine Water", "Sediment-Laden Water", "Foam", "Turbid Water", "Shallow Water", "Waves",
                        "Cloud Shadows", "Wakes", "Mixed Water"}) {
    CHECK(s.group_index(n) == 4);
  }
  CHECK_THROWS_AS(s.group_index("Lava"), UnknownClassError);
}

TEST_CASE("regrouping original raster values") {
  const auto enc = LabelEncoding::marida_original();
  // 0 unlabeled, 1 debris, 3 sparse sargassum, 5 ship, 6 clouds, 13 cloud shadows
  const auto raw = filled(2, 3, {0, 1, 3, 5, 6, 13});
  const auto g = regroup(raw, ClassScheme::marida(), enc);
  CHECK(std::vector<std::int32_t>(g.labels().begin(), g.labels().end()) ==
        std::vector<std::int32_t>{kUnlabeled, 0, 1, 2, 3, 4});
  // already grouped input is left as is
  const auto again = regroup(g, ClassScheme::marida(), LabelEncoding::grouped());
  CHECK(again == g);
  CHECK_THROWS_AS(regroup(filled(1, 1, {99}), ClassScheme::marida(), enc), UnknownClassError);
}

TEST_CASE("label encoding JSON round-trip") {
  const auto enc = LabelEncoding::marida_original();
  const auto back = LabelEncoding::from_json(enc.to_json());
  CHECK(back.names == enc.names);
  CHECK(back.unlabeled_values == enc.unlabeled_values);
}

TEST_CASE("patch files round-trip and validate") {
  TempDir tmp("patch");
  const MultispectralPatch p("a", ramp_image(11, 8, 8));
  SegmentationMap l(8, 8, 4);
  l.at(0, 0) = kUnlabeled;
  save_patch(tmp.path() / "a.npy", tmp.path() / "a_l.npy", p, l);
  const auto back = load_patch(tmp.path() / "a.npy", tmp.path() / "a_l.npy", ClassScheme::marida());
  CHECK(back.patch.bands == p.bands);
  CHECK(back.labels == l);

  npy::write(tmp.path() / "b.npy", {10, 2, 2}, std::vector<float>(40, 0.f));
  npy::write(tmp.path() / "b_l.npy", {2, 2}, std::vector<std::int32_t>{0, 0, 0, 0});
  CHECK_THROWS_AS(load_patch(tmp.path() / "b.npy", tmp.path() / "b_l.npy", ClassScheme::marida()), MissingBandError);

  npy::write(tmp.path() / "c_l.npy", {7, 8}, std::vector<std::int32_t>(56, 0));
  CHECK_THROWS_AS(load_patch(tmp.path() / "a.npy", tmp.path() / "c_l.npy", ClassScheme::marida()), ShapeMismatchError);
}

TEST_CASE("default NaN registry lists the seven known patches") {
  const auto r = NanRegistry::marida_default();
  CHECK(r.ids("train") == std::vector<std::string>{"21-2-17_16PCC_0"});
  const auto val = r.ids("val");
  CHECK(std::set<std::string>(val.begin(), val.end()) ==
        std::set<std::string>{"18-9-20_16PCC_47", "18-9-20_16PCC_48", "18-9-20_16PCC_50"});
  const auto test = r.ids("test");
  CHECK(std::set<std::string>(test.begin(), test.end()) ==
        std::set<std::string>{"30-8-18_16PCC_0", "30-8-18_16PCC_1", "30-8-18_16PCC_2"});
  CHECK(r.flagged("18-9-20_16PCC_48"));
  CHECK_FALSE(r.flagged("18-9-20_16PCC_49"));

  const std::vector<std::string> ids{"x", "21-2-17_16PCC_0", "y"};
  CHECK(filter_nan_patches(ids, r) == std::vector<std::string>{"x", "y"});
}

TEST_CASE("NaN registry save/load") {
  TempDir tmp("nanreg");
  NanRegistry r;
  r.flag("train", "p1");
  r.flag("test", "p2");
  r.save(tmp.path() / "reg.json");
  const auto back = NanRegistry::load(tmp.path() / "reg.json");
  CHECK(back.flagged("p1"));
  CHECK(back.flagged("p2"));
  CHECK(back.ids("train") == std::vector<std::string>{"p1"});
}

TEST_CASE("class statistics reproduce the dataset fractions") {
  // pixel counts of the five grouped classes over the labeled training set
  const std::vector<std::int64_t> counts{3399, 6018, 5803, 117400, 704757};
  const std::vector<double> expected{0.41, 0.72, 0.69, 14.02, 84.16};
  std::vector<std::int32_t> flat;
  for (std::size_t c = 0; c < counts.size(); ++c) flat.insert(flat.end(), counts[c], static_cast<std::int32_t>(c));
  flat.insert(flat.end(), 1000, kUnlabeled);
  const std::vector<SegmentationMap> maps{SegmentationMap(1, static_cast<int>(flat.size()), flat)};
  const auto stats = class_pixel_stats(maps, ClassScheme::marida());
  CHECK(stats.total == 837377);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    CHECK(stats.counts[c] == counts[c]);
    CHECK(std::abs(stats.fractions[c] - expected[c]) <= 0.005);
  }
  const std::vector<SegmentationMap> empty{SegmentationMap(2, 2)};
  CHECK_THROWS_AS(class_pixel_stats(empty, ClassScheme::marida()), EmptyDatasetError);
}

TEST_CASE("split keeps every class inside the band by recount") {
  // 20 images, each with a few pixels of every class in varying amounts
  Rng rng(11);
  std::vector<std::string> ids;
  std::vector<SegmentationMap> maps;
  for (int i = 0; i < 20; ++i) {
    ids.push_back("img" + std::to_string(i));
    std::vector<std::int32_t> v;
    for (int c = 0; c < 5; ++c) v.insert(v.end(), 20 + rng.index(20), c);
    v.resize(256, kUnlabeled);
    maps.emplace_back(16, 16, v);
  }
  for (double m : {10.0, 30.0, 60.0}) {
    const auto split = two_training_sets_split(ids, maps, 5, m, 3);
    // independent recount
    std::vector<double> held(5, 0), total(5, 0);
    std::set<std::string> labeled(split.labeled_ids.begin(), split.labeled_ids.end());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (auto v : maps[i].labels()) {
        if (v < 0) continue;
        total[v] += 1;
        if (labeled.count(ids[i])) held[v] += 1;
      }
    }
    for (int c = 0; c < 5; ++c) {
      const double f = 100.0 * held[c] / total[c];
      CHECK(f >= m - 5.0);
      CHECK(f <= m + 5.0);
      CHECK(*split.per_class_fraction[c] == doctest::Approx(f));
    }
    CHECK(split.labeled_ids.size() + split.unlabeled_ids.size() == ids.size());
    const auto again = two_training_sets_split(ids, maps, 5, m, 3);
    CHECK(again.labeled_ids == split.labeled_ids);
  }
}

TEST_CASE("split reports infeasibility") {
  // class 0 lives in a single image: any subset holds 0 or 100 percent of it
  std::vector<std::string> ids;
  std::vector<SegmentationMap> maps;
  for (int i = 0; i < 6; ++i) {
    ids.push_back("i" + std::to_string(i));
    maps.emplace_back(1, 2, std::vector<std::int32_t>{i == 0 ? 0 : 1, 1});
  }
  CHECK_THROWS_AS(two_training_sets_split(ids, maps, 2, 30, 1, {100, 5}), InfeasibleSplitError);
}

TEST_CASE("split manifest round-trip") {
  TempDir tmp("manifest");
  SplitAssignment s;
  s.labeled_ids = {"a", "b"};
  s.unlabeled_ids = {"c"};
  s.target_percent = 30;
  s.seed = 9;
  s.per_class_fraction = {31.0, std::nullopt, 29.5, 30.0, 30.2};
  write_split_manifest(tmp.path() / "m.json", s, ClassScheme::marida());
  const auto back = read_split_manifest(tmp.path() / "m.json", ClassScheme::marida());
  CHECK(back.labeled_ids == s.labeled_ids);
  CHECK(back.unlabeled_ids == s.unlabeled_ids);
  CHECK(back.seed == 9);
  CHECK(back.per_class_fraction == s.per_class_fraction);
}

TEST_CASE("band statistics and normalization") {
  std::vector<MultispectralPatch> patches;
  for (int k = 0; k < 3; ++k) {
    Image img(11, 2, 2);
    for (int b = 0; b < 11; ++b)
      for (int p = 0; p < 4; ++p) img.band(b)[p] = static_cast<float>(b + k * 4 + p);
    patches.emplace_back("p" + std::to_string(k), img);
  }
  const auto st = compute_band_stats(patches);
  // band b holds b + {0..11}: mean b + 5.5, population std sqrt((12^2 - 1) / 12)
  for (int b = 0; b < 11; ++b) {
    CHECK(st.mean[b] == doctest::Approx(b + 5.5));
    CHECK(st.stddev[b] == doctest::Approx(std::sqrt(143.0 / 12.0)));
  }
  Image img = patches[0].bands;
  normalize(img, st);
  CHECK(img.at(0, 0, 0) == doctest::Approx((0 - 5.5) / std::sqrt(143.0 / 12.0)));
}

TEST_CASE("synthetic dataset matches its placement log and loads cleanly") {
  TempDir tmp("synth");
  SyntheticOptions o;
  o.n_patches = 6;
  o.height = o.width = 32;
  o.label_fraction = 0.5;
  o.seed = 4;
  o.n_val = 2;
  const auto log = generate_synthetic_dataset(tmp.path(), o);
  const DatasetLayout layout(tmp.path());
  CHECK(layout.read_ids("train").size() == 6);
  CHECK(layout.read_ids("val").size() == 2);
  const auto loaded = load_split(layout, "train", ClassScheme::marida());
  REQUIRE(loaded.samples.size() == 6);
  CHECK(loaded.excluded.empty());
  for (std::size_t i = 0; i < loaded.samples.size(); ++i) {
    const auto& entry = log.at("patches").at(i);
    std::int64_t labeled = 0;
    for (const auto& r : entry.at("regions")) {
      const auto pixels = r.at("pixels").get<std::int64_t>();
      const auto lab = r.at("labeled").get<std::int64_t>();
      CHECK(lab == static_cast<std::int64_t>(std::llround(0.5 * static_cast<double>(pixels))));
      labeled += lab;
    }
    CHECK(static_cast<std::int64_t>(loaded.samples[i].labels.labeled_count()) == labeled);
  }
}

TEST_CASE("NaN-bearing and registry-flagged patches are excluded at load") {
  TempDir tmp("nanload");
  SyntheticOptions o;
  o.n_patches = 3;
  o.height = o.width = 16;
  generate_synthetic_dataset(tmp.path(), o);
  const DatasetLayout layout(tmp.path());
  const auto ids = layout.read_ids("train");
  // poison one patch with a NaN
  auto arr = npy::read_float(layout.patch_file(ids[1]));
  arr.values[5] = std::numeric_limits<float>::quiet_NaN();
  npy::write(layout.patch_file(ids[1]), arr.shape, arr.values);
  // flag another one
  NanRegistry reg;
  reg.flag("train", ids[2]);
  reg.save(tmp.path() / "nan_registry.json");
  const auto loaded = load_split(layout, "train", ClassScheme::marida());
  REQUIRE(loaded.samples.size() == 1);
  CHECK(loaded.samples[0].patch.patch_id == ids[0]);
  CHECK(loaded.excluded.size() == 2);
}
