// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>

#include "fixseg/augmentation.hpp"
#include "fixseg/losses.hpp"
#include "fixseg/marida_data.hpp"
#include "fixseg/metrics.hpp"
#include "fixseg/random.hpp"
#include "fixseg/trainer.hpp"
#include "fixseg/unet.hpp"
#include "oracles.hpp"
#include "reference_tables.hpp"
#include "test_support.hpp"

using namespace fixseg;
namespace ft = fixseg::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int g_failures = 0;

void criterion(int id, const std::string& title, double limit_seconds, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs >= limit_seconds) {
    o.pass = false;
    o.detail << " [runtime " << secs << " s over " << limit_seconds << " s]";
  }
  if (!o.pass) ++g_failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << title << "  (" << std::fixed
            << std::setprecision(2) << secs << " s)  " << o.detail.str() << std::endl;
}

bool bit_equal(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

ScoreMap random_scores(Rng& rng, int c, int h, int w, double scale) {
  ScoreMap s(c, h, w);
  for (double& v : s.data()) v = scale * rng.normal();
  return s;
}

SegmentationMap random_labels(Rng& rng, int h, int w, int classes) {
  SegmentationMap m(h, w);
  for (auto& v : m.labels()) v = static_cast<std::int32_t>(rng.index(static_cast<std::size_t>(classes)));
  return m;
}

// --- 1 -----------------------------------------------------------------------------------------

void iou_parity(Outcome& o) {
  double worst = 0.0;
  for (const auto* t : {&ft::kSemi70, &ft::kFull40, &ft::kSemi40}) {
    const auto ious = iou_per_class(ConfusionMatrix::from_rows(t->rows));
    for (int c = 0; c < 5; ++c) worst = std::max(worst, std::abs(ious[c].value() - t->printed_iou[c]));
  }
  o.require(worst <= 0.005, "per-class IoU within 0.005");
  const std::vector<double> full40{0.72, 0.92, 0.83, 0.97, 0.99};
  const double m = miou(full40);
  o.require(std::abs(m - 0.886) < 1e-12, "mIoU of the fully-supervised 40% row is 0.886");
  o.require(std::abs(round_report(m) - 0.89) < 1e-12, "0.886 rounds to the reported 0.89");
  o.detail << "max |IoU - printed| = " << std::setprecision(4) << worst << ", mIoU = " << std::setprecision(3) << m;
}

// --- 2 -----------------------------------------------------------------------------------------

void variance_parity(Outcome& o) {
  for (const auto& row : ft::kIouDifferences) {
    const double v = round_report(score_difference_variance(row.values), 2);
    o.require(std::abs(v - row.reported_variance) <= 0.005, std::string(row.name));
    o.detail << row.name << "=" << std::fixed << std::setprecision(2) << v << " ";
  }
}

// --- 3 -----------------------------------------------------------------------------------------

void loss_identities(Outcome& o) {
  Rng rng(301);
  LossConfig ce_like;
  ce_like.gamma = 0.0;
  double worst_identity = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = ft::naive_softmax(random_scores(rng, 5, 1, 1, 3.0));
    std::vector<double> pix(5);
    for (int c = 0; c < 5; ++c) pix[c] = p.at(c, std::size_t{0});
    const int t = static_cast<int>(rng.index(5));
    worst_identity = std::max(worst_identity, std::abs(focal_pixel(pix[t], t, ce_like) - cross_entropy_pixel(pix, t)));
  }
  o.require(worst_identity <= 1e-10, "focal(gamma 0, alpha 1) == CE");

  bool dominated = true;
  LossConfig cfg;
  cfg.alphas = {0.25, 0.5, 1.0, 2.0, 4.0};
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 3.0, 5.0}) {
    cfg.gamma = gamma;
    for (int c = 0; c < 5; ++c)
      for (int k = 1; k <= 1000; ++k) {
        const double p = k / 1000.0;
        dominated &= focal_pixel(p, c, cfg) <= balanced_binary_cross_entropy(p, 1, cfg.alphas[c]);
      }
  }
  o.require(dominated, "focal <= balanced CE");

  double worst_grad = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    LossConfig g;
    g.alphas = {0.5, 1.0, 1.5, 0.8, 1.2};
    std::vector<ScoreMap> scores{random_scores(rng, 5, 4, 4, 1.5)};
    std::vector<SegmentationMap> labels{SegmentationMap(4, 4)};
    for (auto& v : labels[0].labels()) {
      const auto k = static_cast<std::int32_t>(rng.index(6));
      v = k < 5 ? k : kUnlabeled;
    }
    labels[0].labels()[0] = 2;
    const auto res = supervised_loss_from_scores(scores, labels, g);
    std::vector<double> analytic, numeric;
    const double h = 1e-4;
    for (std::size_t k = 0; k < scores[0].data().size(); ++k) {
      auto plus = scores, minus = scores;
      plus[0].data()[k] += h;
      minus[0].data()[k] -= h;
      const double fp = supervised_loss(std::vector<PredictionMap>{ft::naive_softmax(plus[0])}, labels, g);
      const double fm = supervised_loss(std::vector<PredictionMap>{ft::naive_softmax(minus[0])}, labels, g);
      numeric.push_back((fp - fm) / (2 * h));
      analytic.push_back(res.score_grad[0].data()[k]);
    }
    worst_grad = std::max(worst_grad, ft::relative_error(analytic, numeric));
  }
  o.require(worst_grad < 1e-4, "gradient relative error < 1e-4");
  o.detail << std::scientific << std::setprecision(2) << "max |FL-CE| = " << worst_identity
           << ", max gradient rel. error = " << worst_grad;
}

// --- 4 -----------------------------------------------------------------------------------------

void unsupervised_masking(Outcome& o) {
  Rng rng(401);
  const int h = 16, w = 16;
  bool all_at_zero = true, none_above_one = true, monotone = true, identical = true;
  std::size_t perturbed = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto plan = sample_strong_plan(rng);
    std::vector<PredictionMap> weak, strong;
    std::vector<ValidityMask> validity;
    std::vector<CutoutSpec> cutouts;
    for (int i = 0; i < 2; ++i) {
      weak.push_back(ft::naive_softmax(random_scores(rng, 5, h, w, 3.0)));
      strong.push_back(ft::naive_softmax(random_scores(rng, 5, h, w, 1.0)));
      validity.push_back(apply_plan(plan, Image(1, h, w, 1.0f), ValidityMask(h, w)).second);
      cutouts.push_back(sample_cutout(rng, h, w));
    }
    // eligible = valid in the strong view and outside the cutout
    std::size_t n_eligible = 0;
    for (int i = 0; i < 2; ++i)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) n_eligible += validity[i].at(y, x) && !cutouts[i].covers(x, y);
    LossConfig cfg;
    cfg.threshold = 0.0;
    all_at_zero &= unsupervised_loss(weak, strong, plan, validity, cutouts, cfg).retained_count == n_eligible;
    cfg.threshold = 1.0 + 1e-9;
    const auto none = unsupervised_loss(weak, strong, plan, validity, cutouts, cfg);
    none_above_one &= none.retained_count == 0 && none.value == 0.0;
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double tau : {0.0, 0.25, 0.5, 0.75, 0.9, 0.999}) {
      cfg.threshold = tau;
      const auto r = unsupervised_loss(weak, strong, plan, validity, cutouts, cfg);
      monotone &= r.retained_count <= prev;
      prev = r.retained_count;
    }

    cfg.threshold = 0.75;
    const auto base = unsupervised_loss(weak, strong, plan, validity, cutouts, cfg);
    // source pixel of every strong-view pixel, by transporting an index map
    SegmentationMap index_map(h, w);
    for (int k = 0; k < h * w; ++k) index_map.labels()[static_cast<std::size_t>(k)] = k;
    const auto source = ft::nearest_affine_transport(plan.geometric_only().steps, index_map);
    auto changed = strong;
    for (int i = 0; i < 2; ++i)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool excluded = !validity[i].at(y, x) || cutouts[i].covers(x, y);
          const int src = source.at(y, x);
          if (!excluded && src >= 0) {
            // confident nowhere in the source neighbourhood, so rounding cannot matter
            double conf = 0.0;
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int sy = std::clamp(src / w + dy, 0, h - 1), sx = std::clamp(src % w + dx, 0, w - 1);
                for (int c = 0; c < 5; ++c) conf = std::max(conf, weak[i].at(c, sy, sx));
              }
            excluded = conf < cfg.threshold;
          }
          if (!excluded) continue;
          double s = 0.0;
          for (int c = 0; c < 5; ++c) s += (changed[i].at(c, y, x) = rng.uniform(0.01, 1.0));
          for (int c = 0; c < 5; ++c) changed[i].at(c, y, x) /= s;
          ++perturbed;
        }
    const auto after = unsupervised_loss(weak, changed, plan, validity, cutouts, cfg);
    identical &= bit_equal(after.value, base.value) && after.retained_count == base.retained_count;
  }
  o.require(all_at_zero, "tau 0 keeps every eligible pixel");
  o.require(none_above_one, "tau > 1 keeps nothing");
  o.require(monotone, "retained count non-increasing in tau");
  o.require(identical && perturbed > 0, "excluded pixels do not affect the loss");
  o.detail << "50 fixtures, " << perturbed << " excluded pixels perturbed";
}

// --- 5 -----------------------------------------------------------------------------------------

void augmentation_coherence(Outcome& o) {
  Rng rng(501);
  int exact = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int h = 8 + static_cast<int>(rng.index(24)), w = 8 + static_cast<int>(rng.index(24));
    const auto plan = sample_weak_plan(rng);
    const auto labels = random_labels(rng, h, w, 5);
    Image img(1, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) img.at(0, y, x) = static_cast<float>(labels.at(y, x));
    auto [im, im_mask] = apply_plan(plan, img, ValidityMask(h, w));
    auto [lab, lab_mask] = apply_geometric_only(plan, labels, ValidityMask(h, w));
    bool same = im_mask == lab_mask && im.height() == lab.height() && im.width() == lab.width();
    for (int y = 0; same && y < lab.height(); ++y)
      for (int x = 0; x < lab.width(); ++x) same &= im.at(0, y, x) == static_cast<float>(lab.at(y, x));
    exact += same;
  }
  o.require(exact == 1000, "flip/right-angle plans agree pixel-exactly");

  std::size_t valid = 0, agree = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const auto plan = sample_strong_plan(rng);
    const auto labels = random_labels(rng, 64, 64, 5);
    auto [lab, mask] = apply_geometric_only(plan, labels, ValidityMask(64, 64));
    const auto expect = ft::nearest_affine_transport(plan.geometric_only().steps, labels);
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        if (!mask.at(y, x)) continue;
        ++valid;
        agree += lab.at(y, x) == expect.at(y, x);
      }
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(valid);
  o.require(rate >= 0.999, "affine transport agrees with the oracle on >= 99.9% of valid pixels");

  int color_second = 0;
  for (int i = 0; i < 10000; ++i) color_second += sample_strong_plan(rng).steps.at(1).tag() == AugTag::Color;
  o.require(color_second == 0, "no color step in second position");
  o.detail << exact << "/1000 exact, oracle agreement " << std::setprecision(5) << 100.0 * rate << " %, "
           << color_second << " color-second plans in 10^4";
}

// --- 6 -----------------------------------------------------------------------------------------

void model_budget(Outcome& o) {
  const auto cfg = UNetConfig::reference();
  UNet net(cfg);
  Rng rng(601);
  Image img(11, 256, 256);
  for (float& v : img.data()) v = static_cast<float>(rng.normal());
  const auto out = net.forward(std::vector<Image>{img});
  o.require(out.size() == 1 && out[0].classes() == 5 && out[0].height() == 256 && out[0].width() == 256,
            "[11,256,256] -> [5,256,256]");
  const auto r = budget_report(cfg);
  const double rel = (static_cast<double>(r.param_count) - 841099.0) / 841099.0;
  o.require(std::abs(rel) <= 0.02, "param count within 2% of 841,099");
  o.require(r.param_count == 839013, "golden param count 839,013");
  o.require(net.parameter_count() == r.param_count, "closed form equals enumeration");

  ft::TempDir tmp("acceptance_ckpt");
  net.save_checkpoint(tmp.path() / "m.ckpt", 1, 0.5);
  const auto bytes = static_cast<double>(fs::file_size(tmp.path() / "m.ckpt"));
  const double ratio = bytes / (4.0 * static_cast<double>(r.param_count));
  o.require(std::abs(ratio - 1.0) < 0.01, "checkpoint ~ 4 bytes per parameter");
  o.detail << "params " << r.param_count << " (" << std::showpos << std::fixed << std::setprecision(2) << 100 * rel
           << std::noshowpos << " %), " << std::setprecision(3) << r.macs / 1e9 << " GMACs = " << r.flops / 1e9
           << " GFLOPs (target 2.07), checkpoint " << bytes / 1e6 << " MB (3.25 MB quoted)";
}

// --- 7 -----------------------------------------------------------------------------------------

void split_protocol(Outcome& o) {
  ft::TempDir tmp("acceptance_split");
  SyntheticOptions opt;
  opt.n_patches = 48;
  opt.seed = 701;
  generate_synthetic_dataset(tmp.path(), opt);
  const DatasetLayout layout(tmp.path());
  const auto& scheme = ClassScheme::marida();
  const auto loaded = load_split(layout, "train", scheme);
  std::vector<std::string> ids;
  std::vector<SegmentationMap> maps;
  for (const auto& s : loaded.samples) {
    ids.push_back(s.patch.patch_id);
    maps.push_back(s.labels);
  }
  for (double m : {10.0, 30.0, 60.0}) {
    const auto split = two_training_sets_split(ids, maps, scheme.num_classes(), m, 11);
    // recount directly from the label maps
    std::vector<double> part(5, 0.0), total(5, 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool labeled = std::find(split.labeled_ids.begin(), split.labeled_ids.end(), ids[i]) != split.labeled_ids.end();
      for (auto v : maps[i].labels())
        if (v >= 0) {
          total[v] += 1;
          if (labeled) part[v] += 1;
        }
    }
    o.detail << std::defaultfloat << std::setprecision(6) << "m=" << m << ":";
    for (int c = 0; c < 5; ++c) {
      if (total[c] == 0) continue;
      const double f = 100.0 * part[c] / total[c];
      o.require(f >= m - 5 && f <= m + 5, "class " + std::to_string(c) + " at m=" + std::to_string(m));
      o.detail << " " << std::fixed << std::setprecision(1) << f;
    }
    o.detail << "  ";
    write_split_manifest(tmp.path() / "a.json", split, scheme);
    write_split_manifest(tmp.path() / "b.json", two_training_sets_split(ids, maps, scheme.num_classes(), m, 11), scheme);
    std::ifstream a(tmp.path() / "a.json"), b(tmp.path() / "b.json");
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    o.require(sa == sb, "same seed gives the same manifest bytes");
  }
}

// --- 8 -----------------------------------------------------------------------------------------

TrainData synthetic_train_data(const fs::path& root, int n_patches, std::size_t n_labeled, std::uint64_t seed) {
  SyntheticOptions opt;
  opt.n_patches = n_patches;
  opt.seed = seed;
  opt.n_val = 2;
  opt.n_test = 2;
  generate_synthetic_dataset(root, opt);
  const DatasetLayout layout(root);
  const auto ids = layout.read_ids("train");
  SplitAssignment split;
  split.labeled_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_labeled));
  split.unlabeled_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_labeled), ids.end());
  return prepare_train_data(layout, split, ClassScheme::marida());
}

void end_to_end(Outcome& o) {
  const auto names = ClassScheme::marida().class_names();
  ft::TempDir tmp("acceptance_e2e");

  // fully supervised: 4 fully labeled 64x64 patches, scored on themselves
  auto fs_data = synthetic_train_data(tmp.path() / "fs", 4, 4, 801);
  fs_data.validation = fs_data.labeled;
  TrainConfig fs_cfg;
  fs_cfg.mode = TrainMode::FullySupervised;
  fs_cfg.epochs = 300;
  fs_cfg.batch_size = 2;
  fs_cfg.lr = 1e-3;
  fs_cfg.seed = 1;
  UNetConfig net_cfg = UNetConfig::reference();
  net_cfg.init_seed = 1;
  UNet fs_model(net_cfg);
  const auto fs_report = train(fs_cfg, fs_data, fs_model);
  o.require(fs_report.best_val_miou >= 0.95, "supervised train mIoU >= 0.95 within 300 epochs");
  int first_hit = 0;
  for (const auto& e : fs_report.epochs)
    if (first_hit == 0 && e.val_miou >= 0.95) first_hit = e.epoch;

  // semi-supervised: 2 labeled + 6 unlabeled, tau 0.9, lambda 1, mu 3
  auto ssl_data = synthetic_train_data(tmp.path() / "ssl", 8, 2, 802);
  TrainConfig ssl_cfg;
  ssl_cfg.mode = TrainMode::SemiSupervised;
  ssl_cfg.epochs = 160;
  ssl_cfg.batch_size = 2;
  ssl_cfg.mu = 3;
  ssl_cfg.threshold = 0.9;
  ssl_cfg.lambda_coeff = 1.0;
  ssl_cfg.lr = 1e-3;
  ssl_cfg.seed = 2;
  net_cfg.init_seed = 2;
  UNet ssl_a(net_cfg), ssl_b(net_cfg);
  const auto ra = train(ssl_cfg, ssl_data, ssl_a);
  const auto rb = train(ssl_cfg, ssl_data, ssl_b);

  const std::size_t n = ra.epochs.size();
  const std::size_t q = n / 4;
  double first = 0.0, last = 0.0;
  std::size_t retained_last = 0;
  for (std::size_t i = 0; i < q; ++i) first += ra.epochs[i].total_loss / static_cast<double>(q);
  for (std::size_t i = n - q; i < n; ++i) {
    last += ra.epochs[i].total_loss / static_cast<double>(q);
    retained_last += static_cast<std::size_t>(ra.epochs[i].retained_mean);
  }
  o.require(n == 160, "semi-supervised run completes");
  o.require(last < first, "total loss decreases (first vs last quarter)");
  o.require(retained_last > 0, "pseudo-labels retained in the final quarter");
  o.require(ra.to_json(names).dump() == rb.to_json(names).dump() && ssl_a.flat_weights() == ssl_b.flat_weights(),
            "same seed reproduces the report");
  o.detail << "FS best train mIoU " << std::fixed << std::setprecision(3) << fs_report.best_val_miou
           << " (>= 0.95 from epoch " << first_hit << "); SSL total loss " << std::setprecision(4) << first << " -> "
           << last << ", retained in final quarter " << retained_last;
}

// --- 9 -----------------------------------------------------------------------------------------

void degenerate_equivalence(Outcome& o) {
  ft::TempDir tmp("acceptance_degenerate");
  SyntheticOptions opt;
  opt.n_patches = 4;
  opt.height = opt.width = 32;
  opt.seed = 901;
  opt.n_val = 2;
  generate_synthetic_dataset(tmp.path(), opt);
  const DatasetLayout layout(tmp.path());
  SplitAssignment split;
  split.labeled_ids = layout.read_ids("train");
  const auto data = prepare_train_data(layout, split, ClassScheme::marida());

  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.batch_size = 2;
  cfg.lr = 1e-3;
  cfg.seed = 9;
  cfg.lambda_coeff = 0.0;
  UNetConfig net_cfg = UNetConfig::reference();
  net_cfg.init_seed = 9;

  cfg.mode = TrainMode::FullySupervised;
  UNet a(net_cfg);
  const auto fs_report = train(cfg, data, a);
  cfg.mode = TrainMode::SemiSupervised;
  UNet b(net_cfg);
  const auto ssl_report = train(cfg, data, b);

  bool same = fs_report.epochs.size() == ssl_report.epochs.size();
  for (std::size_t i = 0; same && i < fs_report.epochs.size(); ++i) {
    const auto& x = fs_report.epochs[i];
    const auto& y = ssl_report.epochs[i];
    same &= bit_equal(x.total_loss, y.total_loss) && bit_equal(x.sup_loss, y.sup_loss) &&
            bit_equal(x.val_miou, y.val_miou) && bit_equal(x.val_loss, y.val_loss);
  }
  o.require(same, "per-epoch losses identical");
  o.require(a.flat_weights() == b.flat_weights(), "final weights identical");
  o.detail << fs_report.epochs.size() << " epochs compared bit-for-bit";
}

}  // namespace

int main() {
  criterion(1, "IoU oracle parity", 1.0, iou_parity);
  criterion(2, "variance analysis parity", 1.0, variance_parity);
  criterion(3, "loss-family identities", 30.0, loss_identities);
  criterion(4, "unsupervised-loss masking", 60.0, unsupervised_masking);
  criterion(5, "augmentation coherence", 120.0, augmentation_coherence);
  criterion(6, "model budget and shape", 30.0, model_budget);
  criterion(7, "split protocol", 30.0, split_protocol);
  criterion(8, "end-to-end smoke", 900.0, end_to_end);
  criterion(9, "degenerate equivalence", 600.0, degenerate_equivalence);
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
