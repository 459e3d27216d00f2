#include "fixseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "fixseg/augmentation.hpp"
#include "fixseg/losses.hpp"
#include "fixseg/random.hpp"

namespace fixseg {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Stream ids for Rng::derive. Each consumer owns its stream so that enabling the unlabeled branch
// never shifts the draws of the labeled branch.
enum Stream : std::uint64_t {
  kLabeledShuffle = 1,
  kLabeledWeak = 2,
  kUnlabeledOrder = 3,
  kUnlabeledWeak = 4,
  kStrongPlan = 5,
  kCutout = 6,
};

// Endless walk over [0, n) that reshuffles at the start of every pass.
class Cycler {
 public:
  Cycler(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {}
  std::size_t next() {
    if (pos_ == 0 || pos_ == order_.size()) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
      rng_.shuffle(std::span<std::size_t>(order_));
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

struct MetricFiles {
  std::ofstream steps;
  std::ofstream epochs;
};

std::optional<MetricFiles> open_metric_files(const TrainerOptions& options) {
  if (!options.run_dir) return std::nullopt;
  std::filesystem::create_directories(*options.run_dir);
  MetricFiles f{std::ofstream(*options.run_dir / "metrics_steps.csv"), std::ofstream(*options.run_dir / "metrics_epochs.csv")};
  if (!f.steps || !f.epochs) throw DataError("cannot write metric logs in " + options.run_dir->string());
  f.steps << "step,epoch,sup_loss,unsup_loss,total_loss,retained_count,skipped\n";
  f.epochs << "epoch,steps,skipped_steps,sup_loss,unsup_loss,total_loss,retained_mean,val_miou,val_loss\n";
  f.steps.precision(10);
  f.epochs.precision(10);
  return f;
}

std::vector<PredictionMap> softmax_all(const std::vector<ScoreMap>& scores) {
  std::vector<PredictionMap> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(softmax(s));
  return out;
}

TrainReport run(const TrainConfig& cfg, const TrainData& data, UNet& model, const TrainerOptions& options,
                bool semi) {
  const int num_classes = model.config().num_classes;
  cfg.validate(num_classes);
  if (data.validation.empty()) throw EmptyDatasetError("validation set is empty");
  const LossConfig loss = cfg.loss();

  TrainReport report;
  report.mode = cfg.mode;
  if (cfg.epochs == 0) return report;
  if (static_cast<int>(data.labeled.size()) < cfg.batch_size) {
    throw ConfigError("labeled subset holds " + std::to_string(data.labeled.size()) +
                      " patches, fewer than one batch of " + std::to_string(cfg.batch_size));
  }

  model.enable_training(AdamOptions{cfg.lr, 0.9, 0.999, 1e-8});
  auto files = open_metric_files(options);

  Rng labeled_shuffle = Rng::derive(cfg.seed, kLabeledShuffle);
  Rng labeled_weak = Rng::derive(cfg.seed, kLabeledWeak);
  Rng unlabeled_weak = Rng::derive(cfg.seed, kUnlabeledWeak);
  Rng strong_rng = Rng::derive(cfg.seed, kStrongPlan);
  Rng cutout_rng = Rng::derive(cfg.seed, kCutout);
  Cycler unlabeled_order(data.unlabeled.size(), Rng::derive(cfg.seed, kUnlabeledOrder));
  const bool use_unlabeled = semi && !data.unlabeled.empty();

  const std::size_t steps_per_epoch = data.labeled.size() / static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(data.labeled.size());
  std::vector<double> val_history;
  int global_step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    labeled_shuffle.shuffle(std::span<std::size_t>(order));

    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      StepRecord step;
      step.epoch = epoch;
      step.step = ++global_step;

      // labeled batch, weakly augmented
      std::vector<Image> x_labeled;
      std::vector<SegmentationMap> y_labeled;
      std::size_t labeled_pixels = 0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& sample = data.labeled[order[s * cfg.batch_size + b]];
        const auto plan = sample_weak_plan(labeled_weak);
        const ValidityMask full(sample.patch.height(), sample.patch.width(), true);
        x_labeled.push_back(apply_plan(plan, sample.patch.bands, full).first);
        y_labeled.push_back(apply_geometric_only(plan, sample.labels, full).first);
        labeled_pixels += y_labeled.back().labeled_count();
      }

      // unlabeled batch: weak view for pseudo-labels, strong view + cutout for the prediction
      std::vector<Image> x_strong;
      std::vector<ValidityMask> strong_masks;
      std::vector<CutoutSpec> cutouts;
      std::vector<PredictionMap> weak_probs;
      AugmentationPlan strong_plan;
      if (use_unlabeled) {
        std::vector<Image> x_weak;
        const std::size_t n_unlabeled = static_cast<std::size_t>(cfg.mu) * cfg.batch_size;
        for (std::size_t u = 0; u < n_unlabeled; ++u) {
          const Image& img = data.unlabeled[unlabeled_order.next()];
          const auto plan = sample_weak_plan(unlabeled_weak);
          x_weak.push_back(apply_plan(plan, img, ValidityMask(img.height(), img.width(), true)).first);
        }
        strong_plan = sample_strong_plan(strong_rng);
        for (const auto& w : x_weak) {
          auto [img, mask] = apply_plan(strong_plan, w, ValidityMask(w.height(), w.width(), true));
          cutouts.push_back(sample_cutout(cutout_rng, img.height(), img.width()));
          apply_cutout(cutouts.back(), img, mask);
          x_strong.push_back(std::move(img));
          strong_masks.push_back(std::move(mask));
        }
        if (labeled_pixels > 0) weak_probs = softmax_all(model.forward(x_weak));
      }

      if (labeled_pixels == 0) {
        step.skipped = true;
        ++rec.skipped_steps;
        if (files) {
          files->steps << step.step << ',' << epoch << ",,,,0,1\n";
        }
        report.steps.push_back(step);
        continue;
      }

      std::vector<std::vector<Image>> groups{std::move(x_labeled)};
      if (use_unlabeled) groups.push_back(std::move(x_strong));
      model.optimize(groups, [&](const std::vector<std::vector<ScoreMap>>& scores) {
        std::vector<std::vector<ScoreMap>> grads;
        const auto sup = supervised_loss_from_scores(scores[0], y_labeled, loss);
        step.sup_loss = sup.value;
        grads.push_back(sup.score_grad);
        if (use_unlabeled) {
          auto unsup = unsupervised_loss_from_scores(weak_probs, scores[1], strong_plan, strong_masks, cutouts, loss);
          step.unsup_loss = unsup.value;
          step.retained_count = unsup.retained_count;
          for (auto& g : unsup.score_grad) {
            for (auto& v : g.data()) v *= loss.lambda_coeff;
          }
          grads.push_back(std::move(unsup.score_grad));
        }
        step.total_loss = total_loss(step.sup_loss, step.unsup_loss, loss);
        return grads;
      });

      ++rec.steps;
      rec.sup_loss += step.sup_loss;
      rec.unsup_loss += step.unsup_loss;
      rec.total_loss += step.total_loss;
      rec.retained_mean += static_cast<double>(step.retained_count);
      if (files) {
        files->steps << step.step << ',' << epoch << ',' << step.sup_loss << ',' << step.unsup_loss << ','
                     << step.total_loss << ',' << step.retained_count << ",0\n";
      }
      report.steps.push_back(step);
    }

    if (rec.steps > 0) {
      rec.sup_loss /= rec.steps;
      rec.unsup_loss /= rec.steps;
      rec.total_loss /= rec.steps;
      rec.retained_mean /= rec.steps;
    } else {
      rec.sup_loss = rec.unsup_loss = rec.total_loss = rec.retained_mean = kNaN;
    }

    const Evaluation val = evaluate(model, data.validation, loss, cfg.batch_size);
    rec.val_miou = val.miou;
    rec.val_loss = val.loss;
    val_history.push_back(rec.val_miou);
    if (best_epoch_index(val_history) == epoch) {
      report.best_epoch = epoch;
      report.best_val_miou = rec.val_miou;
      report.best_weights = model.flat_weights();
      if (options.run_dir) {
        const auto path = *options.run_dir / "checkpoints" / "best.ckpt";
        model.save_checkpoint(path, epoch, rec.val_miou);
        report.best_checkpoint = path;
      }
    }
    if (files) {
      files->epochs << epoch << ',' << rec.steps << ',' << rec.skipped_steps << ',' << rec.sup_loss << ','
                    << rec.unsup_loss << ',' << rec.total_loss << ',' << rec.retained_mean << ',' << rec.val_miou
                    << ',' << rec.val_loss << '\n';
      files->steps.flush();
      files->epochs.flush();
    }
    report.epochs.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec);
  }
  return report;
}

json optional_array(std::span<const std::optional<double>> v) {
  json arr = json::array();
  for (const auto& x : v) arr.push_back(x ? json(*x) : json(nullptr));
  return arr;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

TrainData prepare_train_data(const DatasetLayout& layout, const SplitAssignment& split, const ClassScheme& scheme) {
  TrainData data;
  data.labeled = load_samples(layout, split.labeled_ids, scheme);
  auto unlabeled = load_samples(layout, split.unlabeled_ids, scheme);
  data.validation = load_split(layout, "val", scheme).samples;
  data.test = load_split(layout, "test", scheme).samples;

  std::vector<MultispectralPatch> train_patches;
  for (const auto& s : data.labeled) train_patches.push_back(s.patch);
  for (const auto& s : unlabeled) train_patches.push_back(s.patch);
  if (train_patches.empty()) throw EmptyDatasetError("training split is empty");
  data.band_stats = compute_band_stats(train_patches);

  for (auto& s : data.labeled) normalize(s.patch.bands, data.band_stats);
  for (auto& s : data.validation) normalize(s.patch.bands, data.band_stats);
  for (auto& s : data.test) normalize(s.patch.bands, data.band_stats);
  for (auto& s : unlabeled) {
    normalize(s.patch.bands, data.band_stats);
    data.unlabeled.push_back(std::move(s.patch.bands));  // labels dropped here
  }
  return data;
}

int best_epoch_index(std::span<const double> val_mious) {
  int best = 0;
  for (std::size_t i = 0; i < val_mious.size(); ++i) {
    if (best == 0 || val_mious[i] > val_mious[best - 1]) best = static_cast<int>(i) + 1;
  }
  return best;
}

Evaluation evaluate(const UNet& model, std::span<const Sample> samples, const LossConfig& loss, int batch_size) {
  Evaluation ev;
  ev.confusion = ConfusionMatrix(model.config().num_classes);
  double loss_sum = 0.0;
  std::size_t labeled = 0;
  const std::size_t chunk = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t end = std::min(samples.size(), start + chunk);
    std::vector<Image> x;
    std::vector<SegmentationMap> y;
    for (std::size_t i = start; i < end; ++i) {
      x.push_back(samples[i].patch.bands);
      y.push_back(samples[i].labels);
    }
    const auto probs = softmax_all(model.forward(x));
    std::size_t batch_labeled = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      ev.confusion.accumulate(argmax(probs[i]), y[i]);
      batch_labeled += y[i].labeled_count();
    }
    if (batch_labeled > 0) {
      loss_sum += supervised_loss(probs, y, loss) * static_cast<double>(batch_labeled);
      labeled += batch_labeled;
    }
  }
  ev.iou = iou_per_class(ev.confusion);
  ev.miou = ev.confusion.total() > 0 ? miou(ev.iou) : kNaN;
  ev.pixel_accuracy = ev.confusion.total() > 0 ? pixel_accuracy(ev.confusion) : kNaN;
  ev.loss = labeled > 0 ? loss_sum / static_cast<double>(labeled) : kNaN;
  return ev;
}

json Evaluation::to_json(std::span<const std::string> class_names) const {
  json cm = json::array();
  for (int t = 0; t < confusion.num_classes(); ++t) {
    json row = json::array();
    for (int p = 0; p < confusion.num_classes(); ++p) row.push_back(confusion.at(t, p));
    cm.push_back(row);
  }
  return {{"class_names", std::vector<std::string>(class_names.begin(), class_names.end())},
          {"confusion", cm},
          {"iou", optional_array(iou)},
          {"miou", number_or_null(miou)},
          {"pixel_accuracy", number_or_null(pixel_accuracy)},
          {"loss", number_or_null(loss)}};
}

json TrainReport::to_json(std::span<const std::string> class_names) const {
  json ep = json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"steps", e.steps},
                  {"skipped_steps", e.skipped_steps},
                  {"sup_loss", number_or_null(e.sup_loss)},
                  {"unsup_loss", number_or_null(e.unsup_loss)},
                  {"total_loss", number_or_null(e.total_loss)},
                  {"retained_mean", number_or_null(e.retained_mean)},
                  {"val_miou", number_or_null(e.val_miou)},
                  {"val_loss", number_or_null(e.val_loss)}});
  }
  json j = {{"mode", to_string(mode)},
            {"epochs", ep},
            {"best_epoch", best_epoch},
            {"best_val_miou", number_or_null(best_val_miou)},
            {"best_checkpoint", best_checkpoint ? json(best_checkpoint->string()) : json(nullptr)}};
  j["test"] = test ? test->to_json(class_names) : json(nullptr);
  return j;
}

TrainReport train_supervised(const TrainConfig& cfg, const TrainData& data, UNet& model,
                             const TrainerOptions& options) {
  if (cfg.mode != TrainMode::FullySupervised) throw ConfigError("train_supervised needs mode fully_supervised");
  return run(cfg, data, model, options, false);
}

TrainReport train_fixmatch(const TrainConfig& cfg, const TrainData& data, UNet& model, const TrainerOptions& options) {
  if (cfg.mode != TrainMode::SemiSupervised) throw ConfigError("train_fixmatch needs mode semi_supervised");
  return run(cfg, data, model, options, true);
}

TrainReport train(const TrainConfig& cfg, const TrainData& data, UNet& model, const TrainerOptions& options) {
  return cfg.mode == TrainMode::FullySupervised ? train_supervised(cfg, data, model, options)
                                                : train_fixmatch(cfg, data, model, options);
}

TrainReport select_and_evaluate(TrainReport report, std::span<const Sample> test, UNet& model, const LossConfig& loss,
                                int batch_size) {
  if (report.best_epoch == 0) throw NoCheckpointError("no completed epoch, so no checkpoint to evaluate");
  if (!report.best_weights.empty()) {
    model.load_flat_weights(report.best_weights);
  } else if (report.best_checkpoint) {
    if (!std::filesystem::exists(*report.best_checkpoint)) {
      throw NoCheckpointError("checkpoint " + report.best_checkpoint->string() + " not found");
    }
    model.load_checkpoint(*report.best_checkpoint);
  } else {
    throw NoCheckpointError("report holds no checkpoint");
  }
  report.test = evaluate(model, test, loss, batch_size);
  return report;
}

}  // namespace fixseg
