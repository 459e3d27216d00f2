#include "fixseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "fixseg/marida_data.hpp"
#include "fixseg/metrics.hpp"
#include "fixseg/plot.hpp"
#include "fixseg/train_config.hpp"
#include "fixseg/trainer.hpp"
#include "fixseg/unet.hpp"

namespace fixseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::int64_t kTargetParams = 841099;
constexpr double kTargetGflops = 2.07;

class UsageError : public Error {
 public:
  using Error::Error;
};

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw DataError("cannot write " + file.string());
  os << text;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

std::string percent_tag(double p) {
  std::ostringstream os;
  os << p;
  return os.str();
}

std::string format_fraction(const std::optional<double>& f) {
  if (!f) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *f;
  return os.str();
}

// --- synth -----------------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 0;
  int patches = 48;
  int size = 64;
  double label_fraction = 1.0;
  int val = 8;
  int test = 8;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  SyntheticOptions o;
  o.n_patches = a.patches;
  o.height = o.width = a.size;
  o.label_fraction = a.label_fraction;
  o.seed = a.seed;
  o.n_val = a.val;
  o.n_test = a.test;
  generate_synthetic_dataset(a.out, o);
  out << "wrote " << a.patches << " train, " << a.val << " val, " << a.test << " test patches of " << a.size << "x"
      << a.size << " to " << a.out << '\n';
  return kExitOk;
}

// --- split -----------------------------------------------------------------------------------

struct SplitArgs {
  std::string data;
  double percent = 10;
  std::uint64_t seed = 0;
  std::string out;
};

SplitAssignment make_split(const DatasetLayout& layout, double percent, std::uint64_t seed) {
  const auto& scheme = ClassScheme::marida();
  const auto loaded = load_split(layout, "train", scheme);
  std::vector<std::string> ids;
  std::vector<SegmentationMap> maps;
  for (const auto& s : loaded.samples) {
    ids.push_back(s.patch.patch_id);
    maps.push_back(s.labels);
  }
  return two_training_sets_split(ids, maps, scheme.num_classes(), percent, seed);
}

int cmd_split(const SplitArgs& a, std::ostream& out) {
  const DatasetLayout layout(a.data);
  const auto& scheme = ClassScheme::marida();
  const auto split = make_split(layout, a.percent, a.seed);
  const fs::path file = a.out.empty() ? layout.manifest_file(a.percent, a.seed) : fs::path(a.out);
  write_split_manifest(file, split, scheme);
  out << "labeled " << split.labeled_ids.size() << " / unlabeled " << split.unlabeled_ids.size() << " patches\n";
  for (int c = 0; c < scheme.num_classes(); ++c) {
    out << "  " << std::left << std::setw(24) << scheme.name(c) << std::right
        << format_fraction(split.per_class_fraction[c]) << " %\n";
  }
  out << "manifest: " << file.string() << '\n';
  return kExitOk;
}

// --- train -----------------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out;
  std::optional<std::string> preset;
  std::optional<std::string> config_file;
  std::optional<std::string> split_file;
  std::optional<std::string> mode;
  std::optional<std::string> unsup_loss;
  std::string device = "cpu";
  ConfigOverrides flags;
};

int cmd_train(TrainArgs a, std::ostream& out) {
  if (a.device != "cpu") throw UsageError("only --device cpu is supported");
  if (a.mode) a.flags.mode = train_mode_from_string(*a.mode);
  if (a.unsup_loss) {
    if (*a.unsup_loss != "ce" && *a.unsup_loss != "focal") throw UsageError("--unsup-loss must be ce or focal");
    a.flags.unsupervised_focal = *a.unsup_loss == "focal";
  }
  std::optional<json> file_cfg;
  if (a.config_file) file_cfg = read_json(*a.config_file);
  const TrainConfig cfg = resolve_config(a.preset, file_cfg, a.flags);
  const auto& scheme = ClassScheme::marida();
  cfg.validate(scheme.num_classes());

  const DatasetLayout layout(a.data);
  SplitAssignment split;
  if (a.split_file) {
    split = read_split_manifest(*a.split_file, scheme);
  } else if (fs::exists(layout.manifest_file(cfg.labeled_percentage, cfg.seed))) {
    split = read_split_manifest(layout.manifest_file(cfg.labeled_percentage, cfg.seed), scheme);
  } else {
    split = make_split(layout, cfg.labeled_percentage, cfg.seed);
    write_split_manifest(layout.manifest_file(cfg.labeled_percentage, cfg.seed), split, scheme);
  }

  const fs::path run_dir = a.out.empty() ? fs::path("runs") / (std::string(cfg.mode == TrainMode::FullySupervised ? "fs" : "ssl") +
                                                                 "_m" + percent_tag(cfg.labeled_percentage) + "_s" +
                                                                 std::to_string(cfg.seed))
                                         : fs::path(a.out);
  fs::create_directories(run_dir);
  write_text(run_dir / "config.json", cfg.to_json().dump(2) + "\n");
  write_split_manifest(run_dir / "split.json", split, scheme);

  const TrainData data = prepare_train_data(layout, split, scheme);
  write_text(run_dir / "band_stats.json", data.band_stats.to_json().dump(2) + "\n");

  UNetConfig model_cfg = UNetConfig::reference();
  model_cfg.num_classes = scheme.num_classes();
  model_cfg.init_seed = cfg.seed;
  UNet model(model_cfg);

  TrainerOptions opts;
  opts.run_dir = run_dir;
  const int every = std::max(1, cfg.epochs / 20);
  opts.on_epoch = [&](const EpochRecord& e) {
    if (e.epoch % every != 0 && e.epoch != cfg.epochs) return;
    out << "epoch " << e.epoch << "/" << cfg.epochs << "  loss " << e.total_loss << "  sup " << e.sup_loss << "  unsup "
        << e.unsup_loss << "  retained " << e.retained_mean << "  val mIoU " << e.val_miou << '\n';
  };
  TrainReport report = train(cfg, data, model, opts);
  if (report.best_epoch > 0) {
    report = select_and_evaluate(std::move(report), data.test, model, cfg.loss(), cfg.batch_size);
    write_text(run_dir / "confusion_test.txt", format_confusion_table(report.test->confusion, scheme.class_names()));
    out << "best epoch " << report.best_epoch << " (val mIoU " << report.best_val_miou << "), test mIoU "
        << report.test->miou << '\n';
  }
  json rep = report.to_json(scheme.class_names());
  rep["config"] = cfg.to_json();
  write_text(run_dir / "report.json", rep.dump(2) + "\n");
  out << "run directory: " << run_dir.string() << '\n';
  return kExitOk;
}

// --- eval ------------------------------------------------------------------------------------

struct EvalArgs {
  std::string data;
  std::string run;
  std::string checkpoint;
  std::string split = "test";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto& scheme = ClassScheme::marida();
  fs::path ckpt = a.checkpoint;
  fs::path stats_file;
  if (!a.run.empty()) {
    if (ckpt.empty()) ckpt = fs::path(a.run) / "checkpoints" / "best.ckpt";
    stats_file = fs::path(a.run) / "band_stats.json";
  } else if (!ckpt.empty()) {
    stats_file = ckpt.parent_path().parent_path() / "band_stats.json";
  } else {
    throw UsageError("eval needs --run or --checkpoint");
  }
  if (!fs::exists(ckpt)) throw NoCheckpointError("checkpoint " + ckpt.string() + " not found");
  const UNet model = load_model(ckpt);
  const BandStats stats = BandStats::from_json(read_json(stats_file));
  auto samples = load_split(DatasetLayout(a.data), a.split, scheme).samples;
  for (auto& s : samples) normalize(s.patch.bands, stats);
  const Evaluation ev = evaluate(model, samples, LossConfig{}, 5);
  out << format_confusion_table(ev.confusion, scheme.class_names());
  out << std::fixed << std::setprecision(3) << "mIoU " << ev.miou << "  pixel accuracy " << ev.pixel_accuracy << '\n';
  return kExitOk;
}

// --- analyze ---------------------------------------------------------------------------------

int cmd_variance(const std::string& table, std::ostream& out) {
  std::ifstream in(table);
  if (!in) throw DataError("cannot read " + table);
  const auto rows = parse_named_rows(in);
  if (rows.empty()) throw DataError(table + " holds no numeric rows");
  for (const auto& r : rows) {
    const double v = score_difference_variance(r.values);
    out << std::left << std::setw(26) << (r.name.empty() ? "(row)" : r.name) << std::right << std::fixed
        << std::setprecision(2) << round_report(v) << '\n';
  }
  return kExitOk;
}

int cmd_confusion(const std::string& matrix, const std::vector<std::string>& names_in, std::ostream& out) {
  std::ifstream in(matrix);
  if (!in) throw DataError("cannot read " + matrix);
  const ConfusionMatrix cm = parse_confusion_matrix(in);
  std::vector<std::string> names = names_in;
  if (names.empty()) {
    const auto& scheme = ClassScheme::marida();
    if (cm.num_classes() == scheme.num_classes()) {
      names.assign(scheme.class_names().begin(), scheme.class_names().end());
    } else {
      for (int c = 0; c < cm.num_classes(); ++c) names.push_back("class" + std::to_string(c));
    }
  }
  out << format_confusion_table(cm, names);
  const auto ious = iou_per_class(cm);
  out << std::fixed << std::setprecision(3) << "mIoU " << miou(ious) << "  pixel accuracy " << pixel_accuracy(cm)
      << '\n';
  return kExitOk;
}

// --- plot ------------------------------------------------------------------------------------

int cmd_plot(const std::string& run, const std::string& out_dir_arg, std::ostream& out) {
  const fs::path run_dir(run);
  const fs::path out_dir = out_dir_arg.empty() ? run_dir : fs::path(out_dir_arg);
  const auto epochs = read_numeric_csv(run_dir / "metrics_epochs.csv");
  const auto& x = epochs.at("epoch");
  write_text(out_dir / "loss.svg",
             render_line_chart({{"total", x, epochs.at("total_loss")},
                                {"supervised", x, epochs.at("sup_loss")},
                                {"unsupervised", x, epochs.at("unsup_loss")},
                                {"validation", x, epochs.at("val_loss")}},
                               "Training loss", "epoch", "loss"));
  write_text(out_dir / "miou.svg",
             render_line_chart({{"validation mIoU", x, epochs.at("val_miou")}}, "Validation mIoU", "epoch", "mIoU"));
  out << "wrote " << (out_dir / "loss.svg").string() << " and " << (out_dir / "miou.svg").string() << '\n';
  return kExitOk;
}

// --- budget ----------------------------------------------------------------------------------

int cmd_budget(const std::string& config, int height, int width, std::ostream& out) {
  UNetConfig cfg;
  if (config == "ref") {
    cfg = UNetConfig::reference();
  } else {
    cfg = UNetConfig::from_json(read_json(config));
  }
  const auto r = budget_report(cfg, height, width);
  const double dev = 100.0 * static_cast<double>(r.param_count - kTargetParams) / static_cast<double>(kTargetParams);
  out << "param_count      " << r.param_count << "  (target " << kTargetParams << ", " << std::showpos << std::fixed
      << std::setprecision(2) << dev << std::noshowpos << " %)\n";
  out << "input            " << cfg.in_bands << "x" << height << "x" << width << '\n';
  out << std::setprecision(3);
  out << "GMACs            " << static_cast<double>(r.macs) / 1e9 << "  (target " << kTargetGflops << ")\n";
  out << "GFLOPs (2*MAC)   " << r.flops / 1e9 << '\n';
  out << "serialized_size  " << r.serialized_size << " bytes (" << static_cast<double>(r.serialized_size) / (1024.0 * 1024.0)
      << " MiB)\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semi-supervised segmentation of 11-band multispectral patches", "fixseg"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic dataset");
  c_synth->add_option("--out", synth.out, "dataset root")->required();
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--patches", synth.patches, "training patches")->check(CLI::PositiveNumber);
  c_synth->add_option("--size", synth.size, "patch side in pixels")->check(CLI::Range(8, 4096));
  c_synth->add_option("--label-fraction", synth.label_fraction)->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--val", synth.val)->check(CLI::NonNegativeNumber);
  c_synth->add_option("--test", synth.test)->check(CLI::NonNegativeNumber);

  SplitArgs split;
  auto* c_split = app.add_subcommand("split", "labeled/unlabeled partition of the training patches");
  c_split->add_option("--data", split.data, "dataset root")->envname("FIXSEG_DATA_ROOT")->required();
  c_split->add_option("--percent", split.percent, "labeled percentage m")->check(CLI::Range(0.0, 100.0));
  c_split->add_option("--seed", split.seed);
  c_split->add_option("--out", split.out, "manifest path");

  TrainArgs tr;
  std::optional<int> epochs, batch_size, mu;
  std::optional<double> lr, gamma, threshold, lambda, percent;
  std::optional<std::uint64_t> seed;
  std::vector<double> alphas;
  auto* c_train = app.add_subcommand("train", "train a model and evaluate its best checkpoint");
  c_train->add_option("--data", tr.data, "dataset root")->envname("FIXSEG_DATA_ROOT")->required();
  c_train->add_option("--out", tr.out, "run directory");
  c_train->add_option("--preset", tr.preset)->check(CLI::IsMember(preset_names()));
  c_train->add_option("--config", tr.config_file, "JSON file with hyperparameters");
  c_train->add_option("--split", tr.split_file, "split manifest");
  c_train->add_option("--mode", tr.mode)->check(CLI::IsMember({"fs", "ssl"}));
  c_train->add_option("--unsup-loss", tr.unsup_loss)->check(CLI::IsMember({"ce", "focal"}));
  c_train->add_option("--device", tr.device);
  c_train->add_option("--seed", seed);
  c_train->add_option("--percent", percent);
  c_train->add_option("--epochs", epochs);
  c_train->add_option("--lr", lr);
  c_train->add_option("--batch-size", batch_size);
  c_train->add_option("--gamma", gamma);
  c_train->add_option("--alphas", alphas)->delimiter(',');
  c_train->add_option("--threshold", threshold);
  c_train->add_option("--lambda", lambda);
  c_train->add_option("--mu", mu);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  c_eval->add_option("--data", ev.data, "dataset root")->envname("FIXSEG_DATA_ROOT")->required();
  c_eval->add_option("--run", ev.run, "run directory");
  c_eval->add_option("--checkpoint", ev.checkpoint);
  c_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test"}));
  c_eval->add_option("--device", tr.device);

  std::string table, matrix;
  std::vector<std::string> names;
  auto* c_analyze = app.add_subcommand("analyze", "variance of score differences, confusion tables");
  c_analyze->require_subcommand(1);
  auto* c_var = c_analyze->add_subcommand("variance", "zero-mean variance per row");
  c_var->add_option("--table", table, "rows: name followed by differences")->required();
  auto* c_conf = c_analyze->add_subcommand("confusion", "IoU, mIoU and accuracy of a confusion matrix");
  c_conf->add_option("--matrix", matrix, "rows = truth, columns = prediction")->required();
  c_conf->add_option("--names", names)->delimiter(',');

  std::string plot_run, plot_out;
  auto* c_plot = app.add_subcommand("plot", "SVG loss and mIoU curves of a run");
  c_plot->add_option("--run", plot_run)->required();
  c_plot->add_option("--out", plot_out);

  std::string budget_cfg = "ref";
  int budget_h = 256, budget_w = 256;
  auto* c_budget = app.add_subcommand("budget", "parameter count, compute and checkpoint size");
  c_budget->add_option("--config", budget_cfg, "ref or a JSON model config");
  c_budget->add_option("--height", budget_h)->check(CLI::PositiveNumber);
  c_budget->add_option("--width", budget_w)->check(CLI::PositiveNumber);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*c_synth) return cmd_synth(synth, out);
    if (*c_split) return cmd_split(split, out);
    if (*c_train) {
      tr.flags.epochs = epochs;
      tr.flags.lr = lr;
      tr.flags.batch_size = batch_size;
      tr.flags.mu = mu;
      tr.flags.gamma = gamma;
      tr.flags.threshold = threshold;
      tr.flags.lambda_coeff = lambda;
      tr.flags.labeled_percentage = percent;
      tr.flags.seed = seed;
      if (!alphas.empty()) tr.flags.alphas = alphas;
      return cmd_train(tr, out);
    }
    if (*c_eval) {
      if (tr.device != "cpu") throw UsageError("only --device cpu is supported");
      return cmd_eval(ev, out);
    }
    if (*c_var) return cmd_variance(table, out);
    if (*c_conf) return cmd_confusion(matrix, names, out);
    if (*c_plot) return cmd_plot(plot_run, plot_out, out);
    if (*c_budget) return cmd_budget(budget_cfg, budget_h, budget_w, out);
  } catch (const InfeasibleSplitError& e) {
    err << "infeasible split: " << e.what() << '\n';
    return kExitInfeasibleSplit;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NoCheckpointError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "unexpected error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fixseg
