#include "fixseg/train_config.hpp"

#include <cmath>

namespace fixseg {

using nlohmann::json;

std::string to_string(TrainMode mode) {
  return mode == TrainMode::FullySupervised ? "fully_supervised" : "semi_supervised";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "fs" || s == "fully_supervised") return TrainMode::FullySupervised;
  if (s == "ssl" || s == "semi_supervised") return TrainMode::SemiSupervised;
  throw ConfigError("unknown mode '" + s + "' (expected fs or ssl)");
}

LossConfig TrainConfig::loss() const {
  LossConfig l;
  l.alphas = alphas;
  l.gamma = gamma;
  l.lambda_coeff = lambda_coeff;
  l.threshold = threshold;
  l.unsupervised_focal = unsupervised_focal;
  return l;
}

void TrainConfig::validate(int num_classes) const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (mu < 1) throw ConfigError("mu must be >= 1");
  if (!(labeled_percentage > 0.0 && labeled_percentage <= 100.0)) {
    throw ConfigError("labeled percentage must lie in (0, 100]");
  }
  loss().validate(num_classes);
}

json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"lr", lr},
          {"batch_size", batch_size},
          {"alphas", alphas},
          {"gamma", gamma},
          {"threshold", threshold},
          {"lambda_coeff", lambda_coeff},
          {"mu", mu},
          {"unsupervised_focal", unsupervised_focal},
          {"mode", to_string(mode)},
          {"seed", seed},
          {"labeled_percentage", labeled_percentage}};
}

void TrainConfig::apply_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") epochs = value.get<int>();
      else if (key == "lr") lr = value.get<double>();
      else if (key == "batch_size") batch_size = value.get<int>();
      else if (key == "alphas") alphas = value.get<std::vector<double>>();
      else if (key == "gamma") gamma = value.get<double>();
      else if (key == "threshold") threshold = value.get<double>();
      else if (key == "lambda_coeff") lambda_coeff = value.get<double>();
      else if (key == "mu") mu = value.get<int>();
      else if (key == "unsupervised_focal") unsupervised_focal = value.get<bool>();
      else if (key == "mode") mode = train_mode_from_string(value.get<std::string>());
      else if (key == "seed") seed = value.get<std::uint64_t>();
      else if (key == "labeled_percentage") labeled_percentage = value.get<double>();
      else throw ConfigError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

std::vector<std::string> preset_names() { return {"threshold-sweep", "ce-vs-focal", "main"}; }

std::vector<double> threshold_sweep_values() { return {0.5, 0.6, 0.7, 0.8, 0.9}; }

TrainConfig preset_config(const std::string& name, double labeled_percentage) {
  TrainConfig c;
  c.labeled_percentage = labeled_percentage;
  c.mode = TrainMode::SemiSupervised;
  if (name == "threshold-sweep") {
    c.epochs = 500;
    c.threshold = 0.9;
  } else if (name == "ce-vs-focal") {
    c.epochs = 2000;
    c.threshold = 0.9;
  } else if (name == "main") {
    c.epochs = 2000;
    c.threshold = labeled_percentage < 20.0 ? 0.9 : 0.999;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

void ConfigOverrides::apply_to(TrainConfig& cfg) const {
  if (epochs) cfg.epochs = *epochs;
  if (lr) cfg.lr = *lr;
  if (batch_size) cfg.batch_size = *batch_size;
  if (alphas) cfg.alphas = *alphas;
  if (gamma) cfg.gamma = *gamma;
  if (threshold) cfg.threshold = *threshold;
  if (lambda_coeff) cfg.lambda_coeff = *lambda_coeff;
  if (mu) cfg.mu = *mu;
  if (unsupervised_focal) cfg.unsupervised_focal = *unsupervised_focal;
  if (mode) cfg.mode = *mode;
  if (seed) cfg.seed = *seed;
  if (labeled_percentage) cfg.labeled_percentage = *labeled_percentage;
}

TrainConfig resolve_config(const std::optional<std::string>& preset, const std::optional<json>& file,
                           const ConfigOverrides& flags) {
  // the labeled percentage can steer a preset, so settle it before building the preset
  TrainConfig probe;
  if (file) probe.apply_json(*file);
  flags.apply_to(probe);

  TrainConfig cfg = preset ? preset_config(*preset, probe.labeled_percentage) : TrainConfig{};
  if (file) cfg.apply_json(*file);
  flags.apply_to(cfg);
  return cfg;
}

}  // namespace fixseg
