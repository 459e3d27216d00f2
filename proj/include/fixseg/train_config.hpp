#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fixseg/losses.hpp"

namespace fixseg {

enum class TrainMode { FullySupervised, SemiSupervised };

std::string to_string(TrainMode mode);
/// Accepts "fs"/"fully_supervised" and "ssl"/"semi_supervised".
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 2000;
  double lr = 2e-4;
  int batch_size = 5;
  std::vector<double> alphas{1.0, 1.0, 1.0, 1.0, 1.0};
  double gamma = 2.0;
  double threshold = 0.9;
  double lambda_coeff = 1.0;
  int mu = 5;
  bool unsupervised_focal = false;
  TrainMode mode = TrainMode::SemiSupervised;
  std::uint64_t seed = 0;
  double labeled_percentage = 10.0;

  LossConfig loss() const;
  /// Throws ConfigError on out-of-range values.
  void validate(int num_classes) const;

  nlohmann::json to_json() const;
  /// Overwrites only the fields present in `j`; unknown keys raise ConfigError.
  void apply_json(const nlohmann::json& j);
};

std::vector<std::string> preset_names();

/// Throws ConfigError for unknown names. "main" picks the threshold from the labeled percentage.
TrainConfig preset_config(const std::string& name, double labeled_percentage = 10.0);

/// Thresholds compared by the "threshold-sweep" preset.
std::vector<double> threshold_sweep_values();

/// Partial settings from one source; unset fields defer to lower-priority sources.
struct ConfigOverrides {
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<std::vector<double>> alphas;
  std::optional<double> gamma;
  std::optional<double> threshold;
  std::optional<double> lambda_coeff;
  std::optional<int> mu;
  std::optional<bool> unsupervised_focal;
  std::optional<TrainMode> mode;
  std::optional<std::uint64_t> seed;
  std::optional<double> labeled_percentage;

  void apply_to(TrainConfig& cfg) const;
};

/// Built-in defaults, then the preset, then the config file, then flags.
TrainConfig resolve_config(const std::optional<std::string>& preset, const std::optional<nlohmann::json>& file,
                           const ConfigOverrides& flags);

}  // namespace fixseg
