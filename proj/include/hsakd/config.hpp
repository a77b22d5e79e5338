// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its `key = value` text form. Configs are strict:
// unknown keys are rejected. CLI flags mirror the same keys (`--key value`,
// with dashes accepted in place of underscores).
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "hsakd/losses.hpp"
#include "hsakd/model.hpp"

namespace hsakd {

using KeyValues = std::map<std::string, std::string>;

/// Parses UTF-8 `key = value` lines with `#` comments. Keys outside
/// `allowed` raise ConfigError.
KeyValues parse_key_values(const std::string& text, const std::set<std::string>& allowed);
KeyValues read_key_values(const std::filesystem::path& path,
                          const std::set<std::string>& allowed);

enum class TeacherRegime : std::uint8_t { joint, frozen };

struct LrSchedule {
  double base = 0.05;
  std::vector<std::size_t> milestones{30, 45};
  double decay = 0.1;
};

/// base * decay^(number of milestones <= epoch).
double lr_at(const LrSchedule& schedule, std::size_t epoch);

struct RunConfig {
  // architecture of the model being trained
  std::vector<StageSpec> stages = default_stages();
  std::size_t in_channels = 1;
  std::size_t classes = 8;
  std::size_t transforms = 4;

  std::uint64_t seed = 1;
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<std::size_t> milestones{30, 45};
  double lr_decay = 0.1;
  double tau_task = 1.0;
  double tau_mimic = 3.0;
  TeacherRegime teacher_regime = TeacherRegime::joint;
  LossFlags loss = hsakd_flags();
  bool strict = false;

  std::string train_data;
  std::string test_data;
  std::string teacher_checkpoint;
  std::string output_dir;

  ModelSpec model_spec() const;
  LrSchedule schedule() const;
  TemperatureConfig temperatures() const;
  /// Range checks; throws ConfigError.
  void validate() const;
};

/// Keys understood by RunConfig.
const std::set<std::string>& run_config_keys();

/// Applies recognized keys on top of `base`; ignores keys it does not own.
RunConfig apply_key_values(const RunConfig& base, const KeyValues& kv);

/// Canonical text form (every key, fixed order, round-trippable numbers).
std::string to_text(const RunConfig& config);
RunConfig run_config_from_text(const std::string& text);

std::string format_double(double v);

}  // namespace hsakd
