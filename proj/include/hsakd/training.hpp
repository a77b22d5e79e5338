// SPDX-License-Identifier: Apache-2.0
//
// Teacher and student training loops, checkpoints and metrics logs.
//
// Checkpoint file layout (little-endian):
//   "HSKD-CK1" | u32 version | u32 blob length | UTF-8 config blob
//   | u32 tensor count | per tensor: u16 name length, name, u8 dtype code
//   (0 = f32, 1 = f64), u8 rank, rank x u32 dims, raw values
// Tensors are stored sorted by name. The config blob is the RunConfig text
// followed by `epoch` and `rng_state` lines.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hsakd/config.hpp"
#include "hsakd/data.hpp"
#include "hsakd/losses.hpp"
#include "hsakd/model.hpp"

namespace hsakd {

/// Training aborted (non-finite loss) with epoch/batch context.
class TrainingError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct Checkpoint {
  RunConfig config;
  std::string config_text;  // verbatim blob, including epoch/rng lines
  std::vector<Parameter> tensors;  // sorted by name
  std::uint32_t epoch = 0;
  std::string rng_state;
};

Checkpoint make_checkpoint(const StagedModel& model, const RunConfig& config,
                           std::uint32_t epoch, const std::string& rng_state = "");

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
void save_checkpoint(const StagedModel& model, const RunConfig& config,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint tensors into `model`. Throws FormatError naming the first
/// model parameter missing from the checkpoint, or the first unknown name.
void load_parameters(StagedModel& model, const Checkpoint& ckpt);

/// Rebuilds the architecture recorded in the checkpoint, in the stored dtype,
/// and loads it.
StagedModel model_from_checkpoint(const Checkpoint& ckpt);

/// FNV-1a over the encoded checkpoint / over parameter values.
std::uint64_t checkpoint_hash(const Checkpoint& ckpt);
std::uint64_t parameters_hash(std::span<const Parameter> params);

/// CSV log with header `epoch,phase,metric,value`. When a path is given,
/// rows are appended to the file as they arrive.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(std::filesystem::path path);

  void append(std::size_t epoch, const std::string& phase, const std::string& metric,
              double value);

  struct Row {
    std::size_t epoch;
    std::string phase;
    std::string metric;
    double value;
  };
  const std::vector<Row>& rows() const noexcept { return rows_; }
  std::vector<double> series(const std::string& phase, const std::string& metric) const;
  std::string to_csv() const;

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<Row> rows_;
};

/// Supervision schemes for a single network.
enum class SupervisedMode : std::uint8_t {
  baseline,  // CE on unrotated images
  rotation_augment,  // CE with class labels on every rotation
  joint,     // CE on unrotated images + joint-label CE on every aux head
};

struct TrainResult {
  Checkpoint checkpoint;
  StagedModel model;
};

/// Trains one network (with fresh init from config.seed) under `mode`.
TrainResult train_supervised(const RunConfig& config, const Dataset& data, SupervisedMode mode,
                             MetricsLog* metrics = nullptr, const std::string& phase = "train");

/// Joint regime: CE + joint-label CE end to end. Frozen regime: backbone and
/// head with CE, then aux classifiers on detached taps for the same number of
/// epochs.
TrainResult train_teacher(const RunConfig& config, const Dataset& data,
                          MetricsLog* metrics = nullptr);

/// Teacher predictions on every (sample, transform) row of a dataset.
struct TeacherOutputs {
  std::size_t transforms = 1;
  std::vector<float> class_logits;             // [n*M, N]
  std::vector<std::vector<float>> aux_logits;  // L x [n*M, N*M]
  std::size_t classes = 0;
  std::size_t joint = 0;
};

TeacherOutputs teacher_outputs(const StagedModel& teacher, const Dataset& data,
                               bool with_aux, std::size_t batch_size = 128);

/// Student losses for one batch (the `indices` samples of the dataset that
/// `teacher` was evaluated on).
LossBundle student_batch_losses(const StagedModel& student, const TeacherOutputs& teacher,
                                const Dataset& data, std::span<const std::size_t> indices,
                                const LossFlags& flags, const TemperatureConfig& temps);

/// Minimizes the flagged student objective (default task + kl_q + kl_p).
TrainResult train_student(const RunConfig& config, const Checkpoint& teacher,
                          const Dataset& data, MetricsLog* metrics = nullptr);

}  // namespace hsakd
