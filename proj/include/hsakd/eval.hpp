// SPDX-License-Identifier: Apache-2.0
//
// Evaluation protocols: top-1 accuracy, linear probes on frozen features,
// loss-term ablation grids and the rotation DA-vs-SAL comparison.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsakd/config.hpp"
#include "hsakd/data.hpp"
#include "hsakd/model.hpp"
#include "hsakd/training.hpp"

namespace hsakd {

struct EvalReport {
  double top1 = 0.0;  // percent
  std::vector<double> per_class;  // percent, one per class
  std::vector<std::size_t> class_counts;
  std::size_t samples = 0;
  std::string config_echo;
  double seconds = 0.0;

  /// Single-object `key = value` text form.
  std::string to_text() const;
};

/// Argmax of the class head on unrotated images, batched.
std::vector<std::size_t> predict(const StagedModel& model, const Dataset& data,
                                 std::size_t batch_size = 256);

/// Top-1 over a test split; auxiliary classifiers are never run.
EvalReport evaluate_top1(const StagedModel& model, const Dataset& data,
                         std::size_t batch_size = 256);
EvalReport evaluate_top1(const Checkpoint& ckpt, const Dataset& data);

/// Pooled last-stage features [n, d] of the frozen backbone.
Tensor pooled_features(const StagedModel& model, const Dataset& data,
                       std::size_t batch_size = 256);

struct ProbeOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 1;
};

/// Trains a fresh linear head on the frozen backbone's pooled features of
/// `train` and reports top-1 on `test` (which may be `train` itself). The
/// target class count may differ from the model's.
EvalReport linear_probe(const StagedModel& model, const Dataset& train, const Dataset& test,
                        const ProbeOptions& options = {});

struct AblationRow {
  LossFlags flags;
  std::string label;  // canonical flag text
  std::uint64_t seed = 0;
  double top1 = 0.0;
  std::uint64_t teacher_hash = 0;
  std::uint64_t data_hash = 0;
  std::string error;  // non-empty when the cell failed
};

struct AblationGrid {
  std::vector<AblationRow> rows;  // sorted by (label, seed)

  /// Mean top-1 per flag set over successful seeds, in label order.
  std::vector<std::pair<std::string, double>> means() const;
  double mean(const std::string& label) const;
  std::string to_csv() const;
};

/// Trains one student per (flag set, seed) from the shared teacher and data
/// and evaluates it on `test`. Cells run on the worker pool.
AblationGrid run_ablation(const RunConfig& base, const Checkpoint& teacher, const Dataset& train,
                          const Dataset& test, std::span<const LossFlags> grid,
                          std::span<const std::uint64_t> seeds);

struct DaSalRow {
  std::string arm;  // baseline, da, sal
  std::vector<double> top1;  // per seed
  double mean = 0.0;
};

struct DaSalTable {
  std::vector<DaSalRow> rows;
  const DaSalRow& arm(const std::string& name) const;
  std::string to_text() const;
};

/// Trains the same backbone as plain CE, as CE with rotated inputs and
/// original labels, and with joint-label auxiliary heads; same epochs and
/// optimizer for every arm.
DaSalTable compare_da_sal(const RunConfig& config, const Dataset& train, const Dataset& test,
                          std::span<const std::uint64_t> seeds);

}  // namespace hsakd
