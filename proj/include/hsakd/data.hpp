// SPDX-License-Identifier: Apache-2.0
//
// Datasets of square u8 images, the synthetic template corpus, rotation-
// expanded batches and stratified few-shot splits.
//
// Dataset file layout (little-endian):
//   "HSKD-DS1" | u32 version=1 | u32 N | u32 count | u32 C | u32 H | u32 W
//   | count x u16 labels | count*C*H*W u8 pixels (sample-major, channel-major)
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hsakd/tensor.hpp"
#include "hsakd/transforms.hpp"

namespace hsakd {

enum class SplitTag : std::uint8_t { train, test };

struct Dataset {
  std::size_t classes = 0;
  std::size_t channels = 1;
  std::size_t side = 0;
  std::vector<std::uint16_t> labels;
  std::vector<std::uint8_t> pixels;
  SplitTag split = SplitTag::train;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return channels * side * side; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * image_size(), image_size());
  }
  /// Checks label range and buffer sizes; throws ContractError.
  void validate() const;

  bool operator==(const Dataset& o) const {
    return classes == o.classes && channels == o.channels && side == o.side &&
           labels == o.labels && pixels == o.pixels;
  }
};

void write_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path, SplitTag split = SplitTag::train);

std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::span<const std::uint8_t> bytes, SplitTag split = SplitTag::train);

/// FNV-1a over the encoded dataset.
std::uint64_t dataset_hash(const Dataset& ds);

struct SynthOptions {
  std::size_t classes = 8;
  std::size_t per_class = 500;
  std::size_t side = 16;
  std::size_t channels = 1;
  double noise_std = 1.2;
  std::uint64_t seed = 7;
  SplitTag split = SplitTag::train;
};

/// One rotation-asymmetric template per class: a random 8x8 pattern
/// upsampled to side x side, values in [0, 1], redrawn while it equals any of
/// its own nontrivial quarter-rotations within 1e-3. Templates depend only on
/// the seed; noise additionally depends on the split tag, so train and test
/// corpora share templates.
std::vector<std::vector<double>> synth_templates(const SynthOptions& opt);

/// Templates plus per-sample Gaussian pixel noise, quantized to u8.
Dataset synth_generate(const SynthOptions& opt);

struct ExpandedBatch {
  Tensor images;  // [B*M, C, side, side], values in [0, 1]
  std::vector<std::size_t> joint_labels;
  std::vector<std::size_t> class_labels;
  std::vector<std::size_t> transform_ids;
  std::size_t samples = 0;     // B
  std::size_t transforms = 1;  // M

  /// Row indices holding the untransformed images (j = 0).
  std::vector<std::size_t> identity_rows() const;
};

/// Row i*M + j holds t_j(x_i) for the selected samples.
ExpandedBatch expand_batch(const Dataset& ds, std::span<const std::size_t> indices,
                           const TransformSet& transforms, const LabelSpace& space);

/// Unrotated float batch [B, C, side, side].
Tensor image_batch(const Dataset& ds, std::span<const std::size_t> indices);

/// Stratified per-class subsample keeping max(1, floor(fraction * count))
/// samples of each class: a seeded per-class shuffle followed by a prefix,
/// so splits with equal seed are nested.
Dataset few_shot_split(const Dataset& ds, double fraction, std::uint64_t seed);

/// Indices selected by few_shot_split, in ascending order.
std::vector<std::size_t> few_shot_indices(const Dataset& ds, double fraction,
                                          std::uint64_t seed);

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace hsakd
