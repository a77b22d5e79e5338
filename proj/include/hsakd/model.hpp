// SPDX-License-Identifier: Apache-2.0
//
// Staged CNN backbones with one auxiliary classifier per stage.
//
// Backbone: L stages of (3x3 conv + bias + ReLU) blocks, global average
// pooling and a linear class head. Auxiliary classifier l takes the feature
// map after stage l, runs fresh copies of stages l+1..L, pools, and maps to
// the N*M joint label space. The class path never touches aux parameters.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsakd/tensor.hpp"

namespace hsakd {

struct StageSpec {
  std::size_t blocks = 2;
  std::size_t channels = 16;
  bool downsample = false;  // stride-2 first conv

  bool operator==(const StageSpec&) const = default;
};

/// Architecture of a staged model.
struct ModelSpec {
  std::vector<StageSpec> stages;
  std::size_t in_channels = 1;
  std::size_t classes = 8;
  std::size_t transforms = 4;

  bool operator==(const ModelSpec&) const = default;
};

/// 16/32/64 channels, 2 blocks per stage, downsampling at stages 2 and 3.
std::vector<StageSpec> default_stages();
/// Same depth with every channel count halved.
std::vector<StageSpec> halved(std::span<const StageSpec> stages);

/// "16:2:0,32:2:1,64:2:1" (channels:blocks:downsample), as used in configs.
std::vector<StageSpec> parse_stages(const std::string& text);
std::string format_stages(std::span<const StageSpec> stages);

struct ConvLayer {
  Parameter weight;  // [out, in, 3, 3]
  Parameter bias;    // [out]
  std::size_t stride = 1;
};

struct Stage {
  std::vector<ConvLayer> convs;
};

struct LinearHead {
  Parameter weight;  // [in, out]
  Parameter bias;    // [out]
};

struct AuxClassifier {
  std::vector<Stage> tail;  // copies of stages l+1..L
  LinearHead head;          // d -> N*M
};

class StagedModel {
 public:
  StagedModel(ModelSpec spec, std::vector<Stage> stages, LinearHead head,
              std::vector<AuxClassifier> aux);

  const ModelSpec& spec() const noexcept { return spec_; }
  std::size_t stage_count() const noexcept { return stages_.size(); }
  std::size_t embedding_dim() const { return spec_.stages.back().channels; }
  std::size_t joint_classes() const { return spec_.classes * spec_.transforms; }

  const std::vector<Stage>& stages() const noexcept { return stages_; }
  const LinearHead& head() const noexcept { return head_; }
  const std::vector<AuxClassifier>& aux() const noexcept { return aux_; }

  /// Every parameter, sorted by name.
  std::vector<Parameter> parameters() const;
  /// Backbone stages plus the class head (the inference path).
  std::vector<Parameter> backbone_parameters() const;
  /// All auxiliary classifiers.
  std::vector<Parameter> aux_parameters() const;
  /// Auxiliary classifier `l` (0-based).
  std::vector<Parameter> aux_parameters(std::size_t l) const;

  std::optional<Parameter> find(const std::string& name) const;

  /// Marks every parameter as (not) requiring gradients.
  void set_trainable(bool on);

 private:
  ModelSpec spec_;
  std::vector<Stage> stages_;
  LinearHead head_;
  std::vector<AuxClassifier> aux_;
};

/// Deterministic construction: He-scaled Gaussian weights seeded from
/// (seed, parameter name), zero biases.
StagedModel build_model(const ModelSpec& spec, std::uint64_t seed,
                        DType dtype = DType::f32);

struct TapOutput {
  Tensor class_logits;       // [B, N]
  Tensor embedding;          // [B, d], pooled last-stage features
  std::vector<Tensor> taps;  // feature map after each stage
};

/// Backbone forward pass over a [B, C, H, W] batch.
TapOutput forward_taps(const StagedModel& model, const Tensor& batch);

/// Joint logits [B, N*M] from every auxiliary classifier. With `detach_taps`
/// the taps are cut from the tape so no gradient reaches the backbone.
std::vector<Tensor> aux_forward(const StagedModel& model, std::span<const Tensor> taps,
                                bool detach_taps = false);

/// Runs backbone stages `from`..L-1 (0-based) on a feature map.
Tensor run_backbone_stages(const StagedModel& model, std::size_t from,
                           const Tensor& features);
/// Runs the tail of auxiliary classifier `l` (no pooling or head).
Tensor run_aux_tail(const StagedModel& model, std::size_t l, const Tensor& tap);

/// Number of scalar weights in a stage list fed by `in_channels` channels.
std::size_t stage_parameter_count(std::span<const StageSpec> stages,
                                  std::size_t in_channels);

/// Stable 64-bit seed for a named parameter.
std::uint64_t parameter_seed(std::uint64_t seed, const std::string& name);

}  // namespace hsakd
