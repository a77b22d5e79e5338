// SPDX-License-Identifier: Apache-2.0
#include "hsakd/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "hsakd/ops.hpp"

namespace hsakd {
namespace {

constexpr std::size_t kKernel = 3;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Parameter make_param(const std::string& name, Shape shape, std::size_t fan_in,
                     std::uint64_t seed, DType dtype) {
  Tensor t = Tensor::zeros(std::move(shape), dtype);
  if (fan_in > 0) {
    std::mt19937_64 rng(parameter_seed(seed, name));
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Storage& s = t.mutable_storage();
    for (std::size_t i = 0; i < s.size(); ++i) s.set(i, normal(rng));
  }
  t.set_requires_grad(true);
  return Parameter{name, std::move(t)};
}

Stage make_stage(const std::string& prefix, const StageSpec& spec, std::size_t in_channels,
                 std::uint64_t seed, DType dtype) {
  Stage stage;
  std::size_t in = in_channels;
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    const std::string name = prefix + ".conv" + std::to_string(b + 1);
    ConvLayer conv;
    conv.weight = make_param(name + ".weight", Shape{spec.channels, in, kKernel, kKernel},
                             in * kKernel * kKernel, seed, dtype);
    conv.bias = make_param(name + ".bias", Shape{spec.channels}, 0, seed, dtype);
    conv.stride = (b == 0 && spec.downsample) ? 2 : 1;
    stage.convs.push_back(std::move(conv));
    in = spec.channels;
  }
  return stage;
}

LinearHead make_head(const std::string& prefix, std::size_t in, std::size_t out,
                     std::uint64_t seed, DType dtype) {
  LinearHead head;
  head.weight = make_param(prefix + ".weight", Shape{in, out}, in, seed, dtype);
  head.bias = make_param(prefix + ".bias", Shape{out}, 0, seed, dtype);
  return head;
}

Tensor run_stage(const Stage& stage, Tensor x) {
  for (const ConvLayer& conv : stage.convs) {
    x = relu(conv2d(x, conv.weight.tensor, conv.bias.tensor, conv.stride, 1));
  }
  return x;
}

Tensor run_head(const LinearHead& head, const Tensor& features) {
  return add_bias(matmul(features, head.weight.tensor), head.bias.tensor);
}

void append_stage(std::vector<Parameter>& out, const Stage& stage) {
  for (const ConvLayer& conv : stage.convs) {
    out.push_back(conv.weight);
    out.push_back(conv.bias);
  }
}

void append_aux(std::vector<Parameter>& out, const AuxClassifier& aux) {
  for (const Stage& s : aux.tail) append_stage(out, s);
  out.push_back(aux.head.weight);
  out.push_back(aux.head.bias);
}

void sort_by_name(std::vector<Parameter>& params) {
  std::sort(params.begin(), params.end(),
            [](const Parameter& a, const Parameter& b) { return a.name < b.name; });
}

}  // namespace

std::uint64_t parameter_seed(std::uint64_t seed, const std::string& name) {
  return splitmix64(splitmix64(seed) ^ fnv1a(name));
}

std::vector<StageSpec> default_stages() {
  return {{2, 16, false}, {2, 32, true}, {2, 64, true}};
}

std::vector<StageSpec> halved(std::span<const StageSpec> stages) {
  std::vector<StageSpec> out(stages.begin(), stages.end());
  for (StageSpec& s : out) s.channels = std::max<std::size_t>(1, s.channels / 2);
  return out;
}

std::vector<StageSpec> parse_stages(const std::string& text) {
  std::vector<StageSpec> out;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ',')) {
    std::stringstream fields(item);
    std::string c, b, d;
    if (!std::getline(fields, c, ':') || !std::getline(fields, b, ':') ||
        !std::getline(fields, d, ':')) {
      throw ConfigError("stages: expected channels:blocks:downsample, got '" + item + "'");
    }
    StageSpec s;
    try {
      s.channels = std::stoul(c);
      s.blocks = std::stoul(b);
    } catch (const std::exception&) {
      throw ConfigError("stages: non-numeric field in '" + item + "'");
    }
    if (d != "0" && d != "1") {
      throw ConfigError("stages: downsample flag must be 0 or 1 in '" + item + "'");
    }
    s.downsample = d == "1";
    if (s.channels == 0 || s.blocks == 0) {
      throw ConfigError("stages: channels and blocks must be >= 1 in '" + item + "'");
    }
    out.push_back(s);
  }
  if (out.empty()) throw ConfigError("stages: empty stage list");
  return out;
}

std::string format_stages(std::span<const StageSpec> stages) {
  std::string out;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(stages[i].channels) + ":" + std::to_string(stages[i].blocks) +
           ":" + (stages[i].downsample ? "1" : "0");
  }
  return out;
}

StagedModel::StagedModel(ModelSpec spec, std::vector<Stage> stages, LinearHead head,
                         std::vector<AuxClassifier> aux)
    : spec_(std::move(spec)),
      stages_(std::move(stages)),
      head_(std::move(head)),
      aux_(std::move(aux)) {}

std::vector<Parameter> StagedModel::parameters() const {
  std::vector<Parameter> out = backbone_parameters();
  for (const AuxClassifier& a : aux_) append_aux(out, a);
  sort_by_name(out);
  return out;
}

std::vector<Parameter> StagedModel::backbone_parameters() const {
  std::vector<Parameter> out;
  for (const Stage& s : stages_) append_stage(out, s);
  out.push_back(head_.weight);
  out.push_back(head_.bias);
  sort_by_name(out);
  return out;
}

std::vector<Parameter> StagedModel::aux_parameters() const {
  std::vector<Parameter> out;
  for (const AuxClassifier& a : aux_) append_aux(out, a);
  sort_by_name(out);
  return out;
}

std::vector<Parameter> StagedModel::aux_parameters(std::size_t l) const {
  std::vector<Parameter> out;
  append_aux(out, aux_.at(l));
  sort_by_name(out);
  return out;
}

std::optional<Parameter> StagedModel::find(const std::string& name) const {
  for (const Parameter& p : parameters()) {
    if (p.name == name) return p;
  }
  return std::nullopt;
}

void StagedModel::set_trainable(bool on) {
  for (Parameter& p : parameters()) p.tensor.set_requires_grad(on);
}

StagedModel build_model(const ModelSpec& spec, std::uint64_t seed, DType dtype) {
  if (spec.stages.empty()) throw ContractError("build_model: empty stage list");
  if (spec.classes == 0 || spec.transforms == 0 || spec.in_channels == 0) {
    throw ContractError("build_model: classes, transforms and in_channels must be >= 1");
  }
  for (const StageSpec& s : spec.stages) {
    if (s.blocks == 0 || s.channels == 0) {
      throw ContractError("build_model: stage blocks and channels must be >= 1");
    }
  }
  const std::size_t L = spec.stages.size();
  std::vector<Stage> stages;
  std::size_t in = spec.in_channels;
  for (std::size_t s = 0; s < L; ++s) {
    stages.push_back(make_stage("backbone.stage" + std::to_string(s + 1), spec.stages[s],
                                in, seed, dtype));
    in = spec.stages[s].channels;
  }
  const std::size_t d = spec.stages.back().channels;
  LinearHead head = make_head("head", d, spec.classes, seed, dtype);

  std::vector<AuxClassifier> aux;
  for (std::size_t l = 0; l < L; ++l) {
    AuxClassifier a;
    const std::string prefix = "aux" + std::to_string(l + 1);
    std::size_t tail_in = spec.stages[l].channels;
    for (std::size_t s = l + 1; s < L; ++s) {
      a.tail.push_back(make_stage(prefix + ".stage" + std::to_string(s + 1), spec.stages[s],
                                  tail_in, seed, dtype));
      tail_in = spec.stages[s].channels;
    }
    a.head = make_head(prefix + ".head", d, spec.classes * spec.transforms, seed, dtype);
    aux.push_back(std::move(a));
  }
  return StagedModel(spec, std::move(stages), std::move(head), std::move(aux));
}

TapOutput forward_taps(const StagedModel& model, const Tensor& batch) {
  const ModelSpec& spec = model.spec();
  if (batch.rank() != 4) {
    throw DimensionError("forward_taps: expected a [B, C, H, W] batch, got " +
                         shape_str(batch.shape()));
  }
  if (batch.dim(1) != spec.in_channels) {
    throw DimensionError("forward_taps: batch axis 1 = " + std::to_string(batch.dim(1)) +
                         " but the model expects " + std::to_string(spec.in_channels) +
                         " input channels");
  }
  std::size_t h = batch.dim(2);
  std::size_t w = batch.dim(3);
  for (std::size_t s = 0; s < spec.stages.size(); ++s) {
    if (spec.stages[s].downsample) {
      if (h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2) {
        throw DimensionError("forward_taps: spatial size " + std::to_string(h) + "x" +
                             std::to_string(w) + " at stage " + std::to_string(s + 1) +
                             " cannot be halved");
      }
      h /= 2;
      w /= 2;
    }
  }
  TapOutput out;
  Tensor x = batch;
  for (const Stage& stage : model.stages()) {
    x = run_stage(stage, x);
    out.taps.push_back(x);
  }
  out.embedding = global_avg_pool(x);
  out.class_logits = run_head(model.head(), out.embedding);
  return out;
}

std::vector<Tensor> aux_forward(const StagedModel& model, std::span<const Tensor> taps,
                                bool detach_taps) {
  if (taps.size() != model.stage_count()) {
    throw ContractError("aux_forward: got " + std::to_string(taps.size()) +
                        " taps for a model with " + std::to_string(model.stage_count()) +
                        " stages");
  }
  std::vector<Tensor> logits;
  logits.reserve(taps.size());
  for (std::size_t l = 0; l < taps.size(); ++l) {
    const Tensor tap = detach_taps ? taps[l].detach() : taps[l];
    const Tensor feat = run_aux_tail(model, l, tap);
    logits.push_back(run_head(model.aux()[l].head, global_avg_pool(feat)));
  }
  return logits;
}

Tensor run_backbone_stages(const StagedModel& model, std::size_t from,
                           const Tensor& features) {
  Tensor x = features;
  for (std::size_t s = from; s < model.stage_count(); ++s) x = run_stage(model.stages()[s], x);
  return x;
}

Tensor run_aux_tail(const StagedModel& model, std::size_t l, const Tensor& tap) {
  Tensor x = tap;
  for (const Stage& s : model.aux().at(l).tail) x = run_stage(s, x);
  return x;
}

std::size_t stage_parameter_count(std::span<const StageSpec> stages,
                                  std::size_t in_channels) {
  std::size_t total = 0;
  std::size_t in = in_channels;
  for (const StageSpec& s : stages) {
    for (std::size_t b = 0; b < s.blocks; ++b) {
      total += s.channels * in * kKernel * kKernel + s.channels;
      in = s.channels;
    }
  }
  return total;
}

}  // namespace hsakd
