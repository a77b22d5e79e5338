// SPDX-License-Identifier: Apache-2.0
#include "hsakd/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "byte_io.hpp"

namespace hsakd {
namespace {

constexpr std::string_view kMagic = "HSKD-DS1";
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPattern = 8;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool equals_own_rotation(const std::vector<double>& tmpl, std::size_t channels,
                         std::size_t side) {
  for (int turns = 1; turns <= 3; ++turns) {
    const auto rotated = rotate_quarter<double>(tmpl, channels, side, side, turns);
    double worst = 0.0;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
      worst = std::max(worst, std::abs(rotated[i] - tmpl[i]));
    }
    if (worst < 1e-3) return true;
  }
  return false;
}

}  // namespace

void Dataset::validate() const {
  if (classes == 0) throw ContractError("dataset: class count must be >= 1");
  if (channels == 0 || side == 0) throw ContractError("dataset: empty image geometry");
  if (pixels.size() != labels.size() * image_size()) {
    throw ContractError("dataset: pixel buffer does not match sample count");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw ContractError("dataset: label " + std::to_string(labels[i]) + " of sample " +
                          std::to_string(i) + " >= N = " + std::to_string(classes));
    }
  }
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  ds.validate();
  io::ByteWriter w;
  w.text(kMagic);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.classes));
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.channels));
  w.u32(static_cast<std::uint32_t>(ds.side));
  w.u32(static_cast<std::uint32_t>(ds.side));
  for (std::uint16_t l : ds.labels) w.u16(l);
  w.bytes(ds.pixels);
  return std::move(w.buffer());
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes, SplitTag split) {
  io::ByteReader r(bytes, "dataset");
  if (r.text(kMagic.size(), "magic") != kMagic) {
    throw FormatError("dataset: bad magic (expected HSKD-DS1) at byte offset 0");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
  Dataset ds;
  ds.split = split;
  ds.classes = r.u32("class count");
  const std::uint32_t count = r.u32("sample count");
  ds.channels = r.u32("channels");
  const std::uint32_t h = r.u32("height");
  const std::uint32_t w = r.u32("width");
  if (h != w) r.fail("non-square images " + std::to_string(h) + "x" + std::to_string(w));
  if (ds.classes == 0 || ds.channels == 0 || h == 0) r.fail("zero-sized header field");
  ds.side = h;
  const std::size_t label_bytes = static_cast<std::size_t>(count) * 2;
  const std::size_t pixel_bytes = static_cast<std::size_t>(count) * ds.image_size();
  if (r.remaining() != label_bytes + pixel_bytes) {
    r.fail("payload of " + std::to_string(r.remaining()) + " bytes does not match " +
           std::to_string(count) + " samples (" + std::to_string(label_bytes + pixel_bytes) +
           " bytes expected)");
  }
  ds.labels.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    ds.labels[i] = r.u16("labels");
    if (ds.labels[i] >= ds.classes) {
      r.fail("label " + std::to_string(ds.labels[i]) + " >= N = " + std::to_string(ds.classes));
    }
  }
  const auto px = r.bytes(pixel_bytes, "pixels");
  ds.pixels.assign(px.begin(), px.end());
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(ds));
}

Dataset read_dataset(const std::filesystem::path& path, SplitTag split) {
  const auto bytes = io::read_file(path);
  try {
    return decode_dataset(bytes, split);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::uint64_t dataset_hash(const Dataset& ds) { return io::fnv1a(encode_dataset(ds)); }

std::vector<std::vector<double>> synth_templates(const SynthOptions& opt) {
  if (opt.classes < 2) throw ContractError("synth_generate: need at least 2 classes");
  if (opt.side < 16) throw ContractError("synth_generate: side must be >= 16");
  if (opt.channels == 0) throw ContractError("synth_generate: channels must be >= 1");
  std::mt19937_64 rng(mix(opt.seed, 0x7e3a11a7e5ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t side = opt.side;
  std::vector<std::vector<double>> templates;
  for (std::size_t c = 0; c < opt.classes; ++c) {
    std::vector<double> tmpl;
    do {
      std::vector<double> pattern(opt.channels * kPattern * kPattern);
      for (double& v : pattern) v = unit(rng);
      tmpl.assign(opt.channels * side * side, 0.0);
      for (std::size_t ch = 0; ch < opt.channels; ++ch) {
        for (std::size_t y = 0; y < side; ++y) {
          for (std::size_t x = 0; x < side; ++x) {
            const std::size_t py = y * kPattern / side;
            const std::size_t px = x * kPattern / side;
            tmpl[(ch * side + y) * side + x] = pattern[(ch * kPattern + py) * kPattern + px];
          }
        }
      }
    } while (equals_own_rotation(tmpl, opt.channels, side));
    templates.push_back(std::move(tmpl));
  }
  return templates;
}

Dataset synth_generate(const SynthOptions& opt) {
  if (opt.per_class == 0) throw ContractError("synth_generate: per_class must be >= 1");
  if (opt.noise_std < 0.0) throw ContractError("synth_generate: noise_std must be >= 0");
  const auto templates = synth_templates(opt);
  Dataset ds;
  ds.classes = opt.classes;
  ds.channels = opt.channels;
  ds.side = opt.side;
  ds.split = opt.split;
  const std::size_t total = opt.classes * opt.per_class;
  ds.labels.resize(total);
  ds.pixels.resize(total * ds.image_size());
  std::mt19937_64 rng(mix(opt.seed, opt.split == SplitTag::train ? 0x11 : 0x22));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < total; ++i) {
    const std::size_t y = i % opt.classes;
    ds.labels[i] = static_cast<std::uint16_t>(y);
    std::uint8_t* dst = ds.pixels.data() + i * ds.image_size();
    for (std::size_t p = 0; p < ds.image_size(); ++p) {
      const double v = templates[y][p] + opt.noise_std * noise(rng);
      dst[p] = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * v), 0L, 255L));
    }
  }
  return ds;
}

std::vector<std::size_t> ExpandedBatch::identity_rows() const {
  std::vector<std::size_t> rows(samples);
  for (std::size_t i = 0; i < samples; ++i) rows[i] = i * transforms;
  return rows;
}

ExpandedBatch expand_batch(const Dataset& ds, std::span<const std::size_t> indices,
                           const TransformSet& transforms, const LabelSpace& space) {
  if (space.transforms() != transforms.size()) {
    throw ContractError("expand_batch: label space M = " + std::to_string(space.transforms()) +
                        " but transform set has " + std::to_string(transforms.size()));
  }
  if (space.classes() != ds.classes) {
    throw ContractError("expand_batch: label space N does not match dataset");
  }
  const std::size_t m = transforms.size();
  const std::size_t per = ds.image_size();
  ExpandedBatch batch;
  batch.samples = indices.size();
  batch.transforms = m;
  Storage data(DType::f32, indices.size() * m * per);
  auto out = data.span<float>();
  std::vector<float> img(per);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) {
      throw ContractError("expand_batch: sample index " + std::to_string(indices[i]) +
                          " out of range");
    }
    const auto src = ds.image(indices[i]);
    for (std::size_t p = 0; p < per; ++p) img[p] = static_cast<float>(src[p]) / 255.0f;
    const std::size_t y = ds.labels[indices[i]];
    for (std::size_t j = 0; j < m; ++j) {
      const auto rotated = transforms.apply<float>(j, img, ds.channels, ds.side);
      std::copy(rotated.begin(), rotated.end(), out.begin() + (i * m + j) * per);
      batch.joint_labels.push_back(joint_label(y, j, space));
      batch.class_labels.push_back(y);
      batch.transform_ids.push_back(j);
    }
  }
  batch.images = Tensor::from_storage(
      Shape{indices.size() * m, ds.channels, ds.side, ds.side}, std::move(data));
  return batch;
}

Tensor image_batch(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t per = ds.image_size();
  Storage data(DType::f32, indices.size() * per);
  auto out = data.span<float>();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ds.size()) {
      throw ContractError("image_batch: sample index " + std::to_string(indices[i]) +
                          " out of range");
    }
    const auto src = ds.image(indices[i]);
    for (std::size_t p = 0; p < per; ++p) out[i * per + p] = static_cast<float>(src[p]) / 255.0f;
  }
  return Tensor::from_storage(Shape{indices.size(), ds.channels, ds.side, ds.side},
                              std::move(data));
}

std::vector<std::size_t> few_shot_indices(const Dataset& ds, double fraction,
                                          std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ContractError("few_shot_split: fraction must lie in (0, 1]");
  }
  if (ds.split != SplitTag::train) {
    throw ContractError("few_shot_split: only training splits may be subsampled");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::vector<std::size_t> keep;
  for (auto& [cls, idx] : by_class) {
    std::mt19937_64 rng(mix(seed, cls + 1));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 1e-9)));
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

Dataset few_shot_split(const Dataset& ds, double fraction, std::uint64_t seed) {
  const auto keep = few_shot_indices(ds, fraction, seed);
  return subset(ds, keep);
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out;
  out.classes = ds.classes;
  out.channels = ds.channels;
  out.side = ds.side;
  out.split = ds.split;
  out.labels.reserve(indices.size());
  out.pixels.reserve(indices.size() * ds.image_size());
  for (std::size_t i : indices) {
    if (i >= ds.size()) throw ContractError("subset: index out of range");
    out.labels.push_back(ds.labels[i]);
    const auto img = ds.image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
  }
  return out;
}

}  // namespace hsakd
