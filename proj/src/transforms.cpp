// SPDX-License-Identifier: Apache-2.0
#include "hsakd/transforms.hpp"

#include <string>

namespace hsakd {

LabelSpace::LabelSpace(std::size_t classes, std::size_t transforms)
    : classes_(classes), transforms_(transforms) {
  if (classes == 0 || transforms == 0) {
    throw ContractError("LabelSpace: class and transform counts must be >= 1");
  }
}

std::size_t joint_label(std::size_t y, std::size_t j, const LabelSpace& space) {
  if (y >= space.classes()) {
    throw ContractError("joint_label: class " + std::to_string(y) + " >= N = " +
                        std::to_string(space.classes()));
  }
  if (j >= space.transforms()) {
    throw ContractError("joint_label: transform " + std::to_string(j) + " >= M = " +
                        std::to_string(space.transforms()));
  }
  return y * space.transforms() + j;
}

std::pair<std::size_t, std::size_t> split_label(std::size_t k, const LabelSpace& space) {
  if (k >= space.size()) {
    throw ContractError("split_label: joint index " + std::to_string(k) +
                        " >= N*M = " + std::to_string(space.size()));
  }
  return {k / space.transforms(), k % space.transforms()};
}

template <class T>
std::vector<T> rotate_quarter(std::span<const T> image, std::size_t channels,
                              std::size_t height, std::size_t width, int turns) {
  if (height != width) {
    throw DimensionError("rotate_quarter: image is " + std::to_string(height) + "x" +
                         std::to_string(width) + ", rotation needs a square image");
  }
  if (turns < 0 || turns > 3) {
    throw ContractError("rotate_quarter: turns must be in 0..3, got " +
                        std::to_string(turns));
  }
  if (image.size() != channels * height * width) {
    throw DimensionError("rotate_quarter: buffer of " + std::to_string(image.size()) +
                         " values does not match C*H*W");
  }
  const std::size_t n = width;
  std::vector<T> out(image.begin(), image.end());
  if (turns == 0) return out;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = image.data() + c * n * n;
    T* dst = out.data() + c * n * n;
    for (std::size_t x = 0; x < n; ++x) {
      for (std::size_t y = 0; y < n; ++y) {
        std::size_t sx = x;
        std::size_t sy = y;
        // Undo `turns` counter-clockwise steps: one step reads (y, n-1-x).
        for (int t = 0; t < turns; ++t) {
          const std::size_t nx = sy;
          const std::size_t ny = n - 1 - sx;
          sx = nx;
          sy = ny;
        }
        dst[x * n + y] = src[sx * n + sy];
      }
    }
  }
  return out;
}

template std::vector<float> rotate_quarter<float>(std::span<const float>, std::size_t,
                                                  std::size_t, std::size_t, int);
template std::vector<double> rotate_quarter<double>(std::span<const double>, std::size_t,
                                                    std::size_t, std::size_t, int);
template std::vector<std::uint8_t> rotate_quarter<std::uint8_t>(
    std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t, int);

TransformSet::TransformSet(std::size_t count) : count_(count) {
  if (count == 0 || count > 4) {
    throw ContractError("TransformSet: supports 1..4 quarter-rotations, got " +
                        std::to_string(count));
  }
}

int TransformSet::turns(std::size_t j) const {
  if (j >= count_) {
    throw ContractError("TransformSet: transform index " + std::to_string(j) +
                        " >= M = " + std::to_string(count_));
  }
  return static_cast<int>(j);
}

}  // namespace hsakd
