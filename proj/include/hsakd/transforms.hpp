// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "hsakd/errors.hpp"

namespace hsakd {

/// Joint (class x transform) label space with class-major indexing:
/// k = y * M + j.
class LabelSpace {
 public:
  LabelSpace(std::size_t classes, std::size_t transforms);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t transforms() const noexcept { return transforms_; }
  std::size_t size() const noexcept { return classes_ * transforms_; }

 private:
  std::size_t classes_;
  std::size_t transforms_;
};

std::size_t joint_label(std::size_t y, std::size_t j, const LabelSpace& space);
std::pair<std::size_t, std::size_t> split_label(std::size_t k, const LabelSpace& space);

/// Rotates a C x side x side image (channel-major) counter-clockwise by
/// turns * 90 degrees. One turn moves input pixel (x, y) to output position
/// (W-1-y, x), where x is the row and y the column.
template <class T>
std::vector<T> rotate_quarter(std::span<const T> image, std::size_t channels,
                              std::size_t height, std::size_t width, int turns);

/// The self-supervised transform set: the first M quarter-rotations, with
/// entry 0 the identity.
class TransformSet {
 public:
  explicit TransformSet(std::size_t count = 4);

  std::size_t size() const noexcept { return count_; }
  int turns(std::size_t j) const;

  template <class T>
  std::vector<T> apply(std::size_t j, std::span<const T> image, std::size_t channels,
                       std::size_t side) const {
    return rotate_quarter<T>(image, channels, side, side, turns(j));
  }

 private:
  std::size_t count_;
};

extern template std::vector<float> rotate_quarter<float>(std::span<const float>, std::size_t,
                                                         std::size_t, std::size_t, int);
extern template std::vector<double> rotate_quarter<double>(std::span<const double>,
                                                           std::size_t, std::size_t,
                                                           std::size_t, int);
extern template std::vector<std::uint8_t> rotate_quarter<std::uint8_t>(
    std::span<const std::uint8_t>, std::size_t, std::size_t, std::size_t, int);

}  // namespace hsakd
