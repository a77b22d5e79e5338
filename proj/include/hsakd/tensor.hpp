// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// Every primitive in ops.hpp produces a fresh Tensor. When gradient recording
// is enabled and any input requires a gradient, the primitive also records a
// Node holding its inputs and a backward rule. Nodes carry a global sequence
// number, so the execution order of primitives is a topological order of the
// graph and backward() replays reachable nodes in descending sequence.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hsakd/errors.hpp"

namespace hsakd {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

std::string_view dtype_name(DType dtype) noexcept;

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_str(const Shape& shape);

/// Contiguous typed value buffer (float or double).
class Storage {
 public:
  Storage() = default;
  Storage(DType dtype, std::size_t n);
  explicit Storage(std::vector<float> values) : values_(std::move(values)) {}
  explicit Storage(std::vector<double> values) : values_(std::move(values)) {}

  DType dtype() const noexcept {
    return values_.index() == 0 ? DType::f32 : DType::f64;
  }
  std::size_t size() const noexcept;

  template <class T>
  std::span<T> span() {
    return std::get<std::vector<T>>(values_);
  }
  template <class T>
  std::span<const T> span() const {
    return std::get<std::vector<T>>(values_);
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double v);
  void fill(double v);
  Storage converted(DType dtype) const;

  bool operator==(const Storage& other) const = default;

 private:
  std::variant<std::vector<float>, std::vector<double>> values_;
};

/// Invokes `fn.template operator()<T>()` with T = float or double.
template <class Fn>
decltype(auto) dispatch_dtype(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

enum class Primitive : std::uint8_t {
  add,
  sub,
  mul,
  mul_scalar,
  add_bias,
  matmul,
  conv2d,
  relu,
  global_avg_pool,
  max_pool2d,
  reshape,
  log_softmax,
  gather_rows,
  index_rows,
  reduce_mean,
  reduce_sum,
  kl_div,
};

std::string_view primitive_name(Primitive kind) noexcept;

struct TensorImpl;

/// One executed primitive on the gradient tape.
struct Node {
  using BackwardFn = std::function<void(
      const Storage& grad_out,
      std::span<const std::shared_ptr<TensorImpl>> inputs)>;

  std::uint64_t seq = 0;
  Primitive kind{};
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  TensorImpl* output = nullptr;  // non-owning; the output owns this node
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Storage data;
  std::optional<Storage> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> producer;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::f32);
  static Tensor from_storage(Shape shape, Storage data);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  DType dtype() const { return impl_->data.dtype(); }

  bool requires_grad() const { return impl_->requires_grad; }
  /// Only valid on leaves (tensors not produced by a recorded primitive).
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const { return impl_->producer == nullptr; }

  const Storage& storage() const { return impl_->data; }
  /// Mutable access for leaves (optimizer updates, initialization).
  Storage& mutable_storage() { return impl_->data; }

  template <class T>
  std::span<const T> data() const {
    return impl_->data.template span<T>();
  }
  template <class T>
  std::span<T> mutable_data() {
    return impl_->data.template span<T>();
  }

  double at(std::size_t flat) const { return impl_->data.get(flat); }
  double item() const;
  std::vector<double> to_vector() const;

  bool has_grad() const { return impl_->grad.has_value(); }
  const Storage& grad() const;
  std::vector<double> grad_vector() const;
  /// Sets an existing gradient buffer to zero; absent gradients stay absent.
  void zero_grad();
  /// Drops the gradient buffer entirely.
  void clear_grad() { impl_->grad.reset(); }

  /// Copy with no tape history and requires_grad = false.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const noexcept {
    return impl_;
  }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Named trainable tensor, e.g. "backbone.stage2.conv1.weight".
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Whether primitives currently record tape entries (thread-local).
bool grad_enabled() noexcept;

/// Disables tape recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls until zeroed; intermediate gradients are released after use.
void backward(const Tensor& loss);

/// Nodes reachable from `root`, in the order backward() visits them.
std::vector<const Node*> reachable_tape(const Tensor& root);

namespace detail {

// Builds the output tensor of a primitive, checking finiteness and recording
// a tape node when required.
Tensor record(Primitive kind, Shape shape, Storage data,
              std::vector<Tensor> inputs, Node::BackwardFn backward);

// Adds into the gradient buffer of `impl`, allocating zeros on first use.
Storage& grad_buffer(TensorImpl& impl);

}  // namespace detail

}  // namespace hsakd
