// SPDX-License-Identifier: Apache-2.0
#include "hsakd/tensor.hpp"

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace hsakd {

std::string_view dtype_name(DType dtype) noexcept {
  return dtype == DType::f32 ? "f32" : "f64";
}

std::size_t shape_numel(const Shape& shape) noexcept {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string_view primitive_name(Primitive kind) noexcept {
  switch (kind) {
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "mul";
    case Primitive::mul_scalar: return "mul_scalar";
    case Primitive::add_bias: return "add_bias";
    case Primitive::matmul: return "matmul";
    case Primitive::conv2d: return "conv2d";
    case Primitive::relu: return "relu";
    case Primitive::global_avg_pool: return "global_avg_pool";
    case Primitive::max_pool2d: return "max_pool2d";
    case Primitive::reshape: return "reshape";
    case Primitive::log_softmax: return "log_softmax";
    case Primitive::gather_rows: return "gather_rows";
    case Primitive::index_rows: return "index_rows";
    case Primitive::reduce_mean: return "reduce_mean";
    case Primitive::reduce_sum: return "reduce_sum";
    case Primitive::kl_div: return "kl_div";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Storage

Storage::Storage(DType dtype, std::size_t n) {
  if (dtype == DType::f32) {
    values_ = std::vector<float>(n, 0.0f);
  } else {
    values_ = std::vector<double>(n, 0.0);
  }
}

std::size_t Storage::size() const noexcept {
  return std::visit([](const auto& v) { return v.size(); }, values_);
}

double Storage::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); },
                    values_);
}

void Storage::set(std::size_t i, double value) {
  std::visit(
      [i, value](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        v.at(i) = static_cast<T>(value);
      },
      values_);
}

void Storage::fill(double value) {
  std::visit(
      [value](auto& v) {
        using T = typename std::decay_t<decltype(v)>::value_type;
        std::fill(v.begin(), v.end(), static_cast<T>(value));
      },
      values_);
}

Storage Storage::converted(DType dtype) const {
  if (dtype == this->dtype()) return *this;
  Storage out(dtype, size());
  for (std::size_t i = 0; i < size(); ++i) out.set(i, get(i));
  return out;
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  const std::size_t n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->data = Storage(dtype, n);
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = zeros(std::move(shape), dtype);
  t.impl_->data.fill(value);
  return t;
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values,
                           DType dtype) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("from_values: " + std::to_string(values.size()) +
                         " values do not fill shape " + shape_str(shape));
  }
  Tensor t = zeros(std::move(shape), dtype);
  for (std::size_t i = 0; i < values.size(); ++i) t.impl_->data.set(i, values[i]);
  return t;
}

Tensor Tensor::from_storage(Shape shape, Storage data) {
  if (data.size() != shape_numel(shape)) {
    throw DimensionError("from_storage: " + std::to_string(data.size()) +
                         " values do not fill shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, DType dtype) {
  return full(Shape{}, value, dtype);
}

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) {
    throw ContractError("set_requires_grad: only leaf tensors can be toggled");
  }
  impl_->requires_grad = on;
  return *this;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item: tensor of shape " + shape_str(shape()) +
                        " is not a scalar");
  }
  return impl_->data.get(0);
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = impl_->data.get(i);
  return out;
}

const Storage& Tensor::grad() const {
  if (!impl_->grad) throw ContractError("grad: tensor has no gradient");
  return *impl_->grad;
}

std::vector<double> Tensor::grad_vector() const {
  const Storage& g = grad();
  std::vector<double> out(g.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.get(i);
  return out;
}

void Tensor::zero_grad() {
  if (impl_->grad) impl_->grad->fill(0.0);
}

Tensor Tensor::detach() const {
  return from_storage(impl_->shape, impl_->data);
}

Tensor Tensor::to(DType dtype) const {
  return from_storage(impl_->shape, impl_->data.converted(dtype));
}

// ---------------------------------------------------------------------------
// Tape

namespace {

thread_local bool t_grad_enabled = true;

#ifdef __GLIBC__
// Activation buffers of a few MB are allocated and freed every step. Keeping
// them on the heap instead of fresh mmap regions avoids a page-fault storm.
const bool g_allocator_tuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 256 << 20);
  return true;
}();
#endif
std::atomic<std::uint64_t> g_next_seq{1};

void check_finite(Primitive kind, const Storage& data) {
  dispatch_dtype(data.dtype(), [&]<typename T>() {
    const auto v = data.template span<T>();
    // x - x is 0 for finite x and NaN otherwise; the sum is NaN iff any
    // element is non-finite and the loop vectorizes
    T probe = 0;
    for (std::size_t i = 0; i < v.size(); ++i) probe += v[i] - v[i];
    if (probe == T(0)) return;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        throw NumericError(std::string(primitive_name(kind)) +
                           ": non-finite output at flat index " +
                           std::to_string(i));
      }
    }
  });
}

}  // namespace

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) {
  t_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

namespace detail {

Tensor record(Primitive kind, Shape shape, Storage data,
              std::vector<Tensor> inputs, Node::BackwardFn backward_fn) {
  check_finite(kind, data);
  Tensor out = Tensor::from_storage(std::move(shape), std::move(data));
  if (!t_grad_enabled) return out;
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) {
                                   return t.defined() && t.requires_grad();
                                 });
  if (!needs) return out;
  auto node = std::make_shared<Node>();
  node->seq = g_next_seq.fetch_add(1);
  node->kind = kind;
  node->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl_ptr());
  node->output = out.impl();
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->producer = std::move(node);
  return out;
}

Storage& grad_buffer(TensorImpl& impl) {
  if (!impl.grad) impl.grad = Storage(impl.data.dtype(), impl.data.size());
  return *impl.grad;
}

}  // namespace detail

std::vector<const Node*> reachable_tape(const Tensor& root) {
  std::vector<const Node*> nodes;
  if (!root.defined() || !root.impl()->producer) return nodes;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack{root.impl()->producer.get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& in : n->inputs) {
      if (!in || !in->producer) continue;
      if (seen.insert(in->producer.get()).second) {
        stack.push_back(in->producer.get());
      }
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  return nodes;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  }
  if (!loss.impl()->producer) {
    throw ContractError("backward: loss has an empty tape");
  }
  const std::vector<const Node*> order = reachable_tape(loss);
  TensorImpl& root = *loss.impl();
  detail::grad_buffer(root).fill(0.0);
  root.grad->set(0, 1.0);
  for (const Node* node : order) {
    TensorImpl& out = *node->output;
    if (!out.grad) continue;
    node->backward(*out.grad, node->inputs);
    out.grad.reset();
  }
}

}  // namespace hsakd
