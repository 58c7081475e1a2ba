#include "ssd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

#include "ssd/autograd.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<std::uint64_t> g_next_seq{1};

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                     " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<Storage>();
  impl->storage->values = std::move(values);
  impl->requires_grad = requires_grad;
  return impl;
}

const TensorImpl& checked(const TensorImpl* impl) {
  if (impl == nullptr) throw std::logic_error("tensor: use of an undefined tensor");
  return *impl;
}

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  return from_impl(make_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), Real(0), requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = static_cast<std::size_t>(ssd::numel(shape));
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return checked(impl_.get()).shape; }

std::int64_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + to_string(s));
  return s[axis];
}

std::int64_t Tensor::numel() const { return ssd::numel(shape()); }

std::span<const Real> Tensor::data() const { return checked(impl_.get()).storage->values; }

std::vector<Real> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return data()[0];
}

bool Tensor::requires_grad() const { return checked(impl_.get()).requires_grad; }

bool Tensor::is_leaf() const { return checked(impl_.get()).grad_fn == nullptr; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw AutogradError("set_requires_grad: only leaf tensors can change requires_grad");
  impl_->requires_grad = value;
  return *this;
}

const std::shared_ptr<TapeNode>& Tensor::grad_fn() const { return checked(impl_.get()).grad_fn; }

const std::shared_ptr<Storage>& Tensor::storage() const { return checked(impl_.get()).storage; }

Tensor Tensor::detach() const { return from(shape(), to_vector(), false); }

void Tensor::assign(std::span<const Real> values) {
  const auto& self = checked(impl_.get());
  if (!is_leaf()) throw AutogradError("assign: in-place write to a recorded (non-leaf) tensor");
  if (static_cast<std::int64_t>(values.size()) != numel()) {
    throw ShapeError("assign: expected " + std::to_string(numel()) + " values, got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), self.storage->values.begin());
  ++self.storage->version;
}

std::uint64_t Tensor::version() const { return storage()->version; }

std::optional<Tensor> Tensor::grad() const {
  const auto& self = checked(impl_.get());
  if (!self.grad) return std::nullopt;
  return from(self.shape, *self.grad);
}

void Tensor::zero_grad() {
  checked(impl_.get());
  impl_->grad.reset();
}

void Tensor::backward() const {
  if (!requires_grad()) throw AutogradError("backward: tensor does not require grad");
  // Collect reachable leaves that require a gradient.
  std::vector<Tensor> leaves;
  std::vector<const TapeNode*> stack;
  std::vector<const TapeNode*> visited;
  if (is_leaf()) {
    leaves.push_back(*this);
  } else {
    stack.push_back(grad_fn().get());
  }
  while (!stack.empty()) {
    const TapeNode* node = stack.back();
    stack.pop_back();
    if (std::find(visited.begin(), visited.end(), node) != visited.end()) continue;
    visited.push_back(node);
    for (const auto& in : node->inputs) {
      if (!in.requires_grad()) continue;
      if (in.is_leaf()) {
        auto same = [&](const Tensor& t) { return t.impl() == in.impl(); };
        if (std::none_of(leaves.begin(), leaves.end(), same)) leaves.push_back(in);
      } else {
        stack.push_back(in.grad_fn().get());
      }
    }
  }
  auto grads = ssd::grad(*this, leaves, {});
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    auto& slot = leaves[i].impl()->grad;
    auto g = grads[i].data();
    if (!slot) {
      slot.emplace(g.begin(), g.end());
    } else {
      for (std::size_t j = 0; j < g.size(); ++j) (*slot)[j] += g[j];
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

namespace {

Tensor attach(std::shared_ptr<TensorImpl> impl, const char* op, std::vector<Tensor> inputs, BackwardFn backward) {
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                   [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    auto node = std::make_shared<TapeNode>();
    node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
    node->op = op;
    node->saved_versions.reserve(inputs.size());
    for (const auto& in : inputs) node->saved_versions.push_back(in.version());
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor::from_impl(std::move(impl));
}

}  // namespace

Tensor record(const char* op, Shape shape, std::vector<Real> values, std::vector<Tensor> inputs, BackwardFn backward) {
  return attach(make_impl(std::move(shape), std::move(values), false), op, std::move(inputs), std::move(backward));
}

Tensor record_view(const char* op, Shape shape, std::shared_ptr<Storage> storage, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  if (numel(shape) != static_cast<std::int64_t>(storage->values.size())) {
    throw ShapeError(std::string(op) + ": view shape " + to_string(shape) + " does not match storage size");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::move(storage);
  return attach(std::move(impl), op, std::move(inputs), std::move(backward));
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
