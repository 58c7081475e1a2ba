#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssd/real.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tensor;
struct TapeNode;

/// Flat value storage shared between a tensor and its reshaped views. The
/// version counter is bumped on every in-place write so that recorded
/// operations can detect that a saved input changed underneath them.
struct Storage {
  std::vector<Real> values;
  std::uint64_t version = 0;
};

struct TensorImpl {
  Shape shape;
  std::shared_ptr<Storage> storage;
  bool requires_grad = false;
  std::shared_ptr<TapeNode> grad_fn;
  std::optional<std::vector<Real>> grad;
};

/// Backward rule of a recorded operation. Receives the gradient of the
/// operation's output and a mask of which inputs need a gradient; returns one
/// tensor per input (undefined where not needed). Rules are written in terms
/// of differentiable ops, so running them with recording enabled yields a
/// gradient that can itself be differentiated.
using BackwardFn =
    std::function<std::vector<Tensor>(const Tensor& grad_output, const std::vector<bool>& needs)>;

/// One entry of the computation tape. `seq` is the recording position; every
/// input was recorded with a smaller sequence number than the node using it.
struct TapeNode {
  std::uint64_t seq = 0;
  std::string op;
  std::vector<Tensor> inputs;
  std::vector<std::uint64_t> saved_versions;
  BackwardFn backward;
};

/// Dense row-major tensor participating in the computation tape.
///
/// Tensors are cheap handles; copies alias the same node. Values are
/// immutable once recorded on a tape; `assign` is reserved for leaves
/// (parameters, optimized pixels) and invalidates any tape that saved them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;

  std::span<const Real> data() const;
  std::vector<Real> to_vector() const;
  Real item() const;
  Real operator[](std::int64_t flat_index) const { return data()[static_cast<std::size_t>(flat_index)]; }

  bool requires_grad() const;
  bool is_leaf() const;
  /// Marks a leaf tensor as a differentiation variable.
  Tensor& set_requires_grad(bool value);
  const std::shared_ptr<TapeNode>& grad_fn() const;

  /// New leaf sharing no history (values copied).
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  /// In-place overwrite of a leaf's values. Bumps the storage version.
  void assign(std::span<const Real> values);
  std::uint64_t version() const;

  /// Accumulated gradient populated by `backward()`; same shape as the tensor.
  std::optional<Tensor> grad() const;
  void zero_grad();
  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<Storage>& storage() const;

  static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

bool grad_enabled();

/// Disables tape recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Sets recording to a specific state on this thread for its lifetime.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// Builds the output of an operation and records it on the tape when
/// recording is enabled and any input requires a gradient.
Tensor record(const char* op, Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
              BackwardFn backward);

/// Same as `record` but the result aliases an existing storage (views).
Tensor record_view(const char* op, Shape shape, std::shared_ptr<Storage> storage,
                   std::vector<Tensor> inputs, BackwardFn backward);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
