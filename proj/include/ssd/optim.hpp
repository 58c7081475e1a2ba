#pragma once

#include <span>
#include <vector>

#include "ssd/tensor.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

/// Stochastic gradient descent with optional heavy-ball momentum:
///   v <- momentum * v + g;  p <- p - lr * v
/// With momentum 0 the update is exactly p - lr * g.
///
/// Velocity buffers are bound positionally to the parameters passed to the
/// first `step`; later calls must pass parameters of the same shapes.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(Real learning_rate, Real momentum = Real(0));

  void step(std::span<Tensor> params, std::span<const Tensor> grads);
  /// Drops all velocity buffers.
  void reset() { velocity_.clear(); }

  Real learning_rate() const { return learning_rate_; }
  void set_learning_rate(Real lr) { learning_rate_ = lr; }
  Real momentum() const { return momentum_; }
  const std::vector<std::vector<Real>>& velocity() const { return velocity_; }

 private:
  Real learning_rate_;
  Real momentum_;
  std::vector<std::vector<Real>> velocity_;
};

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
