#pragma once

#include <span>
#include <vector>

#include "ssd/tensor.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

struct GradOptions {
  /// Record the backward pass so the returned gradients are differentiable.
  bool create_graph = false;
  /// Return zeros for inputs the loss does not depend on instead of failing.
  bool allow_unused = false;
};

/// Gradients of a scalar `loss` with respect to each tensor in `wrt`.
///
/// Throws AutogradError when the loss is not a scalar, when a `wrt` tensor is
/// unreachable (unless allow_unused), or when a saved input was modified
/// after it was recorded.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> wrt, GradOptions options = {});

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
