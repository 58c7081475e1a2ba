#include "ssd/optim.hpp"

#include <stdexcept>
#include <string>

namespace ssd {
inline namespace SSD_PRECISION_NS {

SgdOptimizer::SgdOptimizer(Real learning_rate, Real momentum) : learning_rate_(learning_rate), momentum_(momentum) {
  if (learning_rate < 0) throw std::invalid_argument("sgd: learning rate must be non-negative");
  if (momentum < 0) throw std::invalid_argument("sgd: momentum must be non-negative");
}

void SgdOptimizer::step(std::span<Tensor> params, std::span<const Tensor> grads) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("sgd: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  if (!velocity_.empty() && velocity_.size() != params.size()) {
    throw std::invalid_argument("sgd: optimizer manages " + std::to_string(velocity_.size()) +
                                " parameters, step called with " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].defined()) throw std::invalid_argument("sgd: missing gradient for parameter " + std::to_string(i));
    if (grads[i].shape() != params[i].shape()) {
      throw ShapeError("sgd: gradient " + to_string(grads[i].shape()) + " does not match parameter " +
                       to_string(params[i].shape()));
    }
    if (!velocity_.empty() && static_cast<std::int64_t>(velocity_[i].size()) != params[i].numel()) {
      throw ShapeError("sgd: velocity buffer " + std::to_string(i) + " does not match parameter " +
                       to_string(params[i].shape()));
    }
  }
  if (velocity_.empty() && momentum_ != Real(0)) {
    for (const auto& p : params) velocity_.emplace_back(static_cast<std::size_t>(p.numel()), Real(0));
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].to_vector();
    const auto g = grads[i].data();
    if (momentum_ == Real(0)) {
      for (std::size_t j = 0; j < values.size(); ++j) values[j] -= learning_rate_ * g[j];
    } else {
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j];
        values[j] -= learning_rate_ * v[j];
      }
    }
    params[i].assign(values);
  }
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
