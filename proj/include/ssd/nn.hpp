#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssd/ops.hpp"
#include "ssd/rng.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Non-trainable per-layer state (batch-norm running statistics).
struct NamedBuffer {
  std::string name;
  std::vector<Real>* values;
};

/// Kaiming-uniform bound sqrt(6 / fan_in) (relu gain).
std::vector<Real> kaiming_uniform(std::int64_t count, std::int64_t fan_in, Rng& rng);

struct Conv2d {
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride,
         std::int64_t padding, bool with_bias);

  Tensor forward(const Tensor& x) const;
  void reset(Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

struct BatchNorm2d {
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels);

  Tensor forward(const Tensor& x, bool training);
  void reset();
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out);

  Tensor gamma;
  Tensor beta;
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = Real(0.1);
};

struct Linear {
  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features);

  Tensor forward(const Tensor& x) const;
  void reset(Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

  Tensor weight;
  Tensor bias;
};

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
