#include "ssd/nn.hpp"

#include <cmath>

namespace ssd {
inline namespace SSD_PRECISION_NS {

std::vector<Real> kaiming_uniform(std::int64_t count, std::int64_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<Real> out(static_cast<std::size_t>(count));
  for (auto& v : out) v = static_cast<Real>(dist(rng));
  return out;
}

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel, std::int64_t stride_,
               std::int64_t padding_, bool with_bias)
    : weight(Tensor::zeros({out_channels, in_channels, kernel, kernel}, true)),
      stride(stride_),
      padding(padding_) {
  if (with_bias) bias = Tensor::zeros({out_channels}, true);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

void Conv2d::reset(Rng& rng) {
  const auto fan_in = weight.dim(1) * weight.dim(2) * weight.dim(3);
  weight.assign(kaiming_uniform(weight.numel(), fan_in, rng));
  if (bias.defined()) bias.assign(std::vector<Real>(static_cast<std::size_t>(bias.numel()), Real(0)));
}

void Conv2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

BatchNorm2d::BatchNorm2d(std::int64_t channels)
    : gamma(Tensor::full({channels}, Real(1), true)),
      beta(Tensor::zeros({channels}, true)),
      running_mean(static_cast<std::size_t>(channels), Real(0)),
      running_var(static_cast<std::size_t>(channels), Real(1)) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, beta, {running_mean, running_var, momentum}, training);
}

void BatchNorm2d::reset() {
  const auto c = static_cast<std::size_t>(gamma.numel());
  gamma.assign(std::vector<Real>(c, Real(1)));
  beta.assign(std::vector<Real>(c, Real(0)));
  running_mean.assign(c, Real(0));
  running_var.assign(c, Real(1));
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", gamma});
  out.push_back({prefix + ".bias", beta});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features)
    : weight(Tensor::zeros({out_features, in_features}, true)), bias(Tensor::zeros({out_features}, true)) {}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

void Linear::reset(Rng& rng) {
  weight.assign(kaiming_uniform(weight.numel(), weight.dim(1), rng));
  bias.assign(std::vector<Real>(static_cast<std::size_t>(bias.numel()), Real(0)));
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
