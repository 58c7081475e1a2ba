#include "ssd/models.hpp"

#include <stdexcept>

namespace ssd {
inline namespace SSD_PRECISION_NS {

std::vector<Tensor> Network::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::int64_t Network::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : named_parameters()) total += p.tensor.numel();
  return total;
}

void Network::check_input(const Tensor& batch) const {
  const auto in = input_shape();
  const Shape& s = batch.shape();
  if (s.size() != 4 || s[1] != in.channels || s[2] != in.height || s[3] != in.width) {
    throw ShapeError("network: expected [B," + std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                     std::to_string(in.width) + "] input, got " + to_string(s));
  }
}

// --- ConvNet3 ---------------------------------------------------------------

ConvNet3::ConvNet3(ConvNetConfig config, std::uint64_t seed) : config_(config) {
  if (config_.input.height < 8 || config_.input.width < 8) {
    throw std::invalid_argument("ConvNet3: input must be at least 8x8 for three 2x pools");
  }
  std::int64_t channels = config_.input.channels;
  std::int64_t h = config_.input.height;
  std::int64_t w = config_.input.width;
  for (int i = 0; i < kDepth; ++i) {
    convs_.emplace_back(channels, config_.width, 3, 1, 1, false);
    norms_.emplace_back(config_.width);
    channels = config_.width;
    h /= 2;
    w /= 2;
  }
  feature_dim_ = config_.width * h * w;
  classifier_ = Linear(feature_dim_, config_.num_classes);
  reinitialize(seed);
}

Tensor ConvNet3::features(const Tensor& batch, bool training) {
  check_input(batch);
  Tensor x = batch;
  for (int i = 0; i < kDepth; ++i) {
    x = avg_pool2d(relu(norms_[i].forward(convs_[i].forward(x), training)), 2);
  }
  return flatten(x);
}

Tensor ConvNet3::classify(const Tensor& features) const { return classifier_.forward(features); }

std::vector<NamedTensor> ConvNet3::named_parameters() const {
  std::vector<NamedTensor> out;
  for (int i = 0; i < kDepth; ++i) {
    const std::string prefix = "block" + std::to_string(i);
    convs_[i].collect(prefix + ".conv", out);
    norms_[i].collect(prefix + ".norm", out);
  }
  classifier_.collect("classifier", out);
  return out;
}

std::vector<NamedBuffer> ConvNet3::named_buffers() {
  std::vector<NamedBuffer> out;
  for (int i = 0; i < kDepth; ++i) norms_[i].collect_buffers("block" + std::to_string(i) + ".norm", out);
  return out;
}

void ConvNet3::reinitialize(std::uint64_t seed) {
  Rng rng(seed);
  for (int i = 0; i < kDepth; ++i) {
    convs_[i].reset(rng);
    norms_[i].reset();
  }
  classifier_.reset(rng);
}

// --- ReducedResNet18 --------------------------------------------------------

ReducedResNet18::ReducedResNet18(ResNetConfig config, std::uint64_t seed) : config_(config) {
  const std::int64_t nf = config_.base_width;
  stem_ = Conv2d(config_.input.channels, nf, 3, 1, 1, false);
  stem_bn_ = BatchNorm2d(nf);
  std::int64_t in = nf;
  const std::int64_t widths[4] = {nf, 2 * nf, 4 * nf, 8 * nf};
  const std::int64_t strides[4] = {1, 2, 2, 2};
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < 2; ++b) {
      const std::int64_t stride = b == 0 ? strides[stage] : 1;
      const std::int64_t out = widths[stage];
      BasicBlock block;
      block.conv1 = Conv2d(in, out, 3, stride, 1, false);
      block.bn1 = BatchNorm2d(out);
      block.conv2 = Conv2d(out, out, 3, 1, 1, false);
      block.bn2 = BatchNorm2d(out);
      block.projection = stride != 1 || in != out;
      if (block.projection) {
        block.shortcut = Conv2d(in, out, 1, stride, 0, false);
        block.shortcut_bn = BatchNorm2d(out);
      }
      blocks_.push_back(std::move(block));
      in = out;
    }
  }
  classifier_ = Linear(8 * nf, config_.num_classes);
  reinitialize(seed);
}

Tensor ReducedResNet18::features(const Tensor& batch, bool training) {
  check_input(batch);
  Tensor x = relu(stem_bn_.forward(stem_.forward(batch), training));
  for (auto& block : blocks_) {
    Tensor y = relu(block.bn1.forward(block.conv1.forward(x), training));
    y = block.bn2.forward(block.conv2.forward(y), training);
    Tensor skip = block.projection ? block.shortcut_bn.forward(block.shortcut.forward(x), training) : x;
    x = relu(add(y, skip));
  }
  return mean(x, {2, 3}, false);
}

Tensor ReducedResNet18::classify(const Tensor& features) const { return classifier_.forward(features); }

std::vector<NamedTensor> ReducedResNet18::named_parameters() const {
  std::vector<NamedTensor> out;
  stem_.collect("stem.conv", out);
  stem_bn_.collect("stem.norm", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& block = blocks_[i];
    const std::string prefix = "block" + std::to_string(i);
    block.conv1.collect(prefix + ".conv1", out);
    block.bn1.collect(prefix + ".norm1", out);
    block.conv2.collect(prefix + ".conv2", out);
    block.bn2.collect(prefix + ".norm2", out);
    if (block.projection) {
      block.shortcut.collect(prefix + ".shortcut", out);
      block.shortcut_bn.collect(prefix + ".shortcut_norm", out);
    }
  }
  classifier_.collect("classifier", out);
  return out;
}

std::vector<NamedBuffer> ReducedResNet18::named_buffers() {
  std::vector<NamedBuffer> out;
  stem_bn_.collect_buffers("stem.norm", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& block = blocks_[i];
    const std::string prefix = "block" + std::to_string(i);
    block.bn1.collect_buffers(prefix + ".norm1", out);
    block.bn2.collect_buffers(prefix + ".norm2", out);
    if (block.projection) block.shortcut_bn.collect_buffers(prefix + ".shortcut_norm", out);
  }
  return out;
}

void ReducedResNet18::reinitialize(std::uint64_t seed) {
  Rng rng(seed);
  stem_.reset(rng);
  stem_bn_.reset();
  for (auto& block : blocks_) {
    block.conv1.reset(rng);
    block.bn1.reset();
    block.conv2.reset(rng);
    block.bn2.reset();
    if (block.projection) {
      block.shortcut.reset(rng);
      block.shortcut_bn.reset();
    }
  }
  classifier_.reset(rng);
}

// --- ProjectionHead ---------------------------------------------------------

ProjectionHead::ProjectionHead(std::int64_t in_features, std::uint64_t seed)
    : first_(in_features, in_features), second_(in_features, kOutputWidth) {
  reinitialize(seed);
}

Tensor ProjectionHead::forward(const Tensor& features) const { return second_.forward(relu(first_.forward(features))); }

std::vector<NamedTensor> ProjectionHead::named_parameters() const {
  std::vector<NamedTensor> out;
  first_.collect("head.fc1", out);
  second_.collect("head.fc2", out);
  return out;
}

void ProjectionHead::reinitialize(std::uint64_t seed) {
  Rng rng(seed);
  first_.reset(rng);
  second_.reset(rng);
}

std::unique_ptr<Network> make_network(Backbone kind, ImageShape input, std::int64_t width, std::int64_t num_classes,
                                      std::uint64_t seed) {
  switch (kind) {
    case Backbone::ConvNet3:
      return std::make_unique<ConvNet3>(ConvNetConfig{input, width, num_classes}, seed);
    case Backbone::ReducedResNet18:
      return std::make_unique<ReducedResNet18>(ResNetConfig{input, width, num_classes}, seed);
  }
  throw std::invalid_argument("make_network: unknown backbone");
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
