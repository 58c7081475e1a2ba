#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ssd/image_shape.hpp"
#include "ssd/nn.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

/// Common surface of the backbones: a feature extractor followed by a
/// linear classifier. `training` selects batch statistics (and updates the
/// running estimates) versus the running estimates.
class Network {
 public:
  virtual ~Network() = default;

  virtual Tensor features(const Tensor& batch, bool training) = 0;
  virtual Tensor classify(const Tensor& features) const = 0;
  Tensor logits(const Tensor& batch, bool training) { return classify(features(batch, training)); }

  virtual std::vector<NamedTensor> named_parameters() const = 0;
  virtual std::vector<NamedBuffer> named_buffers() { return {}; }
  /// Redraws every parameter in place from the init scheme. Any tape that
  /// recorded the old values becomes stale.
  virtual void reinitialize(std::uint64_t seed) = 0;

  virtual ImageShape input_shape() const = 0;
  virtual std::int64_t feature_dim() const = 0;
  virtual std::int64_t num_classes() const = 0;

  std::vector<Tensor> parameters() const;
  std::int64_t parameter_count() const;

 protected:
  void check_input(const Tensor& batch) const;
};

struct ConvNetConfig {
  ImageShape input;
  std::int64_t width = 128;
  std::int64_t num_classes = 100;
};

/// Three blocks of (3x3 conv, batch-stat normalization, relu, 2x2 average
/// pool) and a linear classifier over the flattened features.
class ConvNet3 final : public Network {
 public:
  explicit ConvNet3(ConvNetConfig config, std::uint64_t seed = 0);

  Tensor features(const Tensor& batch, bool training) override;
  Tensor classify(const Tensor& features) const override;
  std::vector<NamedTensor> named_parameters() const override;
  std::vector<NamedBuffer> named_buffers() override;
  void reinitialize(std::uint64_t seed) override;

  ImageShape input_shape() const override { return config_.input; }
  std::int64_t feature_dim() const override { return feature_dim_; }
  std::int64_t num_classes() const override { return config_.num_classes; }
  const ConvNetConfig& config() const { return config_; }

  static constexpr int kDepth = 3;

 private:
  ConvNetConfig config_;
  std::int64_t feature_dim_;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm2d> norms_;
  Linear classifier_;
};

struct ResNetConfig {
  ImageShape input;
  std::int64_t base_width = 20;
  std::int64_t num_classes = 100;
};

/// ResNet-18 topology (four stages of two basic blocks) with the first
/// stage narrowed to `base_width` channels and the usual doubling after it,
/// global average pooling and a linear classifier.
class ReducedResNet18 final : public Network {
 public:
  explicit ReducedResNet18(ResNetConfig config, std::uint64_t seed = 0);

  Tensor features(const Tensor& batch, bool training) override;
  Tensor classify(const Tensor& features) const override;
  std::vector<NamedTensor> named_parameters() const override;
  std::vector<NamedBuffer> named_buffers() override;
  void reinitialize(std::uint64_t seed) override;

  ImageShape input_shape() const override { return config_.input; }
  std::int64_t feature_dim() const override { return 8 * config_.base_width; }
  std::int64_t num_classes() const override { return config_.num_classes; }
  std::int64_t stem_channels() const { return stem_.weight.dim(0); }

 private:
  struct BasicBlock {
    Conv2d conv1, conv2, shortcut;  // shortcut undefined for identity blocks
    BatchNorm2d bn1, bn2, shortcut_bn;
    bool projection = false;
  };

  ResNetConfig config_;
  Conv2d stem_;
  BatchNorm2d stem_bn_;
  std::vector<BasicBlock> blocks_;
  Linear classifier_;
};

/// Two-layer perceptron (in -> in -> 128) for the contrastive objective.
class ProjectionHead {
 public:
  static constexpr std::int64_t kOutputWidth = 128;

  explicit ProjectionHead(std::int64_t in_features, std::uint64_t seed = 0);
  Tensor forward(const Tensor& features) const;
  std::vector<NamedTensor> named_parameters() const;
  void reinitialize(std::uint64_t seed);
  std::int64_t output_width() const { return second_.weight.dim(0); }

 private:
  Linear first_;
  Linear second_;
};

enum class Backbone { ConvNet3, ReducedResNet18 };

std::unique_ptr<Network> make_network(Backbone kind, ImageShape input, std::int64_t width, std::int64_t num_classes,
                                      std::uint64_t seed);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
