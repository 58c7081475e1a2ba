#include "ssd/summarizer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "ssd/autograd.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

int single_class(std::span<const int> a, std::span<const int> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("gradient_match_loss: both image sets must be nonempty");
  const int c = a.front();
  auto same = [c](int y) { return y == c; };
  if (!std::all_of(a.begin(), a.end(), same) || !std::all_of(b.begin(), b.end(), same)) {
    throw std::invalid_argument("gradient_match_loss: label mismatch, all images must share one class");
  }
  return c;
}

bool has_rows(const Tensor& t) { return t.defined() && t.rank() > 0 && t.dim(0) > 0; }

// Restores normalization running statistics on scope exit, so matching passes
// (which use batch statistics) leave them as the model updates set them.
class BufferSnapshot {
 public:
  explicit BufferSnapshot(Network& net) : buffers_(net.named_buffers()) {
    for (const auto& b : buffers_) saved_.push_back(*b.values);
  }
  ~BufferSnapshot() {
    for (std::size_t i = 0; i < buffers_.size(); ++i) *buffers_[i].values = saved_[i];
  }
  BufferSnapshot(const BufferSnapshot&) = delete;
  BufferSnapshot& operator=(const BufferSnapshot&) = delete;

 private:
  std::vector<NamedBuffer> buffers_;
  std::vector<std::vector<Real>> saved_;
};

}  // namespace

Tensor gradient_match_loss(const LossFn& loss, std::span<const Tensor> params, const Tensor& syn,
                           std::span<const int> syn_labels, const Tensor& real, std::span<const int> real_labels,
                           bool create_graph) {
  single_class(syn_labels, real_labels);
  if (!has_rows(syn) || !has_rows(real)) throw std::invalid_argument("gradient_match_loss: empty image batch");
  if (syn.dim(0) != static_cast<std::int64_t>(syn_labels.size()) ||
      real.dim(0) != static_cast<std::int64_t>(real_labels.size())) {
    throw ShapeError("gradient_match_loss: label count does not match batch size");
  }
  std::vector<Tensor> g_real;
  {
    GradModeGuard on(true);
    g_real = grad(loss(real, real_labels), params, {.create_graph = false, .allow_unused = true});
  }
  std::vector<Tensor> g_syn;
  {
    GradModeGuard on(true);
    g_syn = grad(loss(syn, syn_labels), params, {.create_graph = create_graph, .allow_unused = true});
  }
  Tensor total;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor d = l2_norm(sub(g_syn[i], g_real[i]));
    total = total.defined() ? add(total, d) : d;
  }
  return total.defined() ? total : Tensor::scalar(0);
}

Tensor relationship(const FeatureFn& features, const Tensor& x, const Tensor& anchors) {
  if (!has_rows(x)) throw std::invalid_argument("relationship: empty image set");
  if (!has_rows(anchors)) return Tensor::zeros({0});
  const Tensor centre = mean(features(x), {0}, true);  // [1, F]
  Tensor anchor_features;
  {
    NoGradGuard off;
    anchor_features = features(anchors).detach();
  }
  return norm_rows(sub(anchor_features, centre));
}

Tensor relationship_loss(const FeatureFn& features, const Tensor& syn, const Tensor& real, const Tensor& anchors) {
  if (!has_rows(anchors)) {
    if (!has_rows(syn) || !has_rows(real)) throw std::invalid_argument("relationship: empty image set");
    return Tensor::scalar(0);
  }
  const Tensor rho_syn = relationship(features, syn, anchors);
  Tensor rho_real;
  {
    NoGradGuard off;
    rho_real = relationship(features, real, anchors).detach();
  }
  return l2_norm(sub(rho_syn, rho_real));
}

double pixel_learning_rate(int k) {
  if (k < 1) throw std::invalid_argument("pixel_learning_rate: images per class must be >= 1");
  // log(lr) linear in k on [1, 5] and on [5, inf) (the latter through 10).
  const double lo_k = k <= 5 ? 1.0 : 5.0;
  const double hi_k = k <= 5 ? 5.0 : 10.0;
  const double lo = k <= 5 ? 2e-4 : 1e-3;
  const double hi = k <= 5 ? 1e-3 : 4e-3;
  const double t = (static_cast<double>(k) - lo_k) / (hi_k - lo_k);
  return std::exp(std::log(lo) + t * (std::log(hi) - std::log(lo)));
}

Summarizer::Summarizer(SummarizerConfig config, ImageShape shape, int num_classes, int images_per_class,
                       std::uint64_t seed)
    : config_(config),
      shape_(shape),
      num_classes_(num_classes),
      per_class_(images_per_class),
      seed_(seed),
      model_opt_(static_cast<Real>(config.model_lr), static_cast<Real>(config.model_momentum)),
      pixel_lr_(config.pixel_lr > 0 ? config.pixel_lr : pixel_learning_rate(images_per_class)),
      slot_rng_(SeedSplitter(seed).stream("slot_selection")) {
  if (config_.interval < 1) throw std::invalid_argument("summarizer: interval must be >= 1");
  if (config_.gamma < 0) throw std::invalid_argument("summarizer: gamma must be >= 0");
  network_ = std::make_unique<ConvNet3>(ConvNetConfig{shape, config_.width, num_classes},
                                        SeedSplitter(seed).derive("summarizer_init"));
}

LossFn Summarizer::loss_fn() {
  return [this](const Tensor& images, std::span<const int> labels) {
    return cross_entropy(network_->logits(images, true), labels);
  };
}

// Relationship features use the running statistics, so a lone synthetic image,
// the real batch and the anchors are all normalized alike.
FeatureFn Summarizer::feature_fn() {
  return [this](const Tensor& images) { return network_->features(images, false); };
}

bool Summarizer::on_new_classes(std::span<const Example> batch) {
  std::set<int> present;
  for (const auto& e : batch) present.insert(e.label);
  bool any_new = false;
  bool any_seen = false;
  for (int c : present) (seen_.contains(c) ? any_seen : any_new) = true;
  seen_.insert(present.begin(), present.end());
  if (!any_new || any_seen) return false;
  std::uint64_t h = 0x51ed270b27d1e3a5ULL;
  for (int c : seen_) h = mix64(h ^ static_cast<std::uint64_t>(c));
  network_->reinitialize(SeedSplitter(seed_).derive("summarizer_init", h));
  model_opt_.reset();
  ++reinit_count_;
  return true;
}

void Summarizer::maybe_summarize(MemoryBuffer& memory, RecentQueue& queue, std::span<const Example> batch) {
  ++iteration_;
  last_seeds_.clear();
  for (const auto& e : batch) queue.push(e);
  on_new_classes(batch);

  std::set<int> present;
  for (const auto& e : batch) present.insert(e.label);
  const bool gate = iteration_ % config_.interval == 0;
  for (int c : present) {
    if (!memory.initialized(c)) {
      std::vector<Example> first;
      for (const auto& e : batch) {
        if (e.label == c) first.push_back(e);
      }
      memory.init_class_slots(c, first, slot_rng_);
      const std::size_t used = std::min(first.size(), static_cast<std::size_t>(memory.per_class_budget()));
      for (std::size_t i = 0; i < used; ++i) last_seeds_.push_back(first[i].stream_index);
    } else if (gate && config_.summarize) {
      summarize_step(memory, queue, c);
    }
  }
}

Tensor Summarizer::summarize_loss(const Tensor& syn, int c, const Tensor& real, const Tensor& anchors,
                                  double* grad_part, double* relation_part) {
  const std::vector<int> syn_labels(static_cast<std::size_t>(syn.dim(0)), c);
  const std::vector<int> real_labels(static_cast<std::size_t>(real.dim(0)), c);
  // Matched groups are the conv and linear weights; biases and normalization
  // scales are left out.
  std::vector<Tensor> params;
  for (const auto& p : network_->named_parameters()) {
    if (p.tensor.rank() >= 2) params.push_back(p.tensor);
  }
  Tensor lg;
  {
    const BufferSnapshot keep_stats(*network_);
    lg = gradient_match_loss(loss_fn(), params, syn, syn_labels, real, real_labels, config_.create_graph);
  }
  if (!lg.requires_grad()) {
    throw AutogradError("summarizer: gradient-matching loss has no path to the synthetic pixels "
                        "(second-order gradients are disabled)");
  }
  if (grad_part) *grad_part = static_cast<double>(lg.item());
  if (!config_.past_assist || config_.gamma == 0) {
    if (relation_part) *relation_part = 0;
    return lg;
  }
  Tensor lr = relationship_loss(feature_fn(), syn, real, anchors);
  if (relation_part) *relation_part = static_cast<double>(lr.item());
  return add(lg, scale(lr, static_cast<Real>(config_.gamma)));
}

bool Summarizer::summarize_step(MemoryBuffer& memory, const RecentQueue& queue, int c) {
  const auto real_examples = queue.recent_of(c);
  if (real_examples.empty()) {
    std::clog << "summarizer: no queued images of class " << c << ", skipping\n";
    return false;
  }
  const auto slots = memory.summarized_of(c);
  const auto syn_examples = memory.examples_at(slots);
  const auto anchor_slots = memory.other_summarized(c);
  const auto anchor_examples = memory.examples_at(anchor_slots);

  Tensor syn = stack_images(syn_examples, shape_, true);
  const Tensor real = stack_images(real_examples, shape_);
  const Tensor anchors = anchor_examples.empty() ? Tensor() : stack_images(anchor_examples, shape_);

  double lg = 0, lr = 0;
  Tensor ls;
  {
    GradModeGuard on(true);
    ls = summarize_loss(syn, c, real, anchors, &lg, &lr);
  }
  const Tensor pixel_grad = grad(ls, std::vector<Tensor>{syn}, {.create_graph = false, .allow_unused = true})[0];

  auto [it, inserted] = pixel_opts_.try_emplace(c, static_cast<Real>(pixel_lr_), static_cast<Real>(config_.pixel_momentum));
  std::vector<Tensor> p{syn};
  std::vector<Tensor> g{pixel_grad};
  it->second.step(p, g);

  const auto values = syn.data();
  const auto per = static_cast<std::size_t>(shape_.numel());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    Pixels px(values.begin() + static_cast<std::ptrdiff_t>(i * per),
              values.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    for (auto& v : px) v = std::clamp(v, Real(0), Real(1));
    memory.write_summarized(slots[i], std::move(px));
  }
  trace_.push_back({iteration_, c, lg, lr, static_cast<double>(ls.item())});
  return true;
}

void Summarizer::update_model(std::span<const Example> batch, std::span<const Example> originals) {
  if (batch.empty()) throw std::invalid_argument("summarizer: empty stream batch");
  auto params = network_->parameters();
  std::vector<Tensor> grads;
  {
    GradModeGuard on(true);
    const auto labels = labels_of(batch);
    Tensor loss = cross_entropy(network_->logits(stack_images(batch, shape_), true), labels);
    if (config_.past_assist && !originals.empty()) {
      const auto past_labels = labels_of(originals);
      loss = add(loss, cross_entropy(network_->logits(stack_images(originals, shape_), true), past_labels));
    }
    grads = grad(loss, params, {.create_graph = false, .allow_unused = true});
  }
  model_opt_.step(params, grads);
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
