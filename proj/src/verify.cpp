#include "ssd/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "ssd/autograd.hpp"
#include "ssd/data.hpp"
#include "ssd/gradcheck.hpp"
#include "ssd/memory.hpp"
#include "ssd/models.hpp"
#include "ssd/ops.hpp"
#include "ssd/summarizer.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<Real> uniform_values(Rng& rng, std::int64_t n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Real> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<Real>(u(rng));
  return v;
}

Tensor uniform(Rng& rng, const Shape& shape, double lo = -1, double hi = 1) {
  return Tensor::from(shape, uniform_values(rng, numel(shape), lo, hi));
}

// Magnitude in [lo, hi] with a random sign: keeps inputs off kinks and poles.
Tensor away_from_zero(Rng& rng, const Shape& shape, double lo, double hi) {
  auto v = uniform_values(rng, numel(shape), lo, hi);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : v) x = flip(rng) ? -x : x;
  return Tensor::from(shape, std::move(v));
}

// Random linear functional of a tensor output; turns any op into a scalar.
std::function<Tensor(const Tensor&)> probe(Rng& rng, const Shape& shape) {
  const Tensor w = uniform(rng, shape);
  return [w](const Tensor& out) { return sum(mul(out, w)); };
}

struct Case {
  ScalarFunction f;
  std::vector<Tensor> inputs;
};

struct OpSpec {
  std::string name;
  double tolerance;
  std::function<Case(Rng&, int instance)> make;
};

Case unary(Rng& rng, const Shape& shape, Tensor x, const std::function<Tensor(const Tensor&)>& op) {
  auto p = probe(rng, shape);
  return {[op, p](const std::vector<Tensor>& in) { return p(op(in[0])); }, {std::move(x)}};
}

Case binary_case(Rng& rng, const Shape& out_shape, Tensor a, Tensor b,
                 const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
  auto p = probe(rng, out_shape);
  return {[op, p](const std::vector<Tensor>& in) { return p(op(in[0], in[1])); }, {std::move(a), std::move(b)}};
}

std::vector<int> random_labels(Rng& rng, std::size_t n, int classes) {
  std::vector<int> out(n);
  for (auto& y : out) y = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(classes)));
  return out;
}

std::vector<OpSpec> op_specs() {
  constexpr double kTol = 1e-5;
  constexpr double kSingularTol = 1e-3;
  std::vector<OpSpec> specs;
  specs.push_back({"add", kTol, [](Rng& r, int) {
                     return binary_case(r, {2, 3}, uniform(r, {2, 3}), uniform(r, {3}), [](auto& a, auto& b) { return add(a, b); });
                   }});
  specs.push_back({"sub", kTol, [](Rng& r, int) {
                     return binary_case(r, {2, 4}, uniform(r, {2, 1}), uniform(r, {1, 4}), [](auto& a, auto& b) { return sub(a, b); });
                   }});
  specs.push_back({"mul", kTol, [](Rng& r, int) {
                     return binary_case(r, {3, 2, 2}, uniform(r, {3, 2, 2}), uniform(r, {2, 1}), [](auto& a, auto& b) { return mul(a, b); });
                   }});
  specs.push_back({"div", kTol, [](Rng& r, int) {
                     return binary_case(r, {2, 3}, uniform(r, {2, 3}), away_from_zero(r, {2, 3}, 0.5, 2),
                                        [](auto& a, auto& b) { return div(a, b); });
                   }});
  specs.push_back({"div_safe", kTol, [](Rng& r, int) {
                     return binary_case(r, {2, 3}, uniform(r, {2, 3}), away_from_zero(r, {3}, 0.5, 2),
                                        [](auto& a, auto& b) { return div_safe(a, b); });
                   }});
  specs.push_back({"neg", kTol, [](Rng& r, int) { return unary(r, {5}, uniform(r, {5}), [](auto& x) { return neg(x); }); }});
  specs.push_back({"scale", kTol, [](Rng& r, int) {
                     return unary(r, {2, 3}, uniform(r, {2, 3}), [](auto& x) { return scale(x, Real(-1.7)); });
                   }});
  specs.push_back({"add_scalar", kTol, [](Rng& r, int) {
                     return unary(r, {4}, uniform(r, {4}), [](auto& x) { return add_scalar(x, Real(0.3)); });
                   }});
  specs.push_back({"exp", kTol, [](Rng& r, int) { return unary(r, {2, 3}, uniform(r, {2, 3}), [](auto& x) { return exp(x); }); }});
  specs.push_back({"log", kTol, [](Rng& r, int) {
                     return unary(r, {2, 3}, uniform(r, {2, 3}, 0.5, 2), [](auto& x) { return log(x); });
                   }});
  specs.push_back({"sqrt", kTol, [](Rng& r, int) {
                     return unary(r, {2, 3}, uniform(r, {2, 3}, 0.5, 2), [](auto& x) { return sqrt(x); });
                   }});
  specs.push_back({"relu", kTol, [](Rng& r, int) {
                     return unary(r, {3, 3}, away_from_zero(r, {3, 3}, 0.05, 1), [](auto& x) { return relu(x); });
                   }});
  specs.push_back({"square", kTol, [](Rng& r, int) { return unary(r, {6}, uniform(r, {6}), [](auto& x) { return square(x); }); }});
  specs.push_back({"clamp", kTol, [](Rng& r, int) {
                     // Bounds at +-0.5, values kept 0.05 away from them.
                     auto v = uniform_values(r, 8, 0, 1);
                     for (auto& x : v) x = x < Real(0.5) ? Real(-1) + x * Real(0.9) : Real(-0.45) + (x - Real(0.5)) * Real(1.8);
                     return unary(r, {8}, Tensor::from({8}, v), [](auto& x) { return clamp(x, Real(-0.5), Real(0.5)); });
                   }});
  specs.push_back({"sum", kTol, [](Rng& r, int) {
                     Tensor x = uniform(r, {2, 3});
                     return Case{[](const std::vector<Tensor>& in) { return sum(square(in[0])); }, {x}};
                   }});
  specs.push_back({"sum_axes", kTol, [](Rng& r, int i) {
                     const bool keep = i % 2 == 0;
                     const Shape out = keep ? Shape{1, 3, 1} : Shape{3};
                     return unary(r, out, uniform(r, {2, 3, 4}), [keep](auto& x) { return sum(x, {0, 2}, keep); });
                   }});
  specs.push_back({"mean", kTol, [](Rng& r, int) {
                     Tensor x = uniform(r, {3, 2});
                     return Case{[](const std::vector<Tensor>& in) { return mean(square(in[0])); }, {x}};
                   }});
  specs.push_back({"mean_axes", kTol, [](Rng& r, int i) {
                     const bool keep = i % 2 == 1;
                     const Shape out = keep ? Shape{2, 1, 4} : Shape{2, 4};
                     return unary(r, out, uniform(r, {2, 3, 4}), [keep](auto& x) { return mean(x, {1}, keep); });
                   }});
  specs.push_back({"sum_to", kTol, [](Rng& r, int) {
                     return unary(r, {1, 3}, uniform(r, {4, 3}), [](auto& x) { return sum_to(x, {1, 3}); });
                   }});
  specs.push_back({"broadcast_to", kTol, [](Rng& r, int) {
                     return unary(r, {2, 3, 4}, uniform(r, {3, 1}), [](auto& x) { return broadcast_to(x, {2, 3, 4}); });
                   }});
  specs.push_back({"reshape", kTol, [](Rng& r, int) {
                     return unary(r, {3, 4}, uniform(r, {2, 6}), [](auto& x) { return reshape(x, {3, 4}); });
                   }});
  specs.push_back({"permute", kTol, [](Rng& r, int) {
                     return unary(r, {4, 2, 3}, uniform(r, {2, 3, 4}), [](auto& x) { return permute(x, {2, 0, 1}); });
                   }});
  specs.push_back({"transpose", kTol, [](Rng& r, int) {
                     return unary(r, {4, 3}, uniform(r, {3, 4}), [](auto& x) { return transpose(x); });
                   }});
  specs.push_back({"matmul", kTol, [](Rng& r, int i) {
                     const bool ta = i % 2 == 1;
                     const bool tb = (i / 2) % 2 == 1;
                     Tensor a = uniform(r, ta ? Shape{4, 3} : Shape{3, 4});
                     Tensor b = uniform(r, tb ? Shape{2, 4} : Shape{4, 2});
                     return binary_case(r, {3, 2}, a, b, [ta, tb](auto& x, auto& y) { return matmul(x, y, ta, tb); });
                   }});
  specs.push_back({"im2col", kTol, [](Rng& r, int) {
                     return unary(r, {2 * 9, 2 * 3 * 3}, uniform(r, {2, 2, 3, 3}), [](auto& x) { return im2col(x, 3, 1, 1); });
                   }});
  specs.push_back({"col2im", kTol, [](Rng& r, int) {
                     return unary(r, {1, 2, 4, 4}, uniform(r, {2 * 4, 4}),
                                  [](auto& x) { return col2im(x, {1, 2, 4, 4}, 2, 2, 0); });
                   }});
  specs.push_back({"conv2d", kTol, [](Rng& r, int i) {
                     const std::int64_t stride = i % 2 == 0 ? 1 : 2;
                     const std::int64_t out = stride == 1 ? 4 : 2;
                     Tensor x = uniform(r, {2, 2, 4, 4});
                     Tensor w = uniform(r, {3, 2, 3, 3});
                     Tensor b = uniform(r, {3});
                     auto p = probe(r, {2, 3, out, out});
                     return Case{[p, stride](const std::vector<Tensor>& in) { return p(conv2d(in[0], in[1], in[2], stride, 1)); },
                                 {x, w, b}};
                   }});
  specs.push_back({"avg_pool2d", kTol, [](Rng& r, int) {
                     return unary(r, {2, 2, 2, 2}, uniform(r, {2, 2, 4, 4}), [](auto& x) { return avg_pool2d(x, 2); });
                   }});
  specs.push_back({"avg_pool2d_adjoint", kTol, [](Rng& r, int) {
                     return unary(r, {1, 2, 4, 4}, uniform(r, {1, 2, 2, 2}),
                                  [](auto& x) { return avg_pool2d_adjoint(x, {1, 2, 4, 4}, 2); });
                   }});
  specs.push_back({"max_pool2d", kTol, [](Rng& r, int) {
                     return unary(r, {2, 1, 2, 2}, uniform(r, {2, 1, 4, 4}), [](auto& x) { return max_pool2d(x, 2); });
                   }});
  specs.push_back({"gather_flat", kTol, [](Rng& r, int) {
                     auto idx = std::make_shared<std::vector<std::int64_t>>();
                     for (int k = 0; k < 7; ++k) idx->push_back(static_cast<std::int64_t>(uniform_below(r, 6)));
                     IndexList list = idx;
                     return unary(r, {7}, uniform(r, {2, 3}), [list](auto& x) { return gather_flat(x, list, {7}); });
                   }});
  specs.push_back({"scatter_add_flat", kTol, [](Rng& r, int) {
                     auto idx = std::make_shared<std::vector<std::int64_t>>();
                     for (int k = 0; k < 7; ++k) idx->push_back(static_cast<std::int64_t>(uniform_below(r, 4)));
                     IndexList list = idx;
                     return unary(r, {4}, uniform(r, {7}), [list](auto& x) { return scatter_add_flat(x, list, {4}); });
                   }});
  specs.push_back({"norm_rows", kTol, [](Rng& r, int) {
                     return unary(r, {3}, away_from_zero(r, {3, 4}, 0.1, 1), [](auto& x) { return norm_rows(x); });
                   }});
  specs.push_back({"l2_norm", kTol, [](Rng& r, int) {
                     Tensor x = away_from_zero(r, {2, 3}, 0.1, 1);
                     return Case{[](const std::vector<Tensor>& in) { return l2_norm(in[0]); }, {x}};
                   }});
  specs.push_back({"normalize_rows", kTol, [](Rng& r, int) {
                     return unary(r, {3, 4}, away_from_zero(r, {3, 4}, 0.1, 1), [](auto& x) { return normalize_rows(x); });
                   }});
  auto batch_norm_case = [](Rng& r, bool training, double spread) {
    auto rm = std::make_shared<std::vector<Real>>(uniform_values(r, 2, -0.5, 0.5));
    auto rv = std::make_shared<std::vector<Real>>(uniform_values(r, 2, 0.5, 2));
    Tensor x = add_scalar(scale(uniform(r, {3, 2, 2, 2}), static_cast<Real>(spread)), Real(0.2)).detach();
    Tensor g = uniform(r, {2}, 0.5, 1.5);
    Tensor b = uniform(r, {2});
    auto p = probe(r, {3, 2, 2, 2});
    return Case{[rm, rv, p, training](const std::vector<Tensor>& in) {
                  return p(batch_norm(in[0], in[1], in[2], BatchNormState{*rm, *rv, Real(0.1)}, training));
                },
                {x, g, b}};
  };
  specs.push_back({"batch_norm", kTol, [batch_norm_case](Rng& r, int) { return batch_norm_case(r, true, 1.0); }});
  specs.push_back({"batch_norm_eval", kTol, [batch_norm_case](Rng& r, int) { return batch_norm_case(r, false, 1.0); }});
  // Variance comparable to eps: the normalization singularity.
  specs.push_back({"batch_norm_low_variance", kSingularTol,
                   [batch_norm_case](Rng& r, int) { return batch_norm_case(r, true, 3e-3); }});
  specs.push_back({"linear", kTol, [](Rng& r, int) {
                     Tensor x = uniform(r, {3, 4});
                     Tensor w = uniform(r, {2, 4});
                     Tensor b = uniform(r, {2});
                     auto p = probe(r, {3, 2});
                     return Case{[p](const std::vector<Tensor>& in) { return p(linear(in[0], in[1], in[2])); }, {x, w, b}};
                   }});
  specs.push_back({"cross_entropy", kTol, [](Rng& r, int) {
                     Tensor logits = uniform(r, {4, 5}, -2, 2);
                     auto labels = random_labels(r, 4, 5);
                     return Case{[labels](const std::vector<Tensor>& in) { return cross_entropy(in[0], labels); }, {logits}};
                   }});
  specs.push_back({"supervised_contrastive", kTol, [](Rng& r, int) {
                     Tensor emb = away_from_zero(r, {6, 3}, 0.1, 1);
                     std::vector<int> labels{0, 0, 1, 1, 2, static_cast<int>(uniform_below(r, 3))};
                     return Case{[labels](const std::vector<Tensor>& in) {
                                   return supervised_contrastive(normalize_rows(in[0]), labels, Real(0.5));
                                 },
                                 {emb}};
                   }});
  return specs;
}

// Two-layer ConvNet (conv 3x3 + relu, then linear) over 4x4 inputs.
struct TinyConvNet {
  Tensor w1, b1, w2, b2;
  static constexpr int kClasses = 3;

  explicit TinyConvNet(Rng& rng) {
    w1 = uniform(rng, {4, 3, 3, 3}, -0.4, 0.4).set_requires_grad(true);
    b1 = uniform(rng, {4}, -0.1, 0.1).set_requires_grad(true);
    w2 = uniform(rng, {kClasses, 4 * 4 * 4}, -0.3, 0.3).set_requires_grad(true);
    b2 = uniform(rng, {kClasses}, -0.1, 0.1).set_requires_grad(true);
  }
  std::vector<Tensor> params() const { return {w1, b1, w2, b2}; }
  LossFn loss() const {
    return [w1 = w1, b1 = b1, w2 = w2, b2 = b2](const Tensor& x, std::span<const int> y) {
      return cross_entropy(linear(flatten(relu(conv2d(x, w1, b1, 1, 1))), w2, b2), y);
    };
  }
};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(3);
  out << v;
  return out.str();
}

}  // namespace

CheckOutcome verify_gradients(std::uint64_t seed, int instances, std::vector<OpCheck>* per_op) {
  const auto t0 = Clock::now();
  const SeedSplitter seeds(seed);
  CheckOutcome out{"gradients", true, "", 0};
  int ops = 0;
  std::string failed;
  double worst = 0;
  for (const auto& spec : op_specs()) {
    OpCheck oc{spec.name, instances, 0, 0, spec.tolerance};
    Rng rng = seeds.stream("gradcheck:" + spec.name);
    for (int i = 0; i < instances; ++i) {
      Case c = spec.make(rng, i);
      const auto r = check_gradients(c.f, c.inputs);
      oc.worst = std::max(oc.worst, r.max_error);
      if (!r.passed(spec.tolerance)) ++oc.failures;
    }
    ++ops;
    worst = std::max(worst, oc.worst / oc.tolerance);
    if (oc.failures > 0) {
      out.passed = false;
      failed += (failed.empty() ? "" : ", ") + spec.name + " (" + std::to_string(oc.failures) + " fail, worst " +
                fmt(oc.worst) + ")";
    }
    if (per_op) per_op->push_back(oc);
  }
  out.seconds = seconds_since(t0);
  out.detail = std::to_string(ops) + " ops x " + std::to_string(instances) + " instances, worst error/tolerance " +
               fmt(worst) + (failed.empty() ? "" : "; failing: " + failed);
  return out;
}

CheckOutcome verify_second_order(std::uint64_t seed, int instances) {
  const auto t0 = Clock::now();
  const SeedSplitter seeds(seed);
  CheckOutcome out{"second_order", true, "", 0};
  double worst = 0;
  int failures = 0;
  for (int i = 0; i < instances; ++i) {
    Rng rng = seeds.stream("second_order", static_cast<std::uint64_t>(i));
    const TinyConvNet net(rng);
    const int c = static_cast<int>(uniform_below(rng, TinyConvNet::kClasses));
    const Tensor syn = uniform(rng, {2, 3, 4, 4}, 0, 1);
    const Tensor real = uniform(rng, {5, 3, 4, 4}, 0, 1);
    const std::vector<int> syn_labels(2, c), real_labels(5, c);
    const auto params = net.params();
    const auto loss = net.loss();
    ScalarFunction f = [&](const std::vector<Tensor>& in) {
      return gradient_match_loss(loss, params, in[0], syn_labels, real, real_labels, true);
    };
    const auto r = check_gradients(f, {syn}, 1e-6);
    worst = std::max(worst, r.max_error);
    if (!r.passed(1e-4)) ++failures;
  }
  out.passed = failures == 0;
  out.seconds = seconds_since(t0);
  out.detail = std::to_string(instances) + " instances, worst relative error " + fmt(worst) + ", " +
               std::to_string(failures) + " above 1e-4";
  return out;
}

CheckOutcome verify_identity_collapse(std::uint64_t seed) {
  const auto t0 = Clock::now();
  CheckOutcome out{"identity_collapse", true, "", 0};
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.per_class = 8;
  spec.test_per_class = 0;
  spec.shape = ImageShape{3, 8, 8};
  spec.seed = seed;
  const Dataset d = generate_synthetic(spec);
  SummarizerConfig config;
  config.width = 8;
  Summarizer summarizer(config, spec.shape, spec.num_classes, 1, seed);

  std::vector<Example> own, anchors;
  for (const auto& e : d.train) {
    if (e.label == 1) own.push_back(e);
    else if (anchors.size() < 3 && e.label != 1) anchors.push_back(e);
  }
  std::vector<Example> shuffled = own;
  std::reverse(shuffled.begin(), shuffled.end());
  const Tensor x = stack_images(own, spec.shape, true);
  const Tensor xp = stack_images(shuffled, spec.shape);
  const Tensor a = stack_images(anchors, spec.shape);

  double lg_self = 0, lg_perm = 0, lr_perm = 0;
  {
    GradModeGuard on(true);
    const std::vector<int> labels(own.size(), 1);
    auto& net = summarizer.network();
    LossFn loss = [&net](const Tensor& images, std::span<const int> y) {
      return cross_entropy(net.logits(images, true), y);
    };
    lg_self = gradient_match_loss(loss, net.parameters(), x, labels, x.detach(), labels).item();
    summarizer.summarize_loss(x, 1, xp, a, &lg_perm, &lr_perm);
  }
  const double worst = std::max({std::abs(lg_self), std::abs(lg_perm), std::abs(lr_perm)});
  out.passed = worst < 1e-10;
  out.seconds = seconds_since(t0);
  out.detail = "L_g(X,X)=" + fmt(lg_self) + ", reordered X: L_g=" + fmt(lg_perm) + " L_r=" + fmt(lr_perm);
  return out;
}

CheckOutcome verify_reservoir(std::uint64_t seed, int trials, int stream, int capacity) {
  const auto t0 = Clock::now();
  const SeedSplitter seeds(seed);
  CheckOutcome out{"reservoir", true, "", 0};

  constexpr int kBins = 100;
  std::vector<double> counts(kBins, 0);
  const int per_bin = std::max(1, stream / kBins);
  for (int t = 0; t < trials; ++t) {
    Rng rng = seeds.stream("reservoir_trial", static_cast<std::uint64_t>(t));
    MemoryBuffer m = MemoryBuffer::reservoir_only(capacity);
    for (int i = 0; i < stream; ++i) m.reservoir_update(Example{nullptr, 0, i}, rng);
    for (const auto& s : m.slots()) {
      counts[static_cast<std::size_t>(std::min<std::int64_t>(s.example.stream_index / per_bin, kBins - 1))] += 1;
    }
  }
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  const double expected = total / kBins;
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(kBins - 1);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));

  // Summarized slots stay bit-identical under reservoir traffic.
  constexpr int kClasses = 5;
  MemoryBuffer dyn(capacity, kClasses);
  Rng rng = seeds.stream("reservoir_dynamic");
  std::vector<std::pair<const Pixels*, Pixels>> pinned;
  for (int i = 0; i < stream; ++i) {
    const int c = static_cast<int>(uniform_below(rng, kClasses));
    Example e{std::make_shared<const Pixels>(Pixels{static_cast<Real>(i), static_cast<Real>(c)}), c, i};
    if (!dyn.initialized(c)) {
      for (auto idx : dyn.init_class_slots(c, std::span<const Example>(&e, 1), rng)) {
        pinned.emplace_back(dyn.slot(idx).example.pixels.get(), *dyn.slot(idx).example.pixels);
      }
      continue;
    }
    dyn.reservoir_update(e, rng);
  }
  std::size_t intact = 0;
  for (const auto& s : dyn.slots()) {
    if (s.tag != SlotTag::Summarized) continue;
    for (const auto& [ptr, values] : pinned) {
      if (s.example.pixels.get() == ptr && s.example.pixels->size() == values.size() &&
          std::memcmp(s.example.pixels->data(), values.data(), values.size() * sizeof(Real)) == 0) {
        ++intact;
        break;
      }
    }
  }
  const bool stable = intact == pinned.size() && static_cast<std::int64_t>(intact) == dyn.count(SlotTag::Summarized);

  out.passed = p > 0.01 && stable;
  out.seconds = seconds_since(t0);
  out.detail = std::to_string(trials) + " trials, chi2=" + fmt(chi2) + " df=" + std::to_string(kBins - 1) +
               " p=" + fmt(p) + "; summarized slots intact " + std::to_string(intact) + "/" +
               std::to_string(pinned.size());
  return out;
}

CheckOutcome verify_summarization_descent(std::uint64_t first_seed, int seeds, int steps, int required) {
  const auto t0 = Clock::now();
  CheckOutcome out{"summarization_descent", true, "", 0};
  int wins = 0;
  std::ostringstream ratios;
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(s);
    SyntheticSpec spec;
    spec.num_classes = 4;
    spec.per_class = 80;
    spec.test_per_class = 0;
    spec.shape = ImageShape{3, 8, 8};
    spec.seed = seed;
    const Dataset d = generate_synthetic(spec);

    MemoryBuffer memory(20, spec.num_classes);
    SummarizerConfig config;
    config.width = 16;
    Summarizer summarizer(config, spec.shape, spec.num_classes, memory.per_class_budget(), seed);
    Rng rng = SeedSplitter(seed).stream("descent");

    std::vector<std::vector<Example>> by_class(static_cast<std::size_t>(spec.num_classes));
    for (const auto& e : d.train) by_class[static_cast<std::size_t>(e.label)].push_back(e);
    for (int c = 0; c < spec.num_classes; ++c) {
      memory.init_class_slots(c, std::span<const Example>(by_class[static_cast<std::size_t>(c)]).first(5), rng);
    }
    // A briefly trained network, then frozen.
    for (int i = 0; i < 20; ++i) {
      std::vector<Example> batch;
      for (int k = 0; k < 10; ++k) batch.push_back(d.train[uniform_below(rng, d.train.size())]);
      summarizer.update_model(batch, {});
    }
    RecentQueue queue;
    for (std::size_t i = 10; i < 10 + kDefaultQueueCapacity; ++i) queue.push(by_class[0][i]);
    for (int i = 0; i < steps; ++i) summarizer.summarize_step(memory, queue, 0);

    const auto& trace = summarizer.trace();
    const std::size_t n = std::min<std::size_t>(5, trace.size() / 2);
    double first = 0, last = 0;
    for (std::size_t i = 0; i < n; ++i) {
      first += trace[i].total_loss;
      last += trace[trace.size() - 1 - i].total_loss;
    }
    if (n > 0 && last < first) ++wins;
    ratios << (s ? " " : "") << fmt(n > 0 ? last / first : 0.0);
  }
  out.passed = wins >= required;
  out.seconds = seconds_since(t0);
  out.detail = std::to_string(wins) + "/" + std::to_string(seeds) + " seeds descend (need " +
               std::to_string(required) + "); last5/first5: " + ratios.str();
  return out;
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
