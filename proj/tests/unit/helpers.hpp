#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include <random>

#include "ssd/data.hpp"
#include "ssd/rng.hpp"
#include "ssd/tensor.hpp"

namespace ssd::test {

/// Example with constant pixels, handy for slot-content checks.
inline Example constant_example(ImageShape shape, Real value, int label, std::int64_t index = -1) {
  return Example{std::make_shared<const Pixels>(static_cast<std::size_t>(shape.numel()), value), label, index};
}

inline Example random_example(ImageShape shape, Rng& rng, int label, std::int64_t index = -1) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Pixels px(static_cast<std::size_t>(shape.numel()));
  for (auto& v : px) v = static_cast<Real>(u(rng));
  return Example{std::make_shared<const Pixels>(std::move(px)), label, index};
}

inline std::vector<std::vector<Real>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : params) out.push_back(p.to_vector());
  return out;
}

}  // namespace ssd::test
