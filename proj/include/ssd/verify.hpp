#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssd/real.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

/// One self-check with a verdict and a short human-readable detail.
struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

/// Per-operator finite-difference results behind `verify_gradients`.
struct OpCheck {
  std::string op;
  int instances = 0;
  int failures = 0;
  double worst = 0;  // worst element error over all instances
  double tolerance = 0;
};

/// Every differentiable op against central differences, `instances` random
/// inputs each. Meaningful in the 64-bit build only.
CheckOutcome verify_gradients(std::uint64_t seed, int instances = 100, std::vector<OpCheck>* per_op = nullptr);

/// d(gradient-matching loss)/d(synthetic pixels) on a two-layer ConvNet over
/// 4x4 inputs against central differences of the loss itself.
CheckOutcome verify_second_order(std::uint64_t seed, int instances = 20);

/// Matching a set against itself gives exactly zero for both losses.
CheckOutcome verify_identity_collapse(std::uint64_t seed);

/// Reservoir inclusion is uniform over the stream (chi-square over position
/// bins), and reservoir traffic never touches summarized slots.
CheckOutcome verify_reservoir(std::uint64_t seed, int trials = 1000, int stream = 10000, int capacity = 50);

/// With the network frozen and one fixed real batch, repeated summarize
/// steps lower the summarizing loss (last five vs first five) on most seeds.
CheckOutcome verify_summarization_descent(std::uint64_t first_seed, int seeds = 10, int steps = 50,
                                          int required = 9);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
