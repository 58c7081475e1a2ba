#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ssd/tensor.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

struct GradCheckResult {
  double max_error = 0;     // worst per-element error (see `element_error`)
  std::size_t input = 0;    // input holding the worst element
  std::size_t element = 0;  // flat index of the worst element
  double analytic = 0;
  double numeric = 0;
  bool passed(double tolerance) const { return max_error < tolerance; }
  std::string describe() const;
};

/// |a - n| / max(|a|, |n|, floor): relative error, with an absolute floor so
/// near-zero entries do not divide round-off by round-off.
double element_error(double analytic, double numeric, double floor);

using ScalarFunction = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of scalar `f` against central differences
/// with step `h`, for every element of every input.
GradCheckResult check_gradients(const ScalarFunction& f, const std::vector<Tensor>& inputs, double h = 1e-5,
                                double floor = 1e-3);

/// Central-difference gradient of `f` with respect to input `which`.
std::vector<double> numeric_gradient(const ScalarFunction& f, const std::vector<Tensor>& inputs, std::size_t which,
                                     double h = 1e-5);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
