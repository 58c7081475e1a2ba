#include "ssd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ssd/autograd.hpp"

namespace ssd {
inline namespace SSD_PRECISION_NS {

std::string GradCheckResult::describe() const {
  std::ostringstream out;
  out << "max error " << max_error << " at input " << input << " element " << element << " (analytic " << analytic
      << ", numeric " << numeric << ")";
  return out.str();
}

double element_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

std::vector<double> numeric_gradient(const ScalarFunction& f, const std::vector<Tensor>& inputs, std::size_t which,
                                     double h) {
  NoGradGuard no_grad;
  std::vector<Tensor> probe;
  probe.reserve(inputs.size());
  for (const auto& t : inputs) probe.push_back(t.detach());
  auto values = probe[which].to_vector();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = static_cast<Real>(saved + h);
    probe[which].assign(values);
    const double plus = f(probe).item();
    values[i] = static_cast<Real>(saved - h);
    probe[which].assign(values);
    const double minus = f(probe).item();
    values[i] = saved;
    probe[which].assign(values);
    out[i] = (plus - minus) / (2 * h);
  }
  return out;
}

GradCheckResult check_gradients(const ScalarFunction& f, const std::vector<Tensor>& inputs, double h, double floor) {
  std::vector<Tensor> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(t.detach().set_requires_grad(true));
  const Tensor loss = f(vars);
  const auto analytic = grad(loss, vars, {.create_graph = false, .allow_unused = true});

  GradCheckResult result;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    const auto numeric = numeric_gradient(f, inputs, k, h);
    const auto a = analytic[k].data();
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double err = element_error(a[i], numeric[i], floor);
      if (err > result.max_error) {
        result = {err, k, i, static_cast<double>(a[i]), numeric[i]};
      }
    }
  }
  return result;
}

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
