#include "oscar/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace oscar {

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss,
                                  std::vector<std::pair<std::string, Tensor>> inputs,
                                  const GradCheckOptions& options) {
  for (auto& [_, t] : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  loss().backward();

  GradCheckReport report;
  for (auto& [name, t] : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const std::size_t n = t.size();
    const std::size_t stride =
        options.max_per_tensor == 0 ? 1 : std::max<std::size_t>(1, n / options.max_per_tensor);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < n; i += stride) {
      const double x0 = data[i];
      data[i] = x0 + options.step;
      const double up = loss().item();
      data[i] = x0 - options.step;
      const double down = loss().item();
      data[i] = x0;
      const double numeric = (up - down) / (2.0 * options.step);
      const double abs_err = std::abs(numeric - analytic[i]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), options.floor});
      const double rel = abs_err / denom;
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      if (rel > report.max_relative_error || report.checked == 0) {
        report.max_relative_error = std::max(rel, report.max_relative_error);
        report.worst = name + "[" + std::to_string(i) + "]";
      }
      ++report.checked;
    }
  }
  report.passed = report.max_relative_error < options.tolerance;
  return report;
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss, ParameterStore& params,
                                  const GradCheckOptions& options) {
  std::vector<std::pair<std::string, Tensor>> inputs;
  for (auto& [name, t] : params.all()) inputs.emplace_back(name, t);
  return finite_diff_check(loss, std::move(inputs), options);
}

}  // namespace oscar
