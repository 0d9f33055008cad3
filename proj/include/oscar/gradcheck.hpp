#pragma once

#include "oscar/params.hpp"
#include "oscar/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace oscar {

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "name[index]" of the worst entry
  bool passed = false;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor for the relative error, so entries whose true
  /// derivative is ~0 are judged on absolute error.
  double floor = 1e-6;
  /// Check at most this many entries per tensor (evenly strided); 0 = all.
  std::size_t max_per_tensor = 0;
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences (f(x+h) - f(x-h)) / 2h for every entry of every named tensor.
/// `loss` must rebuild its graph from the tensors' current values.
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss,
                                  std::vector<std::pair<std::string, Tensor>> inputs,
                                  const GradCheckOptions& options = {});

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss, ParameterStore& params,
                                  const GradCheckOptions& options = {});

}  // namespace oscar
