#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hybridsep/tensor.h"

namespace testing_support {

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor index>[<element>] analytic vs numeric"
  int checked = 0;
};

// Central differences against reverse-mode gradients of a scalar loss.
// At most `max_per_tensor` evenly spaced entries of each tensor are probed.
GradcheckResult gradcheck(const std::function<hybridsep::Tensor()>& loss_fn,
                          const std::vector<hybridsep::Tensor>& wrt, double eps = 1e-4, int max_per_tensor = 24,
                          double floor = 1e-5);

}  // namespace testing_support
