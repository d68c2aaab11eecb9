#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "kaqa/params.hpp"
#include "kaqa/tensor.hpp"

namespace kaqa {

struct GradCheckEntry {
  std::string name;
  std::size_t coords_checked = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool all_passed() const;
  std::vector<std::string> failures() const;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // 0 checks every coordinate; otherwise an evenly spaced subset per parameter.
  std::size_t max_coords_per_param = 0;
};

// Compares backward() gradients of `loss_fn` against central differences for
// every parameter. Error per coordinate is |a - n| / max(1, |a| + |n|). The
// closure must be deterministic (no live dropout).
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ModelParams& params,
                           const GradCheckOptions& options = {});

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kaqa
