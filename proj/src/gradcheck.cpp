#include "kaqa/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace kaqa {

bool GradCheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (!e.passed) out.push_back(e.name);
  return out;
}

namespace {

double eval_loss(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  const double v = loss_fn().item();
  if (!std::isfinite(v)) throw NonFiniteLoss("grad_check: loss became non-finite under perturbation");
  return v;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, ModelParams& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  const Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NonFiniteLoss("grad_check: loss is non-finite");
  backward(loss);
  params.apply_grad_hooks();

  GradCheckReport report;
  report.tolerance = options.tolerance;
  for (auto& [name, param] : params.entries()) {
    GradCheckEntry entry;
    entry.name = name;
    const std::vector<double> analytic = param.has_grad()
                                             ? std::vector<double>(param.grad().begin(), param.grad().end())
                                             : std::vector<double>(param.size(), 0.0);
    auto values = param.mutable_data();
    const std::size_t n = values.size();
    const std::size_t stride =
        (options.max_coords_per_param == 0 || n <= options.max_coords_per_param)
            ? 1
            : (n + options.max_coords_per_param - 1) / options.max_coords_per_param;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double plus = eval_loss(loss_fn);
      values[i] = saved - options.step;
      const double minus = eval_loss(loss_fn);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]) + std::abs(numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, err);
      ++entry.coords_checked;
    }
    entry.passed = entry.max_rel_error < options.tolerance;
    report.entries.push_back(entry);
  }
  params.zero_grad();
  return report;
}

}  // namespace kaqa
